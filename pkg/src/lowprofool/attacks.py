"""
LowProFool, binary DeepFool and FGSM against an :class:`~lowprofool.model.Mlp`.

Each attack has a batched form (``*_batch``) that runs many samples in
lock-step with matrix operations, and a single-sample wrapper. Samples never
interact inside a batch, so the batched result for a row is the attack on
that row alone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .importance import ImportanceVector
from .model import Mlp


class AttackError(ValueError):
    pass


class CoherenceError(AttackError):
    """A successful adversarial example escaped its feature bounds."""


class ClipMode(str, Enum):
    PER_STEP = "per_step"
    NONE = "none"


METHODS = ("lowprofool", "deepfool", "fgsm")


@dataclass(frozen=True)
class AttackParams:
    lam: float = 8.5
    alpha: float = 1e-3
    max_iter: int = 2000
    norm_p: float = 2.0
    fgsm_epsilon: float = 0.1
    deepfool_overshoot: float = 0.02
    clip_mode: ClipMode = ClipMode.PER_STEP

    def __post_init__(self):
        object.__setattr__(self, "clip_mode", ClipMode(self.clip_mode))
        if self.max_iter < 1:
            raise AttackError("max_iter must be >= 1")
        if self.alpha <= 0:
            raise AttackError("alpha must be positive")
        if self.lam < 0:
            raise AttackError("lambda must be nonnegative")
        if self.norm_p < 1:
            raise AttackError("norm order must be >= 1")
        if self.fgsm_epsilon < 0 or self.deepfool_overshoot < 0:
            raise AttackError("fgsm_epsilon and deepfool_overshoot must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "alpha": self.alpha,
            "max_iter": self.max_iter,
            "norm_p": self.norm_p,
            "fgsm_epsilon": self.fgsm_epsilon,
            "deepfool_overshoot": self.deepfool_overshoot,
            "clip_mode": self.clip_mode.value,
        }


@dataclass
class AttackOutcome:
    """Result of attacking one sample.

    For failures ``x_adv`` is None and ``r``, ``d_v`` and ``l2_norm`` describe
    the final iterate instead, as a diagnostic.
    """

    method: str
    x_orig: np.ndarray
    source: int
    target: int
    succeeded: bool
    x_adv: np.ndarray | None
    r: np.ndarray
    iterations_used: int
    d_v: float
    l2_norm: float
    sample_index: int | None = None
    # (d_v, flipped) per iterate, only filled when requested
    history: list[tuple[float, bool]] | None = field(default=None, repr=False)

    def to_record(self) -> dict:
        return {
            "sample_index": self.sample_index,
            "method": self.method,
            "succeeded": bool(self.succeeded),
            "iterations": int(self.iterations_used),
            "l2_norm": float(self.l2_norm),
            "d_v": float(self.d_v),
            "x_adv": None if self.x_adv is None else [float(v) for v in self.x_adv],
        }


def _weights(v) -> np.ndarray:
    return np.asarray(v.v if isinstance(v, ImportanceVector) else v, dtype=np.float64)


def perceptibility(r, v, p: float = 2.0):
    """Squared p-norm of ``r * v``; works row-wise on batches."""
    r = np.asarray(r, dtype=np.float64)
    w = _weights(v)
    if r.shape[-1] != w.shape[-1]:
        raise ValueError(f"length mismatch: r has {r.shape[-1]} entries, v has {w.shape[-1]}")
    out = np.linalg.norm(r * w, ord=p, axis=-1) ** 2
    return float(out) if np.ndim(out) == 0 else out


def penalty_gradient(r: np.ndarray, v: np.ndarray, p: float) -> np.ndarray:
    """Row-wise gradient of ``||v * r||_p`` with respect to ``r``; 0 at ``r = 0``."""
    u = r * v
    norm = np.linalg.norm(u, ord=p, axis=-1, keepdims=True)
    safe = np.where(norm == 0.0, 1.0, norm)
    if np.isinf(p):
        mask = np.zeros_like(u)
        mask[np.arange(len(u)), np.argmax(np.abs(u), axis=-1)] = 1.0
        g = v * np.sign(u) * mask
    elif p == 1:
        g = v * np.sign(u)
    else:
        g = v * np.sign(u) * np.abs(u) ** (p - 1) / safe ** (p - 1)
    return np.where(norm == 0.0, 0.0, g)


def clip_to_bounds(x, bounds) -> np.ndarray:
    bounds = np.asarray(bounds, dtype=np.float64)
    return np.clip(np.asarray(x, dtype=np.float64), bounds[:, 0], bounds[:, 1])


def _clipper(bounds, params: AttackParams):
    if params.clip_mode is ClipMode.NONE or bounds is None:
        return lambda x: x
    bounds = np.asarray(bounds, dtype=np.float64)
    lo, hi = bounds[:, 0], bounds[:, 1]
    return lambda x: np.clip(x, lo, hi)


def _prepare(mlp: Mlp, X, t):
    X = np.array(X, dtype=np.float64, ndmin=2)
    t = np.broadcast_to(np.asarray(t, dtype=np.int64), (len(X),)).copy()
    s = np.atleast_1d(mlp.predict(X))
    if np.any(s == t):
        bad = np.flatnonzero(s == t)[:5].tolist()
        raise AttackError(f"sample already classified as target (rows {bad})")
    return X, s, t


def _outcomes(method, X, s, t, succeeded, x_final, iters, v, p, indices, histories=None):
    w = _weights(v) if v is not None else None
    out = []
    for k in range(len(X)):
        r = x_final[k] - X[k]
        out.append(AttackOutcome(
            method=method,
            x_orig=X[k].copy(),
            source=int(s[k]),
            target=int(t[k]),
            succeeded=bool(succeeded[k]),
            x_adv=x_final[k].copy() if succeeded[k] else None,
            r=r,
            iterations_used=int(iters[k]),
            d_v=perceptibility(r, w, p) if w is not None else float("nan"),
            l2_norm=float(np.linalg.norm(r)),
            sample_index=None if indices is None else int(indices[k]),
            history=None if histories is None else histories[k],
        ))
    return out


def low_pro_fool_batch(mlp: Mlp, X, t, v, params: AttackParams, bounds=None, *,
                       indices=None, record_history: bool = False) -> list[AttackOutcome]:
    """Gradient descent on ``CE(x_i, t) + lam * ||v * r||_p``.

    ``r`` accumulates unclipped; every iterate is ``clip(x + r)``. The
    gradient of the loss is taken at the clipped iterate and the clip is
    treated as the identity in the backward pass. Of all iterates whose
    label differs from the original, the one with the smallest
    perceptibility of ``x_i - x`` is returned.
    """
    X, s, t = _prepare(mlp, X, t)
    w = _weights(v)
    p = params.norm_p
    clip = _clipper(bounds, params)
    n = len(X)
    r = np.zeros_like(X)
    x_cur = X
    best_dv = np.full(n, np.inf)
    best_x = X.copy()
    best_iter = np.full(n, params.max_iter)
    hist_dv = np.empty((params.max_iter, n)) if record_history else None
    hist_flip = np.empty((params.max_iter, n), dtype=bool) if record_history else None

    def consider(i, x_i, flipped):
        dv = perceptibility(x_i - X, w, p)
        better = flipped & (dv < best_dv)
        best_dv[better] = dv[better]
        best_x[better] = x_i[better]
        best_iter[better] = i
        if record_history:
            hist_dv[i - 1] = dv
            hist_flip[i - 1] = flipped

    for i in range(params.max_iter):
        grad, logits = mlp._loss_gradient_and_logits(x_cur, t)
        if i > 0:
            consider(i, x_cur, (logits[:, 1] > logits[:, 0]).astype(np.int64) != s)
        grad = grad + params.lam * penalty_gradient(r, w, p)
        r = r - params.alpha * grad
        x_cur = clip(X + r)
    consider(params.max_iter, x_cur, mlp.predict(x_cur) != s)

    succeeded = np.isfinite(best_dv)
    x_final = np.where(succeeded[:, None], best_x, x_cur)
    histories = None
    if record_history:
        histories = [list(zip(hist_dv[:, k].tolist(), hist_flip[:, k].tolist())) for k in range(n)]
    return _outcomes("lowprofool", X, s, t, succeeded, x_final, best_iter, w, p, indices, histories)


def deep_fool_batch(mlp: Mlp, X, t, params: AttackParams, bounds=None, v=None, *,
                    indices=None) -> list[AttackOutcome]:
    """Binary DeepFool on the logit margin ``z_t - z_s``.

    Each step moves to the linearised decision boundary; the accumulated
    perturbation is scaled by ``1 + overshoot`` before the class is checked.
    A zero margin gradient stops the sample as a failure.
    """
    X, s, t = _prepare(mlp, X, t)
    clip = _clipper(bounds, params)
    scale = 1.0 + params.deepfool_overshoot
    n = len(X)
    r_tot = np.zeros_like(X)
    x_cur = X.copy()
    active = np.ones(n, dtype=bool)
    succeeded = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=np.int64)
    for k in range(1, params.max_iter + 1):
        rows = np.flatnonzero(active)
        if len(rows) == 0:
            break
        margin, grad = mlp.logit_margin_gradient(x_cur[rows], s[rows], t[rows])
        norm2 = np.einsum("ij,ij->i", grad, grad)
        dead = norm2 == 0.0
        active[rows[dead]] = False
        rows, margin, grad, norm2 = rows[~dead], margin[~dead], grad[~dead], norm2[~dead]
        r_tot[rows] += (np.abs(margin) / norm2)[:, None] * grad
        x_cur[rows] = clip(X[rows] + scale * r_tot[rows])
        iters[rows] = k
        flipped = np.atleast_1d(mlp.predict(x_cur[rows])) == t[rows]
        succeeded[rows[flipped]] = True
        active[rows[flipped]] = False
    return _outcomes("deepfool", X, s, t, succeeded, x_cur, iters, v, params.norm_p, indices)


def fgsm_batch(mlp: Mlp, X, t, params: AttackParams, bounds=None, v=None, *,
               indices=None) -> list[AttackOutcome]:
    """One signed-gradient step of size epsilon down the target-class loss."""
    X, s, t = _prepare(mlp, X, t)
    clip = _clipper(bounds, params)
    x_adv = clip(X - params.fgsm_epsilon * np.sign(mlp.input_gradient(X, t)))
    succeeded = np.atleast_1d(mlp.predict(x_adv)) == t
    iters = np.ones(len(X), dtype=np.int64)
    return _outcomes("fgsm", X, s, t, succeeded, x_adv, iters, v, params.norm_p, indices)


def low_pro_fool(mlp, x, t, v, params, bounds=None, *, record_history=False) -> AttackOutcome:
    return low_pro_fool_batch(mlp, x, t, v, params, bounds, record_history=record_history)[0]


def deep_fool(mlp, x, t, params, bounds=None, v=None) -> AttackOutcome:
    return deep_fool_batch(mlp, x, t, params, bounds, v)[0]


def fgsm(mlp, x, t, params, bounds=None, v=None) -> AttackOutcome:
    return fgsm_batch(mlp, x, t, params, bounds, v)[0]


def run_campaign(method: str, mlp: Mlp, X, v, params: AttackParams, bounds=None,
                 indices=None) -> list[AttackOutcome]:
    """Attack every row toward the opposite of the model's own prediction."""
    X = np.asarray(X, dtype=np.float64)
    t = 1 - np.atleast_1d(mlp.predict(X))
    if indices is None:
        indices = np.arange(len(X))
    if method == "lowprofool":
        return low_pro_fool_batch(mlp, X, t, v, params, bounds, indices=indices)
    if method == "deepfool":
        return deep_fool_batch(mlp, X, t, params, bounds, v, indices=indices)
    if method == "fgsm":
        return fgsm_batch(mlp, X, t, params, bounds, v, indices=indices)
    raise AttackError(f"unknown method {method!r}; expected one of {METHODS}")


def check_coherence(outcomes, bounds, atol: float = 0.0) -> None:
    bounds = np.asarray(bounds, dtype=np.float64)
    for o in outcomes:
        if not o.succeeded:
            continue
        if np.any(o.x_adv < bounds[:, 0] - atol) or np.any(o.x_adv > bounds[:, 1] + atol):
            raise CoherenceError(
                f"{o.method} sample {o.sample_index}: adversarial example outside feature bounds"
            )


def write_outcomes(outcomes, path: str | Path, bounds=None) -> None:
    """One JSON record per line; successful rows are bound-checked first."""
    if bounds is not None:
        check_coherence(outcomes, bounds)
    with open(path, "w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_record()) + "\n")


def read_outcome_records(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
