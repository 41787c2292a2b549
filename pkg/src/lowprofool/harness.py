"""
End-to-end experiment orchestration.

One root seed feeds every random stage (synthetic generation, split, model
initialisation and shuffling) through ``numpy.random.SeedSequence``. Stages
can run together (:func:`run_experiment`) or one at a time against a run
directory, which is what the CLI subcommands do.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attacks, metrics, tabular_data
from .attacks import AttackOutcome, AttackParams, ClipMode
from .importance import ImportanceVector, Normalization, importance_vector
from .metrics import ExperimentReport
from .model import Mlp, MlpConfig, TrainResult, init, train
from .tabular_data import Dataset, DataSplit, Schema, SyntheticSpec

log = logging.getLogger(__name__)

DEFAULT_GRID = {"lambda": [0.1, 1.0, 5.0, 8.5, 20.0], "alpha": [1e-4, 1e-3, 1e-2]}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass
class ExperimentConfig:
    name: str = "synthetic"
    csv: str | None = None
    schema: str | None = None
    synthetic: dict | None = None
    hidden: tuple[int, ...] = (64, 32)
    learning_rate: float = 0.05
    epochs: int = 100
    batch_size: int = 32
    attack: dict = field(default_factory=dict)
    # None disables tuning; the attack params are then used as given
    grid: dict | None = field(default_factory=lambda: dict(DEFAULT_GRID))
    methods: tuple[str, ...] = attacks.METHODS
    importance_norm: str = Normalization.UNIT_L2.value
    seed: int = 0

    def __post_init__(self):
        if (self.csv is None) == (self.synthetic is None):
            raise ValueError("config needs exactly one of 'csv' (with 'schema') or 'synthetic'")
        if self.csv is not None and self.schema is None:
            raise ValueError("a csv dataset needs a 'schema' path")
        self.hidden = tuple(self.hidden)
        self.methods = tuple(self.methods)
        unknown = set(self.methods) - set(attacks.METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        Normalization(self.importance_norm)
        self.attack_params()

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        payload = json.loads(path.read_text(encoding="utf-8"))
        for key in ("csv", "schema"):
            if payload.get(key) is not None:
                payload[key] = str((path.parent / payload[key]).resolve())
        return cls(**payload)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "csv": self.csv,
            "schema": self.schema,
            "synthetic": self.synthetic,
            "hidden": list(self.hidden),
            "learning_rate": self.learning_rate,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "attack": self.attack,
            "grid": self.grid,
            "methods": list(self.methods),
            "importance_norm": self.importance_norm,
            "seed": self.seed,
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def attack_params(self) -> AttackParams:
        kwargs = dict(self.attack)
        if "lambda" in kwargs:
            kwargs["lam"] = kwargs.pop("lambda")
        return AttackParams(**kwargs)

    def seeds(self) -> dict[str, int]:
        children = np.random.SeedSequence(self.seed).spawn(3)
        names = ("synthetic", "split", "model")
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}


@dataclass
class Prepared:
    dataset: Dataset
    split: DataSplit
    importance: ImportanceVector
    bounds: np.ndarray


@dataclass
class ExperimentResult:
    reports: list[ExperimentReport]
    outcomes: dict[str, list[AttackOutcome]]
    params: AttackParams
    tuning: list[dict]
    training: TrainResult


def _stage(name):
    def wrap(fn):
        def inner(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except StageError:
                raise
            except (ValueError, OSError, KeyError) as exc:
                raise StageError(name, str(exc)) from exc
        inner.__name__ = fn.__name__
        inner.__doc__ = fn.__doc__
        return inner
    return wrap


@_stage("data")
def prepare_data(config: ExperimentConfig) -> Prepared:
    seeds = config.seeds()
    if config.synthetic is not None:
        syn = dict(config.synthetic)
        n = syn.pop("n", 1000)
        spec = SyntheticSpec(
            separations=tuple(syn.pop("separations")),
            noise=tuple(syn["noise"]) if syn.get("noise") is not None else None,
            correlation=syn.get("correlation", 0.0),
        )
        dataset = tabular_data.generate_synthetic(n, spec, seeds["synthetic"])
    else:
        schema = Schema.load(config.schema)
        dataset = tabular_data.preprocess(tabular_data.load_csv(config.csv, schema), schema)
    parts = tabular_data.split(dataset, seeds["split"])
    rows = [set(parts.train_rows), set(parts.test_rows), set(parts.validation_rows)]
    assert not (rows[0] & rows[1] or rows[0] & rows[2] or rows[1] & rows[2]), "split parts overlap"
    v = importance_vector(parts.train, config.importance_norm)
    bounds = tabular_data.feature_bounds(dataset)
    return Prepared(dataset, parts, v, bounds)


@_stage("train")
def train_model(config: ExperimentConfig, prepared: Prepared) -> TrainResult:
    train_set = prepared.split.train
    mlp_config = MlpConfig(
        layer_sizes=(train_set.n_features, *config.hidden, 2),
        learning_rate=config.learning_rate,
        epochs=config.epochs,
        batch_size=config.batch_size,
        seed=config.seeds()["model"],
    )
    result = train(init(mlp_config), train_set.X, train_set.y, mlp_config)
    log.info("trained %s: loss %.4f -> %.4f, accuracy %.3f", mlp_config.layer_sizes,
             result.initial_loss, result.final_loss, result.accuracy)
    return result


def tune_hyperparameters(model: Mlp, validation: Dataset | np.ndarray, v, grid: dict,
                         base: AttackParams | None = None, bounds=None) -> tuple[AttackParams, list[dict]]:
    """Grid search of LowProFool's (lambda, alpha) on validation samples.

    Points are ranked by success rate (higher first), then mean d_v over
    successes (lower first), then smaller lambda, then smaller alpha.
    Returns the winning parameters and one row per grid point.
    """
    base = base or AttackParams()
    lambdas = list(grid.get("lambda") or [base.lam])
    alphas = list(grid.get("alpha") or [base.alpha])
    if not grid or not lambdas or not alphas:
        raise ValueError("hyperparameter grid is empty")
    X = validation.X if isinstance(validation, Dataset) else np.asarray(validation)
    rows = []
    for lam, alpha in itertools.product(lambdas, alphas):
        params = replace(base, lam=float(lam), alpha=float(alpha))
        outcomes = attacks.run_campaign("lowprofool", model, X, v, params, bounds)
        sr = metrics.success_rate(outcomes)
        dv = metrics.perturbation_stats(outcomes, v, params.norm_p)[1]
        rows.append({"lambda": params.lam, "alpha": params.alpha, "success_rate": sr,
                     "mean_d_v": None if dv is None else dv[0]})
    best = min(rows, key=lambda r: (-r["success_rate"],
                                    math.inf if r["mean_d_v"] is None else r["mean_d_v"],
                                    r["lambda"], r["alpha"]))
    return replace(base, lam=best["lambda"], alpha=best["alpha"]), rows


@_stage("tune")
def tune(config: ExperimentConfig, prepared: Prepared, model: Mlp) -> tuple[AttackParams, list[dict]]:
    base = config.attack_params()
    if config.grid is None or "lowprofool" not in config.methods:
        return base, []
    return tune_hyperparameters(model, prepared.split.validation, prepared.importance,
                                config.grid, base, prepared.bounds)


@_stage("attack")
def attack(config: ExperimentConfig, prepared: Prepared, model: Mlp,
           params: AttackParams) -> dict[str, list[AttackOutcome]]:
    test = prepared.split.test
    out = {}
    for method in config.methods:
        outcomes = attacks.run_campaign(method, model, test.X, prepared.importance, params, prepared.bounds)
        if params.clip_mode is ClipMode.PER_STEP:
            attacks.check_coherence(outcomes, prepared.bounds)
        out[method] = outcomes
    return out


@_stage("evaluate")
def evaluate(config: ExperimentConfig, prepared: Prepared,
             outcomes: dict[str, list[AttackOutcome]], p: float = 2.0) -> list[ExperimentReport]:
    return [
        metrics.build_report(o, prepared.split.test, prepared.importance, config.name, method, p)
        for method, o in outcomes.items()
    ]


def outcomes_from_records(records: list[dict], X: np.ndarray, v, p: float = 2.0) -> dict[str, list[AttackOutcome]]:
    """Rebuild outcomes from serialized records; ``X`` is the attacked matrix."""
    out: dict[str, list[AttackOutcome]] = {}
    for rec in records:
        x = X[rec["sample_index"]]
        x_adv = None if rec["x_adv"] is None else np.asarray(rec["x_adv"], dtype=np.float64)
        r = x_adv - x if x_adv is not None else np.full_like(x, np.nan)
        out.setdefault(rec["method"], []).append(AttackOutcome(
            method=rec["method"], x_orig=x.copy(), source=-1, target=-1,
            succeeded=rec["succeeded"], x_adv=x_adv, r=r,
            iterations_used=rec["iterations"], d_v=rec["d_v"], l2_norm=rec["l2_norm"],
            sample_index=rec["sample_index"],
        ))
    return out


# --- artifact writers -------------------------------------------------------

def write_training(out: Path, config: ExperimentConfig, prepared: Prepared, result: TrainResult) -> None:
    out.mkdir(parents=True, exist_ok=True)
    config.save(out / "config.json")
    result.model.save(out / "model.npz")
    prepared.importance.to_csv(out / "importance.csv")
    split = {
        "seed": prepared.split.seed,
        "train": prepared.split.train_rows.tolist(),
        "test": prepared.split.test_rows.tolist(),
        "validation": prepared.split.validation_rows.tolist(),
    }
    (out / "split.json").write_text(json.dumps(split) + "\n", encoding="utf-8")
    summary = {"initial_loss": result.initial_loss, "history": result.history,
               "train_accuracy": result.accuracy, "warnings": prepared.dataset.warnings}
    (out / "training.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def write_attack(out: Path, prepared: Prepared, params: AttackParams, tuning: list[dict],
                 outcomes: dict[str, list[AttackOutcome]]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = {"params": params.to_dict(), "tuning": tuning}
    (out / "params.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    flat = [o for method in outcomes for o in outcomes[method]]
    bounds = prepared.bounds if params.clip_mode is ClipMode.PER_STEP else None
    attacks.write_outcomes(flat, out / "outcomes.jsonl", bounds)


def write_reports(out: Path, reports: list[ExperimentReport]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    payload = [r.to_dict() for r in reports]
    (out / "report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    (out / "report.txt").write_text(metrics.format_table(reports), encoding="utf-8")
    metrics.write_csv(metrics.method_ratios(reports), out / "plot_method_ratios.csv",
                      ["dataset", "success_rate_ratio", "weighted_mean_norm_ratio"])
    metrics.write_csv(metrics.neighbor_ratios(reports), out / "plot_neighbor_ratios.csv",
                      ["dataset", "method", "mean_norm_to_md_o", "wmean_norm_to_wmd_o"])


def run_experiment(config: ExperimentConfig, out: str | Path | None = None) -> ExperimentResult:
    prepared = prepare_data(config)
    training = train_model(config, prepared)
    params, tuning = tune(config, prepared, training.model)
    outcomes = attack(config, prepared, training.model, params)
    reports = evaluate(config, prepared, outcomes, params.norm_p)
    if out is not None:
        out = Path(out)
        write_training(out, config, prepared, training)
        write_attack(out, prepared, params, tuning, outcomes)
        write_reports(out, reports)
    return ExperimentResult(reports, outcomes, params, tuning, training)
