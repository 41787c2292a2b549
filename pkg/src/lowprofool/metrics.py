"""
Campaign metrics: success rate, perturbation norms over successful pairs,
and distances from original samples to their closest neighbours.

Means and standard deviations use ``math.fsum`` so that aggregates do not
depend on outcome order. Standard deviations are population (divide by n).
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .attacks import AttackOutcome, _weights, perceptibility
from .tabular_data import Dataset

Stat = tuple[float, float]


@dataclass
class ExperimentReport:
    dataset_name: str
    method_name: str
    success_rate: float
    n_samples: int
    n_successes: int
    # None when there were no successes
    mean_norm: Stat | None = None
    weighted_mean_norm: Stat | None = None
    mean_neighbor_dist: Stat | None = None
    weighted_mean_neighbor_dist: Stat | None = None

    def to_dict(self) -> dict:
        out = asdict(self)
        for key in ("mean_norm", "weighted_mean_norm", "mean_neighbor_dist", "weighted_mean_neighbor_dist"):
            value = out[key]
            out[key] = None if value is None else {"mean": value[0], "std": value[1]}
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "ExperimentReport":
        payload = dict(payload)
        for key in ("mean_norm", "weighted_mean_norm", "mean_neighbor_dist", "weighted_mean_neighbor_dist"):
            value = payload.get(key)
            payload[key] = None if value is None else (value["mean"], value["std"])
        return cls(**payload)


def mean_std(values: Sequence[float]) -> Stat:
    values = [float(v) for v in values]
    if not values:
        raise ValueError("mean_std of an empty sequence")
    mean = math.fsum(values) / len(values)
    var = math.fsum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(var)


def success_rate(outcomes: Sequence[AttackOutcome]) -> float:
    if not outcomes:
        raise ValueError("success_rate of an empty campaign")
    return sum(1 for o in outcomes if o.succeeded) / len(outcomes)


def perturbation_stats(outcomes: Sequence[AttackOutcome], v, p: float = 2.0
                       ) -> tuple[Stat | None, Stat | None]:
    """(l2 norm stats, d_v stats) over successful outcomes only."""
    wins = [o for o in outcomes if o.succeeded]
    if not wins:
        return None, None
    l2 = [float(np.linalg.norm(o.r)) for o in wins]
    dv = [perceptibility(o.r, v, p) for o in wins]
    return mean_std(l2), mean_std(dv)


def _distances(x: np.ndarray, data: np.ndarray, w: np.ndarray | None) -> np.ndarray:
    # accumulate one feature at a time so every row is summed in column order
    acc = np.zeros(len(data))
    for j in range(data.shape[1]):
        diff = data[:, j] - x[j]
        if w is not None:
            diff = diff * w[j]
        acc += diff * diff
    return acc


def nearest_neighbor_distance(x, data, v=None, metric: str = "l2", exclude: int | None = None) -> float:
    """Exhaustive scan for the closest row of ``data`` to ``x``.

    ``metric="l2"`` returns the Euclidean distance; ``metric="weighted"``
    returns ``||(x - p) * v||_2^2``. ``exclude`` is the row index of ``x``
    itself when it is a member of ``data``.
    """
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if metric not in ("l2", "weighted"):
        raise ValueError(f"unknown metric {metric!r}")
    if exclude is not None:
        if len(X) < 2:
            raise ValueError("need at least 2 rows to find a neighbour other than the query")
        X = np.delete(X, exclude, axis=0)
    if len(X) == 0:
        raise ValueError("no candidate rows")
    if metric == "weighted":
        return float(_distances(x, X, _weights(v)).min())
    return float(np.sqrt(_distances(x, X, None).min()))


def build_report(outcomes: Sequence[AttackOutcome], data, v, dataset_name: str = "",
                 method_name: str | None = None, p: float = 2.0) -> ExperimentReport:
    """Assemble SR, Mean, WMean, MD_O and WMD_O for one campaign.

    Neighbour distances are taken for the originals of successful pairs,
    against all rows of ``data`` except the sample itself (located through
    ``sample_index``, which must index into ``data``).
    """
    if not outcomes:
        raise ValueError("cannot report on an empty campaign")
    method_name = method_name or outcomes[0].method
    X = data.X if isinstance(data, Dataset) else np.asarray(data, dtype=np.float64)
    wins = [o for o in outcomes if o.succeeded]
    report = ExperimentReport(
        dataset_name=dataset_name,
        method_name=method_name,
        success_rate=success_rate(outcomes),
        n_samples=len(outcomes),
        n_successes=len(wins),
    )
    if not wins:
        return report
    report.mean_norm, report.weighted_mean_norm = perturbation_stats(outcomes, v, p)
    md = [nearest_neighbor_distance(o.x_orig, X, v, "l2", o.sample_index) for o in wins]
    wmd = [nearest_neighbor_distance(o.x_orig, X, v, "weighted", o.sample_index) for o in wins]
    report.mean_neighbor_dist = mean_std(md)
    report.weighted_mean_neighbor_dist = mean_std(wmd)
    return report


def _cell(stat: Stat | None) -> str:
    return "--" if stat is None else f"{stat[0]:.3g} ± {stat[1]:.3g}"


def format_table(reports: Sequence[ExperimentReport]) -> str:
    header = ["Dataset", "Method", "SR", "Mean", "WMean", "MD_O", "WMD_O"]
    rows = [
        [r.dataset_name, r.method_name, f"{r.success_rate:.3f}", _cell(r.mean_norm),
         _cell(r.weighted_mean_norm), _cell(r.mean_neighbor_dist), _cell(r.weighted_mean_neighbor_dist)]
        for r in reports
    ]
    widths = [max(len(row[k]) for row in [header] + rows) for k in range(len(header))]
    line = "+".join("-" * (w + 2) for w in widths)
    fmt = lambda row: "|".join(f" {c:<{w}} " for c, w in zip(row, widths))
    out = [fmt(header), line]
    previous = None
    for report, row in zip(reports, rows):
        if previous is not None and report.dataset_name != previous:
            out.append(line)
        out.append(fmt(row))
        previous = report.dataset_name
    return "\n".join(out) + "\n"


def _ratio(a: float | None, b: float | None) -> float | None:
    if a is None or b is None or b == 0:
        return None
    return a / b


def method_ratios(reports: Sequence[ExperimentReport], numerator: str = "lowprofool",
                  denominator: str = "deepfool") -> list[dict]:
    """Per dataset: SR ratio and weighted-mean-norm ratio between two methods."""
    by_key = {(r.dataset_name, r.method_name): r for r in reports}
    rows = []
    for name in dict.fromkeys(r.dataset_name for r in reports):
        a, b = by_key.get((name, numerator)), by_key.get((name, denominator))
        if a is None or b is None:
            continue
        rows.append({
            "dataset": name,
            "success_rate_ratio": _ratio(a.success_rate, b.success_rate),
            "weighted_mean_norm_ratio": _ratio(
                a.weighted_mean_norm and a.weighted_mean_norm[0],
                b.weighted_mean_norm and b.weighted_mean_norm[0]),
        })
    return rows


def neighbor_ratios(reports: Sequence[ExperimentReport]) -> list[dict]:
    """Perturbation size relative to the closest-neighbour distance."""
    rows = []
    for r in reports:
        if r.mean_norm is None:
            continue
        rows.append({
            "dataset": r.dataset_name,
            "method": r.method_name,
            "mean_norm_to_md_o": _ratio(r.mean_norm[0], r.mean_neighbor_dist[0]),
            "wmean_norm_to_wmd_o": _ratio(r.weighted_mean_norm[0], r.weighted_mean_neighbor_dist[0]),
        })
    return rows


def write_csv(rows: list[dict], path: str | Path, columns: Sequence[str]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row[k] is None else row[k]) for k in columns})
