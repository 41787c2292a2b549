"""Feature-importance vectors from absolute Pearson correlation with the target."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .tabular_data import Dataset

FLOOR = 1e-6


class Normalization(str, Enum):
    UNIT_L2 = "unit_l2"
    # divides by the squared norm
    AS_PRINTED = "as_printed"


@dataclass(frozen=True)
class ImportanceVector:
    v: np.ndarray
    rho: np.ndarray
    normalization: Normalization
    names: tuple[str, ...] | None = None

    def __len__(self) -> int:
        return len(self.v)

    @property
    def floored(self) -> np.ndarray:
        return self.rho == 0.0

    def to_csv(self, path: str | Path) -> None:
        names = self.names or tuple(f"x{j + 1}" for j in range(len(self.v)))
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["feature", "rho", "v"])
            for name, r, w in zip(names, self.rho, self.v):
                writer.writerow([name, repr(float(r)), repr(float(w))])


def pearson(x, y) -> float:
    """Sample Pearson correlation; 0.0 when either side has zero variance."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if len(x) < 2:
        raise ValueError("pearson needs at least 2 observations")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = np.dot(dx, dx)
    syy = np.dot(dy, dy)
    if sxx == 0.0 or syy == 0.0:
        return 0.0
    r = np.dot(dx, dy) / np.sqrt(sxx * syy)
    return float(np.clip(r, -1.0, 1.0))


def from_correlations(rho, normalization: Normalization | str = Normalization.UNIT_L2,
                      names=None) -> ImportanceVector:
    normalization = Normalization(normalization)
    rho = np.asarray(rho, dtype=np.float64)
    magnitude = np.abs(rho)
    norm = np.linalg.norm(magnitude)
    if norm == 0.0:
        raise ValueError("no feature correlates with target")
    if normalization is Normalization.UNIT_L2:
        v = magnitude / norm
    else:
        v = magnitude / norm**2
    v = np.where(v == 0.0, FLOOR, v)
    return ImportanceVector(v, rho, normalization, tuple(names) if names is not None else None)


def importance_vector(dataset: Dataset, normalization: Normalization | str = Normalization.UNIT_L2
                      ) -> ImportanceVector:
    rho = np.array([pearson(dataset.X[:, j], dataset.y) for j in range(dataset.n_features)])
    return from_correlations(rho, normalization, dataset.feature_names)
