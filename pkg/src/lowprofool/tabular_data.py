"""
Tabular dataset ingestion and preprocessing.

Raw CSV files are read against a column schema, unordered categoricals are
dropped, everything else is cast to reals and min-max scaled into [0, 1].
Splits follow the 250 test / 50 validation convention with a proportional
fallback for small datasets, and a two-class Gaussian mixture generator
provides desk-scale data with a known correlation structure.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

TEST_SIZE = 250
VALIDATION_SIZE = 50
MIN_SPLIT_ROWS = 20
FALLBACK_FRACTIONS = (0.70, 0.25, 0.05)


class DataError(ValueError):
    """Raised for malformed input files, schemas, or datasets."""


class FeatureKind(str, Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete"
    CATEGORICAL_ORDERED = "categorical_ordered"
    CATEGORICAL_UNORDERED = "categorical_unordered"


@dataclass(frozen=True)
class FeatureMeta:
    name: str
    kind: FeatureKind
    observed_min: float
    observed_max: float

    def __post_init__(self):
        if self.observed_min > self.observed_max:
            raise DataError(
                f"feature {self.name!r}: observed_min {self.observed_min} "
                f"exceeds observed_max {self.observed_max}"
            )

    @property
    def degenerate(self) -> bool:
        return self.observed_min == self.observed_max


@dataclass(frozen=True)
class Schema:
    """Column kinds in file order plus the name of the binary target column.

    ``levels`` optionally gives the ordering of string-valued ordered
    categoricals; their cells are replaced by the index of the level.
    """

    target: str
    columns: dict[str, FeatureKind]
    levels: dict[str, list[str]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, payload: dict) -> "Schema":
        try:
            target = payload["target"]
            columns = {k: FeatureKind(v) for k, v in payload["columns"].items()}
        except KeyError as exc:
            raise DataError(f"schema is missing field {exc.args[0]!r}") from None
        except ValueError as exc:
            raise DataError(f"schema: {exc}") from None
        return cls(target=target, columns=columns, levels=dict(payload.get("levels", {})))

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {"target": self.target, "columns": {k: v.value for k, v in self.columns.items()}}
        if self.levels:
            out["levels"] = self.levels
        return out


@dataclass
class RawTable:
    """Typed cells of a CSV file; numeric columns are float arrays, dropped
    categoricals keep their strings."""

    columns: list[str]
    cells: dict[str, np.ndarray]
    target: np.ndarray

    @property
    def n_rows(self) -> int:
        return len(self.target)

    @property
    def n_columns(self) -> int:
        return len(self.columns)


@dataclass
class Dataset:
    features: list[FeatureMeta]
    X: np.ndarray
    y: np.ndarray
    # (offset, scale) per feature; raw = offset + scale * scaled, scale 0 when degenerate
    scaling: np.ndarray
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.scaling = np.asarray(self.scaling, dtype=np.float64)
        if self.X.ndim != 2:
            raise DataError("X must be a 2-D matrix")
        n, d = self.X.shape
        if n < 1 or d < 1:
            raise DataError(f"dataset must have N >= 1 and D >= 1, got {self.X.shape}")
        if self.y.shape != (n,):
            raise DataError(f"y has shape {self.y.shape}, expected ({n},)")
        if len(self.features) != d or self.scaling.shape != (d, 2):
            raise DataError("feature metadata and scaling must have one entry per column")
        if not np.isin(self.y, (0, 1)).all():
            raise DataError("labels must be 0 or 1")
        if any(f.kind is FeatureKind.CATEGORICAL_UNORDERED for f in self.features):
            raise DataError("unordered categorical features cannot appear in a Dataset")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def feature_names(self) -> list[str]:
        return [f.name for f in self.features]

    def subset(self, rows: np.ndarray) -> "Dataset":
        return Dataset(self.features, self.X[rows], self.y[rows], self.scaling, list(self.warnings))

    def unscale(self, X: np.ndarray) -> np.ndarray:
        """Map scaled values back to raw units."""
        return self.scaling[:, 0] + self.scaling[:, 1] * np.asarray(X, dtype=np.float64)

    def scale(self, raw: np.ndarray) -> np.ndarray:
        raw = np.asarray(raw, dtype=np.float64)
        offset, scale = self.scaling[:, 0], self.scaling[:, 1]
        safe = np.where(scale == 0.0, 1.0, scale)
        return np.where(scale == 0.0, 0.0, (raw - offset) / safe)


@dataclass
class DataSplit:
    train: Dataset
    test: Dataset
    validation: Dataset
    seed: int
    # row indices into the source dataset
    train_rows: np.ndarray
    test_rows: np.ndarray
    validation_rows: np.ndarray


def _parse_float(text: str, row: int, column: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {column!r}: non-numeric value {text!r}") from None
    if not np.isfinite(value):
        raise DataError(f"row {row}, column {column!r}: non-finite value {text!r}")
    return value


def load_csv(path: str | Path, schema: Schema) -> RawTable:
    """Read a comma-separated, UTF-8 file with a header row.

    Row numbers in error messages count data rows from 1 (the header is
    row 0). Every cell must be present; there is no imputation.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if schema.target not in header:
            raise DataError(f"{path}: target column {schema.target!r} not in header")
        missing = [c for c in schema.columns if c not in header]
        if missing:
            raise DataError(f"{path}: schema columns missing from header: {missing}")
        rows = []
        for i, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {i} has {len(row)} fields, expected {len(header)}")
            rows.append(row)

    index = {name: k for k, name in enumerate(header)}
    feature_columns = [c for c in header if c != schema.target and c in schema.columns]
    cells: dict[str, np.ndarray] = {}
    for column in feature_columns:
        kind = schema.columns[column]
        raw = [r[index[column]].strip() for r in rows]
        if kind is FeatureKind.CATEGORICAL_UNORDERED:
            cells[column] = np.array(raw, dtype=object)
        elif kind is FeatureKind.CATEGORICAL_ORDERED and column in schema.levels:
            levels = {lv: k for k, lv in enumerate(schema.levels[column])}
            values = []
            for i, text in enumerate(raw, start=1):
                if text not in levels:
                    raise DataError(f"row {i}, column {column!r}: unknown level {text!r}")
                values.append(float(levels[text]))
            cells[column] = np.array(values)
        else:
            cells[column] = np.array([_parse_float(t, i, column) for i, t in enumerate(raw, start=1)])

    target = []
    for i, r in enumerate(rows, start=1):
        value = _parse_float(r[index[schema.target]].strip(), i, schema.target)
        if value not in (0.0, 1.0):
            raise DataError(f"row {i}, column {schema.target!r}: non-binary target {value:g}")
        target.append(int(value))

    table = RawTable(feature_columns, cells, np.array(target, dtype=np.int64))
    log.info("loaded %s: %d rows, %d feature columns", path, table.n_rows, table.n_columns)
    return table


def preprocess(raw: RawTable, schema: Schema) -> Dataset:
    kept = [c for c in raw.columns if schema.columns[c] is not FeatureKind.CATEGORICAL_UNORDERED]
    if not kept:
        raise DataError("all features were dropped; nothing left to attack")
    features, columns, scaling, warnings = [], [], [], []
    for name in kept:
        values = raw.cells[name].astype(np.float64)
        lo, hi = float(values.min()), float(values.max())
        features.append(FeatureMeta(name, schema.columns[name], lo, hi))
        if lo == hi:
            msg = f"feature {name!r} is constant ({lo:g}); scaled to 0.0"
            log.warning(msg)
            warnings.append(msg)
            columns.append(np.zeros_like(values))
            scaling.append((lo, 0.0))
        else:
            columns.append((values - lo) / (hi - lo))
            scaling.append((lo, hi - lo))
    X = np.clip(np.column_stack(columns), 0.0, 1.0)
    return Dataset(features, X, raw.target.copy(), np.array(scaling), warnings)


def split_sizes(n: int) -> tuple[int, int, int]:
    """(train, test, validation) row counts for a dataset of ``n`` rows."""
    if n < MIN_SPLIT_ROWS:
        raise DataError(f"dataset too small to split: {n} rows, need at least {MIN_SPLIT_ROWS}")
    if n >= TEST_SIZE + VALIDATION_SIZE + 50:
        return n - TEST_SIZE - VALIDATION_SIZE, TEST_SIZE, VALIDATION_SIZE
    n_test = max(1, round(n * FALLBACK_FRACTIONS[1]))
    n_val = max(1, round(n * FALLBACK_FRACTIONS[2]))
    return n - n_test - n_val, n_test, n_val


def split(dataset: Dataset, seed: int) -> DataSplit:
    n_train, n_test, n_val = split_sizes(dataset.n_samples)
    order = np.random.default_rng(seed).permutation(dataset.n_samples)
    test_rows = np.sort(order[:n_test])
    val_rows = np.sort(order[n_test:n_test + n_val])
    train_rows = np.sort(order[n_test + n_val:])
    return DataSplit(
        train=dataset.subset(train_rows),
        test=dataset.subset(test_rows),
        validation=dataset.subset(val_rows),
        seed=seed,
        train_rows=train_rows,
        test_rows=test_rows,
        validation_rows=val_rows,
    )


def feature_bounds(dataset: Dataset | np.ndarray) -> np.ndarray:
    """Per-feature ``[lo, hi]`` rows of the observed range, in scaled space."""
    X = dataset.X if isinstance(dataset, Dataset) else np.asarray(dataset, dtype=np.float64)
    return np.column_stack([X.min(axis=0), X.max(axis=0)])


@dataclass(frozen=True)
class SyntheticSpec:
    """Two balanced Gaussian classes at means -sep/2 and +sep/2 per feature.

    ``correlation`` is a common pairwise correlation of the class-conditional
    noise. It leaves every feature's own correlation with the label unchanged
    but lets a classifier use weakly correlated features to cancel noise.
    """

    separations: tuple[float, ...]
    noise: tuple[float, ...] | None = None
    correlation: float = 0.0

    def __post_init__(self):
        if len(self.separations) < 2:
            raise DataError("synthetic data needs at least 2 features")
        if self.noise is not None and len(self.noise) != len(self.separations):
            raise DataError("noise must have one scale per feature")
        d = len(self.separations)
        if not -1.0 / (d - 1) < self.correlation < 1.0:
            raise DataError(f"noise correlation must lie in (-1/(D-1), 1), got {self.correlation}")

    @property
    def n_features(self) -> int:
        return len(self.separations)

    def noise_scales(self) -> np.ndarray:
        if self.noise is None:
            return np.ones(self.n_features)
        return np.asarray(self.noise, dtype=np.float64)


def generate_synthetic(n: int, spec: SyntheticSpec, seed: int) -> Dataset:
    if n < 4:
        raise DataError(f"synthetic dataset needs n >= 4, got {n}")
    rng = np.random.default_rng(seed)
    y = np.zeros(n, dtype=np.int64)
    y[n // 2:] = 1
    y = y[rng.permutation(n)]
    sep = np.asarray(spec.separations, dtype=np.float64)
    d = spec.n_features
    corr = np.full((d, d), spec.correlation)
    np.fill_diagonal(corr, 1.0)
    noise = rng.standard_normal((n, d)) @ np.linalg.cholesky(corr).T
    raw = (y[:, None] - 0.5) * sep + noise * spec.noise_scales()
    names = [f"x{j + 1}" for j in range(spec.n_features)]
    table = RawTable(names, {name: raw[:, j] for j, name in enumerate(names)}, y)
    schema = Schema("label", {name: FeatureKind.CONTINUOUS for name in names})
    return preprocess(table, schema)


def save_dataset(dataset: Dataset, path: str | Path, *, raw: bool = False) -> Path:
    """Write the dataset as CSV plus a ``.scaling.json`` sidecar.

    With ``raw=True`` the values are written back in raw units, which makes
    the file loadable again through :func:`load_csv`.
    """
    path = Path(path)
    values = dataset.unscale(dataset.X) if raw else dataset.X
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(dataset.feature_names + ["label"])
        for row, label in zip(values, dataset.y):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    sidecar = path.with_suffix(".scaling.json")
    records = [
        {"name": f.name, "kind": f.kind.value, "offset": float(o), "scale": float(s)}
        for f, (o, s) in zip(dataset.features, dataset.scaling)
    ]
    sidecar.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    return path


def load_dataset(path: str | Path) -> Dataset:
    """Inverse of :func:`save_dataset` for the scaled layout."""
    path = Path(path)
    records = json.loads(path.with_suffix(".scaling.json").read_text(encoding="utf-8"))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [r for r in reader if r]
    data = np.array([[float(v) for v in r[:-1]] for r in rows])
    y = np.array([int(r[-1]) for r in rows])
    scaling = np.array([(r["offset"], r["scale"]) for r in records])
    features = [
        FeatureMeta(r["name"], FeatureKind(r["kind"]), r["offset"], r["offset"] + r["scale"])
        for r in records
    ]
    return Dataset(features, data, y, scaling)


def concat(datasets: Sequence[Dataset]) -> Dataset:
    first = datasets[0]
    return Dataset(
        first.features,
        np.vstack([d.X for d in datasets]),
        np.concatenate([d.y for d in datasets]),
        first.scaling,
    )
