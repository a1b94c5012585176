"""Configuration-performance datasets: loading, splitting, scaling and synthesis."""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

BINARY = "binary"
NUMERIC = "numeric"


class DataError(ValueError):
    """Raised for malformed or inconsistent dataset input."""


@dataclass(frozen=True)
class OptionSchema:
    name: str
    kind: str
    observed_min: float
    observed_max: float

    def __post_init__(self):
        if self.kind not in (BINARY, NUMERIC):
            raise DataError(f"option {self.name!r}: unknown kind {self.kind!r}")
        if self.observed_min > self.observed_max:
            raise DataError(f"option {self.name!r}: observed_min > observed_max")

    @property
    def is_binary(self) -> bool:
        return self.kind == BINARY

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "observed_min": self.observed_min,
            "observed_max": self.observed_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OptionSchema":
        return cls(d["name"], d["kind"], float(d["observed_min"]), float(d["observed_max"]))


def infer_schema(names: Sequence[str], X: np.ndarray) -> tuple[OptionSchema, ...]:
    schema = []
    for j, name in enumerate(names):
        col = X[:, j]
        kind = BINARY if np.all((col == 0) | (col == 1)) else NUMERIC
        schema.append(OptionSchema(name, kind, float(col.min()), float(col.max())))
    return tuple(schema)


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of configurations ``X`` (rows x options) and performance ``y``."""

    schema: tuple[OptionSchema, ...]
    X: np.ndarray
    y: np.ndarray
    performance_name: str = "performance"
    unit: str = ""

    def __post_init__(self):
        X = np.array(self.X, dtype=float, copy=True)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        if X.ndim != 2:
            X = X.reshape(len(y), -1)
        if X.shape[0] != y.shape[0]:
            raise DataError(f"{X.shape[0]} configurations but {y.shape[0]} performance values")
        if X.shape[1] != len(self.schema):
            raise DataError(f"configuration length {X.shape[1]} != schema length {len(self.schema)}")
        if not np.all(np.isfinite(y)):
            raise DataError("performance values must be finite")
        if not np.all(np.isfinite(X)):
            raise DataError("configuration values must be finite")
        for j, opt in enumerate(self.schema):
            if opt.is_binary and not np.all((X[:, j] == 0) | (X[:, j] == 1)):
                raise DataError(f"binary option {opt.name!r} has values outside {{0, 1}}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "schema", tuple(self.schema))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def n_options(self) -> int:
        return len(self.schema)

    @property
    def option_names(self) -> list[str]:
        return [o.name for o in self.schema]

    @property
    def binary_mask(self) -> np.ndarray:
        return np.array([o.is_binary for o in self.schema], dtype=bool)

    @property
    def performance_header(self) -> str:
        return f"{self.performance_name} ({self.unit})" if self.unit else self.performance_name

    def subset(self, indices: Iterable[int]) -> "Dataset":
        idx = np.asarray(list(indices), dtype=int)
        return Dataset(self.schema, self.X[idx], self.y[idx], self.performance_name, self.unit)


def check_unique(X: np.ndarray, first_line: int = 2) -> None:
    seen: dict[bytes, int] = {}
    for i, row in enumerate(np.ascontiguousarray(X, dtype=float)):
        key = row.tobytes()
        if key in seen:
            raise DataError(
                f"row {i + first_line}: duplicate configuration (same as row {seen[key] + first_line})"
            )
        seen[key] = i


_UNIT = re.compile(r"^(.*?)\s*[\(\[]([^\)\]]*)[\)\]]\s*$")


def _split_unit(header: str) -> tuple[str, str]:
    m = _UNIT.match(header)
    if m:
        return m.group(1).strip(), m.group(2).strip()
    return header.strip(), ""


def load_dataset(path: str | Path) -> Dataset:
    """Read a CSV whose last column is performance and all others are options.

    Row numbers in error messages are file line numbers (the header is line 1).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise DataError(f"{path}: cannot read ({exc.strerror})") from exc
    rows = list(csv.reader(text.splitlines()))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2:
        raise DataError(f"{path}: header needs at least one option and one performance column")
    for h in header:
        if not h:
            raise DataError(f"{path}: missing header (blank column name)")
        try:
            float(h)
        except ValueError:
            continue
        raise DataError(f"{path}: missing header (first row is numeric)")
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")

    values = np.empty((len(rows) - 1, len(header)))
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise DataError(f"{path}: row {line}: expected {len(header)} cells, got {len(row)}")
        for j, cell in enumerate(row):
            cell = cell.strip()
            if not cell:
                raise DataError(f"{path}: row {line}, column {header[j]!r}: missing value")
            try:
                v = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}: row {line}, column {header[j]!r}: non-numeric cell {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise DataError(f"{path}: row {line}, column {header[j]!r}: non-finite value")
            values[i, j] = v

    X, y = values[:, :-1], values[:, -1]
    try:
        check_unique(X)
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from None
    name, unit = _split_unit(header[-1])
    return Dataset(infer_schema(header[:-1], X), X, y, name, unit)


def format_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(dataset.option_names + [dataset.performance_header])
        for x, y in zip(dataset.X, dataset.y):
            w.writerow([format_number(float(v)) for v in x] + [format_number(float(y))])


# -- sample sizes and splitting ---------------------------------------------------------


@dataclass(frozen=True)
class SizeLevel:
    level: int
    resolved_count: int

    def __post_init__(self):
        if self.resolved_count < 1:
            raise DataError("resolved_count must be positive")


def resolve_size_levels(dataset: Dataset, overrides: Sequence[int] | None = None) -> list[SizeLevel]:
    """Training sizes n..5n for all-binary systems; explicit overrides otherwise."""
    if overrides:
        counts = [int(c) for c in overrides]
    elif all(o.is_binary for o in dataset.schema):
        n = dataset.n_options
        counts = [n * k for k in range(1, 6)]
    else:
        raise DataError(
            "dataset has numeric options: pass the training sizes explicitly (e.g. --sizes 77,173,384)"
        )
    for c in counts:
        if not 0 < c < len(dataset):
            raise DataError(f"training size {c} must be in (0, {len(dataset)})")
    return [SizeLevel(i + 1, c) for i, c in enumerate(counts)]


def split_indices(n_rows: int, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0 < count < n_rows:
        raise DataError(f"training size {count} must be in (0, {n_rows})")
    perm = np.random.default_rng(seed).permutation(n_rows)
    return np.sort(perm[:count]), np.sort(perm[count:])


def split_train_test(dataset: Dataset, size: SizeLevel | int, seed: int) -> tuple[Dataset, Dataset]:
    count = size.resolved_count if isinstance(size, SizeLevel) else int(size)
    train_idx, test_idx = split_indices(len(dataset), count, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# -- scaling ----------------------------------------------------------------------------


def _scale(v, lo, hi):
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.where(span > 0, (v - lo) / safe, 0.0)


@dataclass(frozen=True, eq=False)
class Scaler:
    """Min-max scaling to [0, 1]; columns that are constant in training map to 0."""

    x_min: np.ndarray
    x_max: np.ndarray
    y_min: float
    y_max: float

    def __post_init__(self):
        for name in ("x_min", "x_max"):
            a = np.array(getattr(self, name), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        object.__setattr__(self, "y_min", float(self.y_min))
        object.__setattr__(self, "y_max", float(self.y_max))

    def transform_x(self, X) -> np.ndarray:
        return _scale(np.asarray(X, dtype=float), self.x_min, self.x_max)

    def transform_y(self, y) -> np.ndarray:
        return _scale(np.asarray(y, dtype=float), self.y_min, self.y_max)

    def inverse_x(self, Xs) -> np.ndarray:
        return np.asarray(Xs, dtype=float) * (self.x_max - self.x_min) + self.x_min

    def inverse_y(self, ys):
        return np.asarray(ys, dtype=float) * (self.y_max - self.y_min) + self.y_min

    def __eq__(self, other):
        if not isinstance(other, Scaler):
            return NotImplemented
        return (
            np.array_equal(self.x_min, other.x_min)
            and np.array_equal(self.x_max, other.x_max)
            and self.y_min == other.y_min
            and self.y_max == other.y_max
        )

    def to_dict(self) -> dict:
        return {
            "x_min": self.x_min.tolist(),
            "x_max": self.x_max.tolist(),
            "y_min": self.y_min,
            "y_max": self.y_max,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["x_min"], d["x_max"], d["y_min"], d["y_max"])


def fit_scaler(train: Dataset) -> Scaler:
    if len(train) == 0:
        raise DataError("cannot fit a scaler on an empty training set")
    return Scaler(train.X.min(axis=0), train.X.max(axis=0), train.y.min(), train.y.max())


def apply_scaler(scaler: Scaler, dataset: Dataset) -> Dataset:
    return Dataset(
        dataset.schema,
        scaler.transform_x(dataset.X),
        scaler.transform_y(dataset.y),
        dataset.performance_name,
        dataset.unit,
    )


# -- synthetic landscapes ---------------------------------------------------------------


def key_option_count(clusters: int) -> int:
    return 0 if clusters <= 1 else math.ceil(math.log2(clusters))


def planted_cluster(X: np.ndarray, clusters: int) -> np.ndarray:
    """Cluster id encoded by the leading binary key options of a synthetic landscape."""
    m = key_option_count(clusters)
    X = np.atleast_2d(np.asarray(X))
    ids = np.zeros(X.shape[0], dtype=int)
    for j in range(m):
        ids = ids * 2 + X[:, j].astype(int)
    return ids


def synth_landscape(
    clusters: int,
    per_cluster: int,
    options: int,
    gap: float,
    noise: float,
    seed: int,
) -> Dataset:
    """Sample-sparse test landscape.

    The first ``ceil(log2(clusters))`` options are binary key options whose bit
    pattern selects the cluster; the remaining options are numeric in [0, 1).
    Cluster means are spaced ``gap + 2 * noise`` apart, so realised means differ by
    at least ``gap``.  Inside a cluster, performance is the cluster mean plus a
    cluster-specific linear trend and uniform noise, bounded by ``noise`` in total.
    """
    if clusters < 1:
        raise DataError("clusters must be >= 1")
    if per_cluster < 2:
        raise DataError("per_cluster must be >= 2")
    m = key_option_count(clusters)
    n_num = options - m
    if n_num < 1:
        raise DataError(f"need more than {m} options to host {clusters} clusters")

    rng = np.random.default_rng(seed)
    spacing = gap + 2.0 * noise
    weights = rng.uniform(-1.0, 1.0, size=(clusters, n_num))
    blocks_x, blocks_y = [], []
    for c in range(clusters):
        bits = [(c >> (m - 1 - j)) & 1 for j in range(m)]
        num = rng.uniform(0.0, 1.0, size=(per_cluster, n_num))
        w = weights[c]
        trend = (2.0 * num - 1.0) @ w / np.abs(w).sum()
        eps = rng.uniform(-1.0, 1.0, size=per_cluster)
        y = spacing * (c + 1) + noise * (0.95 * trend + 0.05 * eps)
        key = np.tile(np.asarray(bits, dtype=float), (per_cluster, 1))
        blocks_x.append(np.hstack([key, num]))
        blocks_y.append(y)
    X = np.vstack(blocks_x)
    y = np.concatenate(blocks_y)
    check_unique(X)
    names = [f"key{j}" for j in range(m)] + [f"opt{j}" for j in range(n_num)]
    schema = tuple(
        OptionSchema(name, BINARY if j < m else NUMERIC, float(X[:, j].min()), float(X[:, j].max()))
        for j, name in enumerate(names)
    )
    return Dataset(schema, X, y, "performance", "")
