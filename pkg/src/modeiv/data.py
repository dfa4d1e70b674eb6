"""Tabular data containers, deterministic splitting, and CSV persistence.

The canonical on-disk format is a UTF-8, comma-delimited CSV with header
``y,t,x_1..x_d,z_1..z_k``, ``.`` as the decimal separator and no thousands
separators. Values are written with 17 significant digits so a save/load
round trip reproduces every cell exactly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParseError, SchemaError

ROLES = ("y", "t", "x", "z", "ignore")


def _readonly(values, shape_hint: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"non-finite value in {shape_hint}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Dataset:
    """Immutable table of outcome ``y``, treatment ``t``, covariates ``x``
    (n x d) and candidate instruments ``z`` (n x k).

    Construction rejects non-finite values and mismatched column lengths;
    instances are safe to share across threads.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    z: np.ndarray
    x_names: tuple[str, ...] = ()
    z_names: tuple[str, ...] = ()

    def __post_init__(self):
        y = _readonly(self.y, "y")
        t = _readonly(self.t, "t")
        x = _readonly(self.x, "x")
        z = _readonly(self.z, "z")
        if y.ndim != 1 or t.ndim != 1:
            raise ConfigError("y and t must be one-dimensional")
        if x.ndim == 1:
            x = x.reshape(len(x), -1) if x.size else x.reshape(len(y), 0)
            x.setflags(write=False)
        if z.ndim == 1:
            z = z.reshape(len(z), 1)
            z.setflags(write=False)
        if x.ndim != 2 or z.ndim != 2:
            raise ConfigError("x and z must be two-dimensional")
        n = len(y)
        if n < 1:
            raise ConfigError("dataset must contain at least one row")
        if len(t) != n or x.shape[0] != n or z.shape[0] != n:
            raise ConfigError(
                f"column lengths differ: y={n}, t={len(t)}, x={x.shape[0]}, z={z.shape[0]}"
            )
        if z.shape[1] < 1:
            raise ConfigError("at least one instrument column is required")
        x_names = tuple(self.x_names) or tuple(f"x_{i + 1}" for i in range(x.shape[1]))
        z_names = tuple(self.z_names) or tuple(f"z_{j + 1}" for j in range(z.shape[1]))
        if len(x_names) != x.shape[1]:
            raise ConfigError("x_names length does not match covariate count")
        if len(z_names) != z.shape[1]:
            raise ConfigError("z_names length does not match instrument count")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "x_names", x_names)
        object.__setattr__(self, "z_names", z_names)

    @property
    def n(self) -> int:
        return len(self.y)

    @property
    def d(self) -> int:
        return self.x.shape[1]

    @property
    def k(self) -> int:
        return self.z.shape[1]

    @property
    def column_names(self) -> tuple[str, ...]:
        return ("y", "t") + self.x_names + self.z_names

    def take(self, indices: np.ndarray) -> "Dataset":
        """Row subset in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            y=self.y[idx],
            t=self.t[idx],
            x=self.x[idx],
            z=self.z[idx],
            x_names=self.x_names,
            z_names=self.z_names,
        )


@dataclass(frozen=True)
class TestPoint:
    """A single (treatment value, covariate vector) query."""

    __test__ = False  # not a pytest class, despite the name

    t: float
    x: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=np.float64).reshape(-1))


@dataclass(frozen=True)
class SplitSpec:
    """Seeded train/validation/test fractions; the remainder is test."""

    train_fraction: float
    validation_fraction: float
    seed: int

    def __post_init__(self):
        for name, frac in (
            ("train_fraction", self.train_fraction),
            ("validation_fraction", self.validation_fraction),
        ):
            if not (0.0 < frac < 1.0):
                raise ConfigError(f"{name}={frac} must lie strictly inside (0, 1)")
        if self.train_fraction + self.validation_fraction > 1.0 + 1e-12:
            raise ConfigError("train and validation fractions must sum to at most 1")


def split(dataset: Dataset, spec: SplitSpec):
    """Partition rows into (train, validation, test) by a seeded shuffle.

    Part sizes are ``floor(fraction * n)`` with the remainder assigned to
    test; the same seed always yields the identical partition. A part
    entitled to zero rows is returned as ``None`` (``Dataset`` cannot be
    empty).
    """
    n = dataset.n
    n_train = math.floor(spec.train_fraction * n)
    n_val = math.floor(spec.validation_fraction * n)
    test_fraction = 1.0 - spec.train_fraction - spec.validation_fraction
    n_test = n - n_train - n_val
    if n_train < 1:
        raise ConfigError(f"train fraction {spec.train_fraction} yields no rows for n={n}")
    if n_val < 1:
        raise ConfigError(
            f"validation fraction {spec.validation_fraction} yields no rows for n={n}"
        )
    if test_fraction > 1e-12 and n_test < 1:
        raise ConfigError(f"test remainder {test_fraction:.4g} yields no rows for n={n}")
    perm = np.random.default_rng(spec.seed).permutation(n)
    train = dataset.take(perm[:n_train])
    validation = dataset.take(perm[n_train : n_train + n_val])
    test = dataset.take(perm[n_train + n_val :]) if n_test > 0 else None
    return train, validation, test


def save_csv(dataset: Dataset, path) -> None:
    """Write the canonical CSV (header ``y,t,x_1..x_d,z_1..z_k``)."""
    header = ["y", "t"]
    header += [f"x_{i + 1}" for i in range(dataset.d)]
    header += [f"z_{j + 1}" for j in range(dataset.k)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(dataset.n):
            row = [dataset.y[i], dataset.t[i], *dataset.x[i], *dataset.z[i]]
            writer.writerow([f"{v:.17g}" for v in row])


def schema_from_header(columns) -> dict[str, str]:
    """Derive a column-role schema from canonical header names.

    ``y``/``t`` map to themselves, ``x_*`` to covariates, ``z_*`` to
    instruments; anything else is ignored.
    """
    schema = {}
    for name in columns:
        if name in ("y", "t"):
            schema[name] = name
        elif name.startswith("x_"):
            schema[name] = "x"
        elif name.startswith("z_"):
            schema[name] = "z"
        else:
            schema[name] = "ignore"
    return schema


def load_csv(path, schema: dict[str, str]) -> Dataset:
    """Read a CSV into a :class:`Dataset` using a column-role schema.

    ``schema`` maps each header column to one role in
    ``{"y", "t", "x", "z", "ignore"}``. Exactly one ``y`` and one ``t``
    column are required, plus at least one ``z`` column. Row order is
    preserved.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: file is empty, expected a header row") from None
        rows = list(reader)

    for role in schema.values():
        if role not in ROLES:
            raise SchemaError(f"unknown role {role!r}; expected one of {ROLES}")
    missing = [c for c in schema if c not in header]
    if missing:
        raise SchemaError(f"{path}: schema columns {missing} not present in header")
    unassigned = [c for c in header if c not in schema]
    if unassigned:
        raise SchemaError(f"{path}: header columns {unassigned} have no schema role")

    by_role: dict[str, list[int]] = {"y": [], "t": [], "x": [], "z": []}
    for idx, name in enumerate(header):
        role = schema[name]
        if role != "ignore":
            by_role[role].append(idx)
    if len(by_role["y"]) != 1:
        raise SchemaError(f"{path}: schema must assign exactly one y column")
    if len(by_role["t"]) != 1:
        raise SchemaError(f"{path}: schema must assign exactly one t column")
    if not by_role["z"]:
        raise SchemaError(f"{path}: schema must assign at least one z column")

    n = len(rows)
    if n < 1:
        raise ParseError(f"{path}: no data rows")
    values = np.empty((n, len(header)), dtype=np.float64)
    for i, row in enumerate(rows):
        if len(row) != len(header):
            raise ParseError(f"{path}: row {i + 1} has {len(row)} cells, expected {len(header)}")
        for j, cell in enumerate(row):
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(
                    f"{path}: row {i + 1}, column {header[j]!r}: not numeric: {cell!r}"
                ) from None
            if not math.isfinite(v):
                raise ParseError(f"{path}: row {i + 1}, column {header[j]!r}: non-finite value")
            values[i, j] = v

    return Dataset(
        y=values[:, by_role["y"][0]],
        t=values[:, by_role["t"][0]],
        x=values[:, by_role["x"]] if by_role["x"] else np.empty((n, 0)),
        z=values[:, by_role["z"]],
        x_names=tuple(header[j] for j in by_role["x"]),
        z_names=tuple(header[j] for j in by_role["z"]),
    )
