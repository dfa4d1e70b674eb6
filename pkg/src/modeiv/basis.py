"""Design-matrix construction for the two-stage estimators.

Continuous columns receive polynomial powers and, optionally, evenly spaced
Gaussian bumps over their training range; binary (one-hot) columns enter
linearly and can modulate the continuous features multiplicatively. Rich
expansions (degree >= 2 or any bumps) are built on studentized columns for
conditioning; plain linear features keep the raw scale so degenerate
configurations reproduce ordinary linear designs exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ColumnExpansion:
    """Feature recipe for one continuous column."""

    degree: int
    mean: float
    scale: float
    centers: tuple[float, ...]
    width: float

    @property
    def n_features(self) -> int:
        return self.degree + len(self.centers)

    def features(self, column: np.ndarray) -> np.ndarray:
        s = (column - self.mean) / self.scale
        blocks = [s[:, None] ** np.arange(1, self.degree + 1)]
        if self.centers:
            c = np.asarray(self.centers)
            blocks.append(np.exp(-((s[:, None] - c[None, :]) ** 2) / (2.0 * self.width**2)))
        return np.hstack(blocks)

    def to_doc(self) -> dict:
        return {
            "degree": self.degree,
            "mean": self.mean,
            "scale": self.scale,
            "centers": list(self.centers),
            "width": self.width,
        }

    @staticmethod
    def from_doc(doc: dict) -> "ColumnExpansion":
        return ColumnExpansion(
            degree=int(doc["degree"]),
            mean=float(doc["mean"]),
            scale=float(doc["scale"]),
            centers=tuple(float(c) for c in doc["centers"]),
            width=float(doc["width"]),
        )


def fit_expansion(column: np.ndarray, degree: int, n_bumps: int) -> ColumnExpansion:
    """Calibrate an expansion on a training column.

    Studentizes only when the expansion is rich; bump centers span the
    studentized training range with width equal to their spacing.
    """
    if degree < 1:
        raise ConfigError("polynomial degree must be at least 1")
    rich = degree >= 2 or n_bumps > 0
    if rich:
        mean = float(column.mean())
        scale = float(column.std())
        if scale <= 0:
            scale = 1.0
    else:
        mean, scale = 0.0, 1.0
    centers: tuple[float, ...] = ()
    width = 1.0
    if n_bumps > 0:
        s = (column - mean) / scale
        lo, hi = float(s.min()), float(s.max())
        if hi <= lo:
            hi = lo + 1.0
        grid = np.linspace(lo, hi, n_bumps)
        centers = tuple(grid.tolist())
        width = (hi - lo) / n_bumps if n_bumps > 1 else (hi - lo)
    return ColumnExpansion(degree=degree, mean=mean, scale=scale, centers=centers, width=width)


def _is_binary(column: np.ndarray) -> bool:
    return len(np.unique(column)) <= 2


@dataclass(frozen=True)
class CovariateMap:
    """Covariate design recipe fitted on training data.

    Produces ``[1, continuous features, binary columns, (binary x continuous
    interactions), extra columns]``. Extra columns are additional instrument
    columns conditioned on under leave-one-out fitting; when
    ``extra_interacted`` they multiply ``[1, continuous features]`` the same
    way instrument blocks do. At prediction time, with no instrument values
    available, extras are filled with their training means — exact
    marginalization because every extra term is linear in the instrument.
    """

    d: int
    continuous_cols: tuple[int, ...]
    binary_cols: tuple[int, ...]
    expansions: tuple[ColumnExpansion, ...]
    interactions: bool
    extra_cols: tuple[int, ...] = ()
    extra_means: tuple[float, ...] = ()
    extra_interacted: bool = False

    @property
    def n_continuous_features(self) -> int:
        return sum(e.n_features for e in self.expansions)

    @property
    def n_features(self) -> int:
        n = 1 + self.n_continuous_features + len(self.binary_cols)
        if self.interactions:
            n += len(self.binary_cols) * self.n_continuous_features
        per_extra = 1 + self.n_continuous_features if self.extra_interacted else 1
        return n + per_extra * len(self.extra_cols)

    def continuous_features(self, x: np.ndarray) -> np.ndarray:
        if not self.continuous_cols:
            return np.empty((x.shape[0], 0))
        return np.hstack(
            [e.features(x[:, c]) for c, e in zip(self.continuous_cols, self.expansions)]
        )

    def features(self, x: np.ndarray, z: np.ndarray | None = None) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.d:
            raise ConfigError(f"expected {self.d} covariates, got {x.shape[1]}")
        n = x.shape[0]
        cont = self.continuous_features(x)
        blocks = [np.ones((n, 1)), cont]
        if self.binary_cols:
            binary = x[:, list(self.binary_cols)]
            blocks.append(binary)
            if self.interactions and cont.shape[1]:
                blocks.append(
                    (binary[:, :, None] * cont[:, None, :]).reshape(n, -1)
                )
        if self.extra_cols:
            base = np.hstack([np.ones((n, 1)), cont]) if self.extra_interacted else np.ones((n, 1))
            for pos, col in enumerate(self.extra_cols):
                ze = np.full(n, self.extra_means[pos]) if z is None else z[:, col]
                blocks.append(ze[:, None] * base)
        return np.hstack(blocks)

    def to_doc(self) -> dict:
        return {
            "d": self.d,
            "continuous_cols": list(self.continuous_cols),
            "binary_cols": list(self.binary_cols),
            "expansions": [e.to_doc() for e in self.expansions],
            "interactions": self.interactions,
            "extra_cols": list(self.extra_cols),
            "extra_means": list(self.extra_means),
            "extra_interacted": self.extra_interacted,
        }

    @staticmethod
    def from_doc(doc: dict) -> "CovariateMap":
        return CovariateMap(
            d=int(doc["d"]),
            continuous_cols=tuple(int(c) for c in doc["continuous_cols"]),
            binary_cols=tuple(int(c) for c in doc["binary_cols"]),
            expansions=tuple(ColumnExpansion.from_doc(e) for e in doc["expansions"]),
            interactions=bool(doc["interactions"]),
            extra_cols=tuple(int(c) for c in doc["extra_cols"]),
            extra_means=tuple(float(m) for m in doc["extra_means"]),
            extra_interacted=bool(doc.get("extra_interacted", False)),
        )


def fit_covariate_map(
    x: np.ndarray,
    degree: int,
    n_bumps: int,
    interactions: bool,
    z: np.ndarray | None = None,
    extra_cols: tuple[int, ...] = (),
    extra_interacted: bool = False,
) -> CovariateMap:
    """Classify covariate columns and calibrate their expansions."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    continuous, binary = [], []
    for c in range(x.shape[1]):
        (binary if _is_binary(x[:, c]) else continuous).append(c)
    expansions = tuple(fit_expansion(x[:, c], degree, n_bumps) for c in continuous)
    extra_means: tuple[float, ...] = ()
    if extra_cols:
        if z is None:
            raise ConfigError("extra_cols requires the instrument matrix")
        extra_means = tuple(float(z[:, c].mean()) for c in extra_cols)
    return CovariateMap(
        d=x.shape[1],
        continuous_cols=tuple(continuous),
        binary_cols=tuple(binary),
        expansions=expansions,
        interactions=interactions,
        extra_cols=tuple(extra_cols),
        extra_means=extra_means,
        extra_interacted=extra_interacted,
    )


@dataclass(frozen=True)
class TreatmentMap:
    """Series expansion of the treatment for the sieve estimator."""

    expansion: ColumnExpansion

    @property
    def n_features(self) -> int:
        return self.expansion.n_features

    def features(self, t: np.ndarray) -> np.ndarray:
        return self.expansion.features(np.asarray(t, dtype=np.float64))

    def to_doc(self) -> dict:
        return self.expansion.to_doc()

    @staticmethod
    def from_doc(doc: dict) -> "TreatmentMap":
        return TreatmentMap(expansion=ColumnExpansion.from_doc(doc))


def fit_treatment_map(t: np.ndarray, degree: int, n_bumps: int) -> TreatmentMap:
    return TreatmentMap(expansion=fit_expansion(np.asarray(t, dtype=np.float64), degree, n_bumps))
