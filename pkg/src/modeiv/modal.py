"""Modal aggregation: shortest interval, membership, weighted modal mean.

Given k per-instrument estimates at a test point, the modal prediction is
the (weighted) mean of the estimates inside a smallest closed interval
containing at least V of them. The window search runs over consecutive
positions of the sorted values, which provably contains a minimal-width
subset; equal-width ties resolve to the leftmost window. Membership uses the
closed interval so the two endpoint estimates always count.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import TestPoint
from .errors import ConfigError, DegenerateWeightsError

TIE_RULES = ("leftmost",)


@dataclass(frozen=True)
class AggregationConfig:
    """Lower bound V on valid instruments plus optional member weights."""

    V: int
    weights: tuple[float, ...] | None = None
    tie_rule: str = "leftmost"

    def __post_init__(self):
        if self.V < 2:
            raise ConfigError("V must be at least 2")
        if self.tie_rule not in TIE_RULES:
            raise ConfigError(f"tie_rule must be one of {TIE_RULES}")
        if self.weights is not None:
            weights = tuple(float(w) for w in self.weights)
            if any(w < 0 for w in weights):
                raise ConfigError("weights must be non-negative")
            object.__setattr__(self, "weights", weights)


def default_v(k: int) -> int:
    """Half the instrument count, rounded up."""
    return max(2, -(-k // 2))


@dataclass(frozen=True)
class ModalInterval:
    """Smallest closed interval holding V estimates, with member indices."""

    lower: float
    upper: float
    members: tuple[int, ...]

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigError("interval endpoints out of order")


def _check_values(matrix: np.ndarray, V: int) -> None:
    k = matrix.shape[1]
    if not (2 <= V <= k):
        raise ConfigError(f"V={V} must lie in [2, k={k}]")
    if not np.all(np.isfinite(matrix)):
        raise ConfigError("estimate values must be finite")


def modal_rows(matrix: np.ndarray, V: int, weights=None):
    """Row-wise modal aggregation of an (m, k) estimate matrix.

    Returns ``(values, lowers, uppers, member_mask)``; every caller funnels
    through here so scalar and vectorized paths agree bit for bit.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    _check_values(matrix, V)
    m, k = matrix.shape
    s = np.sort(matrix, axis=1)
    widths = s[:, V - 1 :] - s[:, : k - V + 1]
    idx = np.argmin(widths, axis=1)  # first minimum = leftmost window
    rows = np.arange(m)
    lowers = s[rows, idx]
    uppers = s[rows, idx + V - 1]
    mask = (matrix >= lowers[:, None]) & (matrix <= uppers[:, None])
    if weights is None:
        w = mask.astype(np.float64)
    else:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (k,):
            raise ConfigError(f"need one weight per estimate (k={k})")
        w = mask * weights[None, :]
    totals = w.sum(axis=1)
    if np.any(totals <= 0):
        raise DegenerateWeightsError("all member weights are zero")
    values = (w * matrix).sum(axis=1) / totals
    return values, lowers, uppers, mask


def shortest_interval(values, V: int) -> ModalInterval:
    """Smallest closed interval containing V of the values.

    Members are the indices of *all* original values inside the interval,
    which can exceed V when outside values coincide with an endpoint.
    """
    arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
    _, lowers, uppers, mask = modal_rows(arr, V)
    return ModalInterval(
        lower=float(lowers[0]),
        upper=float(uppers[0]),
        members=tuple(int(i) for i in np.flatnonzero(mask[0])),
    )


def aggregate(values, config: AggregationConfig) -> float:
    """Weighted mean of the modal members (uniform by default)."""
    arr = np.asarray(values, dtype=np.float64).reshape(1, -1)
    vals, _, _, _ = modal_rows(arr, config.V, config.weights)
    return float(vals[0])


@dataclass(frozen=True)
class EnsemblePredictor:
    """k fitted estimators plus the aggregation settings."""

    estimators: tuple
    config: AggregationConfig

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if len(self.estimators) < self.config.V:
            raise ConfigError(
                f"V={self.config.V} exceeds the ensemble size {len(self.estimators)}"
            )

    @property
    def k(self) -> int:
        return len(self.estimators)

    def estimate_matrix(self, t, x) -> np.ndarray:
        """(m, k) matrix of per-estimator predictions."""
        return np.column_stack([e.predict_batch(t, x) for e in self.estimators])

    def predict_values(self, t, x) -> np.ndarray:
        """Modal predictions only (fast path for grid scoring)."""
        matrix = self.estimate_matrix(t, x)
        vals, _, _, _ = modal_rows(matrix, self.config.V, self.config.weights)
        return vals


def predict_mode(predictor: EnsemblePredictor, point: TestPoint):
    """Modal prediction and interval at one test point."""
    t = np.array([point.t])
    x = point.x[None, :]
    matrix = predictor.estimate_matrix(t, x)
    vals, lowers, uppers, mask = modal_rows(matrix, predictor.config.V, predictor.config.weights)
    interval = ModalInterval(
        lower=float(lowers[0]),
        upper=float(uppers[0]),
        members=tuple(int(i) for i in np.flatnonzero(mask[0])),
    )
    return float(vals[0]), interval


def predict_curve(predictor: EnsemblePredictor, grid):
    """Pointwise modal predictions over a grid of test points.

    Output order matches the grid; membership is recomputed per point.
    """
    points = list(grid)
    if not points:
        return []
    t = np.array([p.t for p in points])
    x = np.vstack([p.x for p in points])
    matrix = predictor.estimate_matrix(t, x)
    vals, lowers, uppers, mask = modal_rows(matrix, predictor.config.V, predictor.config.weights)
    return [
        (
            float(vals[i]),
            ModalInterval(
                lower=float(lowers[i]),
                upper=float(uppers[i]),
                members=tuple(int(j) for j in np.flatnonzero(mask[i])),
            ),
        )
        for i in range(len(points))
    ]


def write_modal_diagnostics(path, t_values, x_rows, results) -> None:
    """Per-point diagnostic CSV: value, endpoints, `;`-joined member list."""
    t_values = np.asarray(t_values, dtype=np.float64)
    x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["t"] + [f"x_{i + 1}" for i in range(x_rows.shape[1])]
        writer.writerow(header + ["f_mode", "lower", "upper", "members"])
        for i, (value, interval) in enumerate(results):
            row = [f"{t_values[i]:.17g}"] + [f"{v:.17g}" for v in x_rows[i]]
            row += [
                f"{value:.17g}",
                f"{interval.lower:.17g}",
                f"{interval.upper:.17g}",
                ";".join(str(j) for j in interval.members),
            ]
            writer.writerow(row)


@dataclass(frozen=True)
class SyntheticEstimatorSpec:
    """Per-instrument limits and noise scales for the consistency harness.

    Estimator j draws ``limits[j] + sds[j] * N(0, 1) / sqrt(n)``, the
    root-n sampling law of an asymptotically normal estimator.
    """

    limits: tuple[float, ...]
    sds: tuple[float, ...]
    n: float
    seed: int = 0

    def __post_init__(self):
        limits = tuple(float(v) for v in self.limits)
        sds = tuple(float(v) for v in self.sds)
        object.__setattr__(self, "limits", limits)
        object.__setattr__(self, "sds", sds)
        if len(limits) < 2:
            raise ConfigError("need at least two synthetic estimators")
        if len(sds) != len(limits):
            raise ConfigError("sds length must match limits")
        if any(s < 0 for s in sds):
            raise ConfigError("sds must be non-negative")
        if self.n <= 0:
            raise ConfigError("n must be positive")


def simulate_theorem(
    spec: SyntheticEstimatorSpec, config: AggregationConfig, replicates: int
) -> np.ndarray:
    """Monte Carlo of the modal estimator over synthetic ensemble draws.

    Requires the modal-validity premise: at least V of the limits share one
    value. Returns the per-replicate modal estimates.
    """
    if replicates < 1:
        raise ConfigError("replicates must be positive")
    limits = np.asarray(spec.limits)
    _, counts = np.unique(limits, return_counts=True)
    if counts.max() < config.V:
        raise ConfigError(
            f"V={config.V} exceeds the largest shared-limit multiplicity {counts.max()}"
        )
    rng = np.random.default_rng(spec.seed)
    draws = limits[None, :] + np.asarray(spec.sds)[None, :] * rng.standard_normal(
        (replicates, len(limits))
    ) / np.sqrt(spec.n)
    vals, _, _, _ = modal_rows(draws, config.V, config.weights)
    return vals
