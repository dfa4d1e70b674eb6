"""Two-stage instrumental-variable estimators and ensemble fitting.

Three estimator kinds share one fitting core:

* ``linear_tsls`` — classic two-stage least squares with a scalar treatment
  slope,
* ``cond_linear`` — a conditionally linear response ``phi(x)'h + t *
  phi(x)'g`` whose slope varies with covariates, and
* ``sieve`` — an additive series estimator with a basis expansion of the
  treatment.

Least squares is solved by singular-value decomposition with an optional
ridge penalty (stacked rows), treating singular values below 1e-10 of the
largest as zero. The first-stage F diagnostic is computed from plain
least-squares residuals, so it is invariant to affine rescaling of the
instrument and independent of the ridge setting.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .basis import CovariateMap, TreatmentMap, fit_covariate_map, fit_expansion, fit_treatment_map
from .data import Dataset, TestPoint
from .errors import ConfigError, ModeIVError, SingularDesignError, WeakInstrumentError

log = logging.getLogger(__name__)

KINDS = ("linear_tsls", "cond_linear", "sieve")
DEFAULT_RIDGE_SCALE = 1e-6
SV_CUTOFF = 1e-10


@dataclass(frozen=True)
class EstimatorSpec:
    """Estimator kind plus basis and regularization settings.

    ``degree``/``n_bumps`` parameterize the basis: for ``cond_linear`` they
    expand the continuous covariates, for ``sieve`` the treatment (and the
    instrument side). ``ridge_lambda=None`` means 0 for ``linear_tsls`` and
    ``1e-6 * n`` for the basis estimators; a non-positive
    ``weak_instrument_threshold`` disables the first-stage F check.
    """

    kind: str = "linear_tsls"
    degree: int = 1
    n_bumps: int = 0
    ridge_lambda: float | None = None
    weak_instrument_threshold: float = 10.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}; expected one of {KINDS}")
        if self.degree < 1:
            raise ConfigError("degree must be at least 1")
        if self.n_bumps < 0:
            raise ConfigError("n_bumps must be non-negative")
        if self.ridge_lambda is not None and self.ridge_lambda < 0:
            raise ConfigError("ridge_lambda must be non-negative")

    def effective_ridge(self, n: int) -> float:
        if self.ridge_lambda is not None:
            return self.ridge_lambda
        return 0.0 if self.kind == "linear_tsls" else DEFAULT_RIDGE_SCALE * n

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "degree": self.degree,
            "n_bumps": self.n_bumps,
            "ridge_lambda": self.ridge_lambda,
            "weak_instrument_threshold": self.weak_instrument_threshold,
        }

    @staticmethod
    def from_doc(doc: dict) -> "EstimatorSpec":
        return EstimatorSpec(
            kind=doc["kind"],
            degree=int(doc["degree"]),
            n_bumps=int(doc["n_bumps"]),
            ridge_lambda=None if doc["ridge_lambda"] is None else float(doc["ridge_lambda"]),
            weak_instrument_threshold=float(doc["weak_instrument_threshold"]),
        )


def solve_least_squares(design: np.ndarray, response: np.ndarray, ridge: float) -> np.ndarray:
    """SVD least squares with an optional ridge penalty (stacked rows).

    With ``ridge == 0`` a rank-deficient design raises
    :class:`SingularDesignError`; any positive ridge makes the stacked
    system full rank.
    """
    A = np.asarray(design, dtype=np.float64)
    B = np.asarray(response, dtype=np.float64)
    p = A.shape[1]
    if ridge > 0:
        A = np.vstack([A, math.sqrt(ridge) * np.eye(p)])
        pad = np.zeros((p,) if B.ndim == 1 else (p, B.shape[1]))
        B = np.concatenate([B, pad], axis=0)
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s[0] <= 0 or (ridge == 0 and s[-1] <= SV_CUTOFF * s[0]):
        raise SingularDesignError(
            f"design matrix is rank deficient ({p} columns); set ridge_lambda > 0 "
            "or reduce the basis"
        )
    proj = U.T @ B
    scaled = proj / s if B.ndim == 1 else proj / s[:, None]
    return Vt.T @ scaled


def _rss(design: np.ndarray, response: np.ndarray):
    sol, _, rank, _ = np.linalg.lstsq(design, response, rcond=SV_CUTOFF)
    resid = response - design @ sol
    return float(resid @ resid), int(rank)


def first_stage_f(design_full: np.ndarray, design_reduced: np.ndarray, response: np.ndarray) -> float:
    """Partial F statistic for the instrument block, from OLS residuals."""
    rss_f, rank_f = _rss(design_full, response)
    rss_r, rank_r = _rss(design_reduced, response)
    q = rank_f - rank_r
    if q <= 0:
        return 0.0
    df = len(response) - rank_f
    if df <= 0 or rss_f <= 0:
        return math.inf
    return ((rss_r - rss_f) / q) / (rss_f / df)


@dataclass
class FittedEstimator:
    """One fitted conditional-outcome function with a prediction interface.

    ``slope_dim`` encodes the functional form: 0 for the additive sieve,
    1 for a scalar treatment slope, and the full covariate-basis width for
    the conditionally linear estimator.
    """

    spec: EstimatorSpec
    instrument_index: int | None
    instrument_set: tuple[int, ...]
    cov_map: CovariateMap
    treat_map: TreatmentMap | None
    slope_dim: int
    first_stage: np.ndarray
    second_stage: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def predict_batch(self, t, x) -> np.ndarray:
        """Evaluate the fitted function at aligned treatment/covariate arrays.

        Leave-one-out instrument covariates are marginalized at their
        training means.
        """
        t = np.asarray(t, dtype=np.float64).reshape(-1)
        phi = self.cov_map.features(np.atleast_2d(x))
        if phi.shape[0] != t.shape[0]:
            raise ConfigError("t and x row counts differ")
        if self.treat_map is not None:
            return np.hstack([phi, self.treat_map.features(t)]) @ self.second_stage
        p = phi.shape[1]
        head = self.second_stage[:p]
        slope_coefs = self.second_stage[p:]
        return phi @ head + t * (phi[:, : self.slope_dim] @ slope_coefs)

    def predict(self, point: TestPoint) -> float:
        return float(self.predict_batch(np.array([point.t]), point.x[None, :])[0])

    def to_doc(self) -> dict:
        return {
            "spec": self.spec.to_doc(),
            "instrument_index": self.instrument_index,
            "instrument_set": list(self.instrument_set),
            "cov_map": self.cov_map.to_doc(),
            "treat_map": None if self.treat_map is None else self.treat_map.to_doc(),
            "slope_dim": self.slope_dim,
            "first_stage": np.asarray(self.first_stage).tolist(),
            "second_stage": np.asarray(self.second_stage).tolist(),
            "diagnostics": dict(self.diagnostics),
        }

    @staticmethod
    def from_doc(doc: dict) -> "FittedEstimator":
        return FittedEstimator(
            spec=EstimatorSpec.from_doc(doc["spec"]),
            instrument_index=doc["instrument_index"],
            instrument_set=tuple(int(j) for j in doc["instrument_set"]),
            cov_map=CovariateMap.from_doc(doc["cov_map"]),
            treat_map=None if doc["treat_map"] is None else TreatmentMap.from_doc(doc["treat_map"]),
            slope_dim=int(doc["slope_dim"]),
            first_stage=np.asarray(doc["first_stage"], dtype=np.float64),
            second_stage=np.asarray(doc["second_stage"], dtype=np.float64),
            diagnostics=dict(doc["diagnostics"]),
        )


def predict(estimator: FittedEstimator, point: TestPoint) -> float:
    """Deterministic evaluation of a fitted estimator at one test point."""
    return estimator.predict(point)


def _check_instruments(data: Dataset, instruments) -> tuple[int, ...]:
    instruments = tuple(int(j) for j in instruments)
    if not instruments:
        raise ConfigError("at least one instrument is required")
    if len(set(instruments)) != len(instruments):
        raise ConfigError(f"instrument indices must be distinct: {instruments}")
    bad = [j for j in instruments if j < 0 or j >= data.k]
    if bad:
        raise ConfigError(f"instrument indices {bad} out of range for k={data.k}")
    return instruments


def fit_instrument(
    data: Dataset,
    instruments,
    spec: EstimatorSpec,
    extra_z: tuple[int, ...] = (),
) -> FittedEstimator:
    """Fit one estimator using the given instrument column(s).

    ``extra_z`` instrument columns are conditioned on as plain covariates
    in both stages (leave-one-out ensembles pass the other candidates
    here). A single instrument is recorded as ``instrument_index``.
    """
    instruments = _check_instruments(data, instruments)
    extra_z = tuple(int(j) for j in extra_z)
    overlap = set(instruments) & set(extra_z)
    if overlap:
        raise ConfigError(f"instruments {sorted(overlap)} cannot also be conditioned on")
    n = data.n
    ridge = spec.effective_ridge(n)

    if spec.kind == "cond_linear":
        cov_degree, cov_bumps, interactions = spec.degree, spec.n_bumps, True
    elif spec.kind == "sieve":
        cov_degree, cov_bumps, interactions = spec.degree, 0, False
    else:
        cov_degree, cov_bumps, interactions = 1, 0, False
    # a rich basis implies nonlinear treatment channels, so instrument and
    # conditioned-on columns multiply the continuous features; a degree-1
    # basis keeps them additive
    rich = spec.degree >= 2 or spec.n_bumps > 0
    cov_map = fit_covariate_map(
        data.x,
        cov_degree,
        cov_bumps,
        interactions,
        z=data.z,
        extra_cols=extra_z,
        extra_interacted=spec.kind == "cond_linear" and rich,
    )
    phi = cov_map.features(data.x, data.z)

    treat_map = None
    if spec.kind == "linear_tsls":
        inst_block = data.z[:, list(instruments)]
        slope_dim = 1
    elif spec.kind == "cond_linear":
        if rich:
            base = np.hstack([np.ones((n, 1)), cov_map.continuous_features(data.x)])
            inst_block = np.hstack([data.z[:, [j]] * base for j in instruments])
        else:
            inst_block = data.z[:, list(instruments)]
        slope_dim = phi.shape[1]
    else:
        inst_block = np.hstack(
            [
                fit_expansion(data.z[:, j], spec.degree, spec.n_bumps).features(data.z[:, j])
                for j in instruments
            ]
        )
        treat_map = fit_treatment_map(data.t, spec.degree, spec.n_bumps)
        slope_dim = 0

    design1 = np.hstack([phi, inst_block])
    p2 = phi.shape[1] + (treat_map.n_features if treat_map is not None else slope_dim)
    if n <= design1.shape[1] or n <= p2:
        raise ConfigError(
            f"n={n} must exceed the design width (stage 1: {design1.shape[1]}, "
            f"stage 2: {p2}); reduce degree or n_bumps"
        )

    f_stat = first_stage_f(design1, phi, data.t)
    if spec.weak_instrument_threshold > 0 and f_stat < spec.weak_instrument_threshold:
        label = instruments[0] if len(instruments) == 1 else instruments
        raise WeakInstrumentError(
            f"instrument {label}: first-stage F={f_stat:.3g} below threshold "
            f"{spec.weak_instrument_threshold:.3g}"
        )

    if spec.kind == "sieve":
        stage1 = solve_least_squares(design1, treat_map.features(data.t), ridge)
        predicted = design1 @ stage1
        design2 = np.hstack([phi, predicted])
        t_hat = predicted[:, 0]
    else:
        stage1 = solve_least_squares(design1, data.t, ridge)
        t_hat = design1 @ stage1
        design2 = np.hstack([phi, t_hat[:, None] * phi[:, :slope_dim]])
    stage2 = solve_least_squares(design2, data.y, ridge)

    resid1 = data.t - t_hat
    resid2 = data.y - design2 @ stage2
    diagnostics = {
        "first_stage_f": f_stat,
        "stage1_resid_var": float(resid1 @ resid1 / n),
        "stage2_resid_var": float(resid2 @ resid2 / n),
        "stage1_columns": int(design1.shape[1]),
        "stage2_columns": int(design2.shape[1]),
        "n_train": int(n),
    }
    if not (np.all(np.isfinite(stage1)) and np.all(np.isfinite(stage2))):
        raise SingularDesignError("fit produced non-finite coefficients")
    return FittedEstimator(
        spec=spec,
        instrument_index=instruments[0] if len(instruments) == 1 else None,
        instrument_set=instruments,
        cov_map=cov_map,
        treat_map=treat_map,
        slope_dim=slope_dim,
        first_stage=stage1,
        second_stage=stage2,
        diagnostics=diagnostics,
    )


def fit_linear_tsls(data: Dataset, j: int, spec: EstimatorSpec | None = None) -> FittedEstimator:
    """Two-stage least squares on instrument ``j``."""
    spec = EstimatorSpec() if spec is None else replace(spec, kind="linear_tsls")
    return fit_instrument(data, (j,), spec)


def fit_cond_linear(data: Dataset, j: int, spec: EstimatorSpec) -> FittedEstimator:
    """Conditionally linear two-stage fit on instrument ``j``."""
    if spec.kind != "cond_linear":
        spec = replace(spec, kind="cond_linear")
    return fit_instrument(data, (j,), spec)


def fit_sieve(data: Dataset, j: int, spec: EstimatorSpec) -> FittedEstimator:
    """Additive series IV fit on instrument ``j``."""
    if spec.kind != "sieve":
        spec = replace(spec, kind="sieve")
    return fit_instrument(data, (j,), spec)


def fit_pooled(data: Dataset, instruments, spec: EstimatorSpec) -> FittedEstimator:
    """One estimator treating all given instrument columns jointly."""
    return fit_instrument(data, instruments, spec)


@dataclass(frozen=True)
class EnsembleFitConfig:
    """Which instruments to fit, how, and how to treat the others."""

    spec: EstimatorSpec
    instruments: tuple[int, ...] | None = None
    conditioning: str = "independent"
    skip_failed: bool = False

    def __post_init__(self):
        if self.conditioning not in ("independent", "leave_one_out"):
            raise ConfigError("conditioning must be 'independent' or 'leave_one_out'")
        if self.instruments is not None:
            object.__setattr__(self, "instruments", tuple(int(j) for j in self.instruments))


def fit_ensemble(data: Dataset, config: EnsembleFitConfig) -> list[FittedEstimator]:
    """Fit one estimator per selected instrument.

    Under leave-one-out conditioning, estimator ``j`` includes every other
    instrument column as an observed covariate in both stages. Per-instrument
    failures abort the fit unless ``skip_failed`` is set, in which case they
    are logged and omitted (callers can recover the skipped set by comparing
    ``instrument_index`` against the request).
    """
    instruments = config.instruments if config.instruments is not None else tuple(range(data.k))
    instruments = _check_instruments(data, instruments)
    fitted: list[FittedEstimator] = []
    for j in instruments:
        extra = tuple(i for i in range(data.k) if i != j) if config.conditioning == "leave_one_out" else ()
        try:
            fitted.append(fit_instrument(data, (j,), config.spec, extra_z=extra))
        except ModeIVError as exc:
            if not config.skip_failed:
                raise
            log.warning("skipping instrument %d: %s", j, exc)
    if not fitted:
        raise ConfigError("all instruments failed to fit")
    return fitted
