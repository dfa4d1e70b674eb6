"""Synthetic data generators with known ground truth.

Two generators are provided:

* a nonlinear demand simulation with multiple candidate instruments, where a
  configurable subset of instruments leaks directly into the outcome
  (``generate_demand``), and
* a genetic-style simulation with binomial instruments and a heterogeneous,
  conditionally linear treatment effect (``generate_mr``).

Both use a two-seed scheme: ``param_seed`` fixes the structural parameter
draws (reusable across sample sizes and methods) while ``noise_seed`` fixes
the per-replicate noise. All randomness flows through numpy's PCG64
generator, so identical seeds reproduce datasets bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import ConfigError

PILOT_SIZE = 100_000
"""Sample count for the parameter-seed pilot draw used to calibrate scales."""


def psi(t):
    """Nonlinear time profile driving the demand simulation.

    ``psi(t) = 2((t-5)^4/600 + exp(-4(t-5)^2) + t/10 - 2)``; defined on all
    reals, used on [0, 10].
    """
    t = np.asarray(t, dtype=np.float64)
    s = t - 5.0
    out = 2.0 * (s**4 / 600.0 + np.exp(-4.0 * s**2) + t / 10.0 - 2.0)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Demand simulation
# ---------------------------------------------------------------------------

DEMAND_TYPE_EFFECTS = np.arange(1.0, 8.0)
"""Per-customer-type multipliers (7 equally likely one-hot types)."""


@dataclass(frozen=True)
class DemandConfig:
    """Parameters of the multi-instrument demand simulation.

    ``valid_indices`` are the instruments with no direct effect on the
    outcome; ``gamma`` scales the direct-effect leak of the remaining
    instruments and ``rho`` the confounding strength. The four constants
    standardize the raw treatment and outcome to roughly zero mean and unit
    variance.
    """

    k: int
    valid_indices: tuple[int, ...]
    gamma: float = 1.0
    rho: float = 0.5
    n: int = 10_000
    param_seed: int = 0
    noise_seed: int = 1
    p_std: float = 3.7
    p_mu: float = 17.779
    y_std: float = 158.0
    y_mu: float = -292.1

    def __post_init__(self):
        object.__setattr__(self, "valid_indices", tuple(sorted(set(self.valid_indices))))
        if self.k < 1:
            raise ConfigError("k must be at least 1")
        if not self.valid_indices:
            raise ConfigError("at least one instrument must be valid")
        if any(j < 0 or j >= self.k for j in self.valid_indices):
            raise ConfigError(f"valid_indices out of range for k={self.k}")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError("rho must lie in [0, 1]")
        if self.n < 1:
            raise ConfigError("n must be positive")

    @property
    def invalid_indices(self) -> tuple[int, ...]:
        valid = set(self.valid_indices)
        return tuple(j for j in range(self.k) if j not in valid)


def demand_config(k: int, n_invalid: int, **kwargs) -> DemandConfig:
    """Convenience constructor: the last ``n_invalid`` instruments leak."""
    if not (0 <= n_invalid < k):
        raise ConfigError(f"n_invalid={n_invalid} must lie in [0, k-1] for k={k}")
    return DemandConfig(k=k, valid_indices=tuple(range(k - n_invalid)), **kwargs)


def _draw_demand_params(config: DemandConfig):
    rng = np.random.default_rng(config.param_seed)
    treat_coefs = rng.uniform(0.5, 1.5, config.k)
    direct_coefs = rng.uniform(0.5, 1.5, config.k)
    direct_coefs = direct_coefs.copy()
    direct_coefs[list(config.valid_indices)] = 0.0
    return treat_coefs, direct_coefs


@dataclass(frozen=True)
class DemandTruth:
    """Frozen demand parameters plus the noiseless structural response."""

    config: DemandConfig
    treat_coefs: np.ndarray
    direct_coefs: np.ndarray

    kind = "demand"

    def structural(self, t, x_rows) -> np.ndarray:
        """Standardized noiseless outcome at standardized treatment ``t``.

        ``x_rows`` columns are (time, 7 one-hot customer types).
        """
        t = np.asarray(t, dtype=np.float64)
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        time = x_rows[:, 0]
        type_effect = x_rows[:, 1:8] @ DEMAND_TYPE_EFFECTS
        p_raw = t * self.config.p_std + self.config.p_mu
        y_raw = 100.0 + 10.0 * type_effect * psi(time) + (type_effect * psi(time) - 2.0) * p_raw
        return (y_raw - self.config.y_mu) / self.config.y_std

    def slope(self, x_rows) -> np.ndarray:
        """Treatment slope of the standardized structural response."""
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        time = x_rows[:, 0]
        type_effect = x_rows[:, 1:8] @ DEMAND_TYPE_EFFECTS
        return (type_effect * psi(time) - 2.0) * self.config.p_std / self.config.y_std

    def direct(self, z_rows) -> np.ndarray:
        """Standardized instrument-leak term at the given instrument rows."""
        z_rows = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
        return self.config.gamma * 60.0 * np.sin(z_rows @ self.direct_coefs) / self.config.y_std

    def response(self, t, x_rows, z_rows) -> np.ndarray:
        """Noiseless outcome including the deterministic instrument leak.

        This is the evaluation target on held-out rows: the structural
        effect of the treatment plus the direct effects the instruments
        exert regardless of it.
        """
        return self.structural(t, x_rows) + self.direct(z_rows)

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "config": _demand_config_doc(self.config),
            "treat_coefs": self.treat_coefs.tolist(),
            "direct_coefs": self.direct_coefs.tolist(),
        }


def generate_demand(config: DemandConfig, zero_noise: bool = False):
    """Draw one demand dataset and its ground-truth oracle.

    The dataset treatment column is the standardized price; covariates are
    (time, 7 one-hot customer types). ``zero_noise`` zeroes the additive
    noise draws after sampling so the draw stream (and hence z, time, types)
    is unchanged.
    """
    treat_coefs, direct_coefs = _draw_demand_params(config)
    rng = np.random.default_rng(config.noise_seed)
    n, k = config.n, config.k
    z = rng.standard_normal((n, k))
    nu = rng.standard_normal(n)
    time = rng.uniform(0.0, 10.0, n)
    types = rng.integers(0, 7, n)
    eta = rng.standard_normal(n)
    if zero_noise:
        nu = np.zeros(n)
        eta = np.zeros(n)

    onehot = np.zeros((n, 7))
    onehot[np.arange(n), types] = 1.0
    e = config.rho * nu + math.sqrt(1.0 - config.rho**2) * eta

    curve = psi(time)
    type_effect = onehot @ DEMAND_TYPE_EFFECTS
    p_raw = 25.0 + (z @ treat_coefs + 3.0) * curve + nu
    y_raw = (
        100.0
        + 10.0 * type_effect * curve
        + (type_effect * curve - 2.0) * p_raw
        + config.gamma * 60.0 * np.sin(z @ direct_coefs)
        + e
    )
    p = (p_raw - config.p_mu) / config.p_std
    y = (y_raw - config.y_mu) / config.y_std

    dataset = Dataset(
        y=y,
        t=p,
        x=np.column_stack([time, onehot]),
        z=z,
        x_names=("time",) + tuple(f"type_{c + 1}" for c in range(7)),
    )
    truth = DemandTruth(config=config, treat_coefs=treat_coefs, direct_coefs=direct_coefs)
    return dataset, truth


# ---------------------------------------------------------------------------
# Genetic-style simulation with heterogeneous effects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MRConfig:
    """Parameters of the binomial-instrument simulation.

    The first ``n_valid`` of the ``K`` instruments have no direct effect on
    the outcome. Treatment and outcome are rescaled so that their variances
    are one; the instruments jointly explain about 10% of the treatment
    variance.
    """

    K: int = 100
    n_valid: int = 50
    rho: float = 0.5
    n: int = 50_000
    param_seed: int = 0
    noise_seed: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError("K must be at least 1")
        if not (1 <= self.n_valid <= self.K):
            raise ConfigError(f"n_valid={self.n_valid} must lie in [1, K={self.K}]")
        if not (0.0 <= self.rho <= 1.0):
            raise ConfigError("rho must lie in [0, 1]")
        if self.n < 1:
            raise ConfigError("n must be positive")

    @property
    def valid_indices(self) -> tuple[int, ...]:
        return tuple(range(self.n_valid))

    @property
    def invalid_indices(self) -> tuple[int, ...]:
        return tuple(range(self.n_valid, self.K))


def round_to_tenth(values):
    """Round to the nearest multiple of 0.1, ties away from zero."""
    v = np.asarray(values, dtype=np.float64)
    out = np.sign(v) * np.floor(np.abs(v) * 10.0 + 0.5) / 10.0
    out = out + 0.0  # normalize -0.0
    return float(out) if out.ndim == 0 else out


def _binomial2(rng: np.random.Generator, p_freq: np.ndarray, n: int) -> np.ndarray:
    # two Bernoulli draws per variant, for exact reproducibility
    a = rng.random((n, len(p_freq))) < p_freq
    b = rng.random((n, len(p_freq))) < p_freq
    return (a.astype(np.float64) + b.astype(np.float64))


@dataclass(frozen=True)
class MRParams:
    """Structural parameters derived from ``param_seed``."""

    p_freq: np.ndarray
    inst_effects: np.ndarray  # effect of each instrument on the treatment
    direct_effects: np.ndarray  # direct effect of each instrument on the outcome
    slope_coefs: np.ndarray  # sparse length-10 vector defining beta(x)
    sigma_u: float
    sigma_x: float
    sigma_y: float


def draw_mr_params(config: MRConfig) -> MRParams:
    """Draw all structural parameters and calibrate the noise scales.

    Scales are calibrated on a pilot draw of ``PILOT_SIZE`` samples from the
    parameter stream so they do not depend on ``n`` or ``noise_seed``. The
    treatment noise is set so Var(t) = 1 and the confounder/outcome noise
    split the remaining outcome budget equally so Var(y) = 1.
    """
    rng = np.random.default_rng(config.param_seed)
    K = config.K
    p_freq = rng.uniform(0.1, 0.9, K)
    nu_treat = rng.uniform(0.01, 0.2, K)
    nu_direct = rng.uniform(0.01, 0.2, K)
    slope_coefs = np.zeros(10)
    positions = rng.choice(10, size=3, replace=False)
    slope_coefs[positions] = rng.uniform(0.2, 0.5, 3)

    z_pilot = _binomial2(rng, p_freq, PILOT_SIZE)
    x_pilot = rng.uniform(-0.5, 0.5, (PILOT_SIZE, 10))
    mix_pilot = rng.standard_normal(PILOT_SIZE)

    scale_treat = float(np.std(z_pilot @ nu_treat))
    scale_direct = float(np.std(z_pilot @ nu_direct))
    inst_effects = math.sqrt(0.1) / scale_treat * nu_treat

    n_invalid = K - config.n_valid
    direct_effects = (n_invalid * math.sqrt(0.1)) / (K * scale_direct) * nu_direct
    direct_effects = direct_effects.copy()
    direct_effects[: config.n_valid] = 0.0

    genetic = z_pilot @ inst_effects
    var_genetic = float(np.var(genetic))
    if var_genetic >= 1.0:
        raise ConfigError("instrument effects exceed the unit treatment-variance budget")
    # mix_pilot stands in for rho*u + eps_x, which has total variance
    # 1 - var_genetic regardless of how rho splits it
    t_pilot = genetic + math.sqrt(1.0 - var_genetic) * mix_pilot
    signal = round_to_tenth(x_pilot @ slope_coefs) * t_pilot + z_pilot @ direct_effects
    budget = 1.0 - float(np.var(signal))
    if budget <= 0.0:
        raise ConfigError("structural signal variance exceeds the unit outcome budget")
    sigma_u = math.sqrt(budget / 2.0)
    sigma_y = math.sqrt(budget / 2.0)
    var_x = 1.0 - var_genetic - (config.rho * sigma_u) ** 2
    if var_x <= 0.0:
        raise ConfigError(f"rho={config.rho} leaves no treatment-noise variance")
    return MRParams(
        p_freq=p_freq,
        inst_effects=inst_effects,
        direct_effects=direct_effects,
        slope_coefs=slope_coefs,
        sigma_u=sigma_u,
        sigma_x=math.sqrt(var_x),
        sigma_y=sigma_y,
    )


def beta_of_x(x, config: MRConfig) -> float:
    """Heterogeneous treatment effect at covariate vector ``x``."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != 10:
        raise ConfigError(f"x must have length 10, got {x.shape[0]}")
    params = draw_mr_params(config)
    return float(round_to_tenth(float(x @ params.slope_coefs)))


@dataclass(frozen=True)
class MRTruth:
    """Frozen genetic-simulation parameters plus ground-truth functions."""

    config: MRConfig
    params: MRParams

    kind = "mr"

    def slope(self, x_rows) -> np.ndarray:
        x_rows = np.atleast_2d(np.asarray(x_rows, dtype=np.float64))
        return round_to_tenth(x_rows @ self.params.slope_coefs)

    def structural(self, t, x_rows) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        return self.slope(x_rows) * t

    def direct(self, z_rows) -> np.ndarray:
        z_rows = np.atleast_2d(np.asarray(z_rows, dtype=np.float64))
        return z_rows @ self.params.direct_effects

    def response(self, t, x_rows, z_rows) -> np.ndarray:
        """Noiseless outcome including the instruments' direct effects."""
        return self.structural(t, x_rows) + self.direct(z_rows)

    def to_doc(self) -> dict:
        return {
            "kind": self.kind,
            "config": _mr_config_doc(self.config),
            "p_freq": self.params.p_freq.tolist(),
            "inst_effects": self.params.inst_effects.tolist(),
            "direct_effects": self.params.direct_effects.tolist(),
            "slope_coefs": self.params.slope_coefs.tolist(),
            "sigma_u": self.params.sigma_u,
            "sigma_x": self.params.sigma_x,
            "sigma_y": self.params.sigma_y,
        }


def generate_mr(config: MRConfig, zero_noise: bool = False):
    """Draw one genetic-style dataset and its ground-truth oracle."""
    params = draw_mr_params(config)
    rng = np.random.default_rng(config.noise_seed)
    n = config.n
    z = _binomial2(rng, params.p_freq, n)
    x = rng.uniform(-0.5, 0.5, (n, 10))
    u = params.sigma_u * rng.standard_normal(n)
    eps_x = params.sigma_x * rng.standard_normal(n)
    eps_y = params.sigma_y * rng.standard_normal(n)
    if zero_noise:
        u = np.zeros(n)
        eps_x = np.zeros(n)
        eps_y = np.zeros(n)

    t = z @ params.inst_effects + config.rho * u + eps_x
    y = round_to_tenth(x @ params.slope_coefs) * t + z @ params.direct_effects + u + eps_y
    dataset = Dataset(y=y, t=t, x=x, z=z)
    return dataset, MRTruth(config=config, params=params)


# ---------------------------------------------------------------------------
# Config / truth (de)serialization
# ---------------------------------------------------------------------------


def _demand_config_doc(config: DemandConfig) -> dict:
    return {
        "k": config.k,
        "valid_indices": list(config.valid_indices),
        "gamma": config.gamma,
        "rho": config.rho,
        "n": config.n,
        "param_seed": config.param_seed,
        "noise_seed": config.noise_seed,
        "p_std": config.p_std,
        "p_mu": config.p_mu,
        "y_std": config.y_std,
        "y_mu": config.y_mu,
    }


def _mr_config_doc(config: MRConfig) -> dict:
    return {
        "K": config.K,
        "n_valid": config.n_valid,
        "rho": config.rho,
        "n": config.n,
        "param_seed": config.param_seed,
        "noise_seed": config.noise_seed,
    }


def demand_config_from_doc(doc: dict) -> DemandConfig:
    return DemandConfig(
        k=int(doc["k"]),
        valid_indices=tuple(int(j) for j in doc["valid_indices"]),
        gamma=float(doc["gamma"]),
        rho=float(doc["rho"]),
        n=int(doc["n"]),
        param_seed=int(doc["param_seed"]),
        noise_seed=int(doc["noise_seed"]),
        p_std=float(doc.get("p_std", 3.7)),
        p_mu=float(doc.get("p_mu", 17.779)),
        y_std=float(doc.get("y_std", 158.0)),
        y_mu=float(doc.get("y_mu", -292.1)),
    )


def mr_config_from_doc(doc: dict) -> MRConfig:
    return MRConfig(
        K=int(doc["K"]),
        n_valid=int(doc["n_valid"]),
        rho=float(doc["rho"]),
        n=int(doc["n"]),
        param_seed=int(doc["param_seed"]),
        noise_seed=int(doc["noise_seed"]),
    )


def truth_from_doc(doc: dict):
    """Rebuild a truth oracle from its JSON document."""
    kind = doc.get("kind")
    if kind == "demand":
        return DemandTruth(
            config=demand_config_from_doc(doc["config"]),
            treat_coefs=np.asarray(doc["treat_coefs"], dtype=np.float64),
            direct_coefs=np.asarray(doc["direct_coefs"], dtype=np.float64),
        )
    if kind == "mr":
        config = mr_config_from_doc(doc["config"])
        params = MRParams(
            p_freq=np.asarray(doc["p_freq"], dtype=np.float64),
            inst_effects=np.asarray(doc["inst_effects"], dtype=np.float64),
            direct_effects=np.asarray(doc["direct_effects"], dtype=np.float64),
            slope_coefs=np.asarray(doc["slope_coefs"], dtype=np.float64),
            sigma_u=float(doc["sigma_u"]),
            sigma_x=float(doc["sigma_x"]),
            sigma_y=float(doc["sigma_y"]),
        )
        return MRTruth(config=config, params=params)
    raise ConfigError(f"unknown truth kind {kind!r}")
