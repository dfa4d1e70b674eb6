"""Robust instrumental-variable estimation via modal aggregation.

Fit one IV estimator per candidate instrument, then aggregate predictions
through the smallest interval containing V of them; the result stays
consistent as long as the modal instrument-response relationship is driven
by valid instruments, even when individual candidates leak directly into
the outcome.
"""

from .data import Dataset, SplitSpec, TestPoint, load_csv, save_csv, schema_from_header, split
from .errors import (
    ConfigError,
    DegenerateWeightsError,
    ModeIVError,
    ParseError,
    SchemaError,
    SingularDesignError,
    WeakInstrumentError,
)
from .estimators import (
    EnsembleFitConfig,
    EstimatorSpec,
    FittedEstimator,
    fit_cond_linear,
    fit_ensemble,
    fit_linear_tsls,
    fit_pooled,
    fit_sieve,
    predict,
)
from .evaluation import (
    ExperimentReport,
    GridSpec,
    MethodResult,
    build_report,
    cate_abs_bias,
    confidence_interval,
    mse_on_grid,
    run_comparison,
    sensitivity_sweep,
)
from .modal import (
    AggregationConfig,
    EnsemblePredictor,
    ModalInterval,
    SyntheticEstimatorSpec,
    aggregate,
    default_v,
    predict_curve,
    predict_mode,
    shortest_interval,
    simulate_theorem,
)
from .simulate import (
    DemandConfig,
    DemandTruth,
    MRConfig,
    MRTruth,
    beta_of_x,
    demand_config,
    generate_demand,
    generate_mr,
    psi,
    truth_from_doc,
)

__version__ = "0.1.0"

__all__ = [
    "AggregationConfig",
    "ConfigError",
    "Dataset",
    "DegenerateWeightsError",
    "DemandConfig",
    "DemandTruth",
    "EnsembleFitConfig",
    "EnsemblePredictor",
    "EstimatorSpec",
    "ExperimentReport",
    "FittedEstimator",
    "GridSpec",
    "MRConfig",
    "MRTruth",
    "MethodResult",
    "ModalInterval",
    "ModeIVError",
    "ParseError",
    "SchemaError",
    "SingularDesignError",
    "SplitSpec",
    "SyntheticEstimatorSpec",
    "TestPoint",
    "WeakInstrumentError",
    "aggregate",
    "beta_of_x",
    "build_report",
    "cate_abs_bias",
    "confidence_interval",
    "default_v",
    "demand_config",
    "fit_cond_linear",
    "fit_ensemble",
    "fit_linear_tsls",
    "fit_pooled",
    "fit_sieve",
    "generate_demand",
    "generate_mr",
    "load_csv",
    "mse_on_grid",
    "predict",
    "predict_curve",
    "predict_mode",
    "psi",
    "run_comparison",
    "save_csv",
    "schema_from_header",
    "sensitivity_sweep",
    "shortest_interval",
    "simulate_theorem",
    "split",
    "truth_from_doc",
]
