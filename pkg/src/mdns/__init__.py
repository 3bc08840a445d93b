"""Mean-dependent nonstationary Gaussian spatial models.

The covariance between two sites has a nugget, sill and range that are
link functions of the local mean. The package covers covariance
construction, three estimators, a likelihood-ratio test of stationarity,
kriging, cross-validation and a Monte Carlo simulation harness.
"""
from .covariance import (
    CovParams,
    LinkFamily,
    LinkKind,
    covariance_matrix,
    cross_covariance,
    nonstat_correlation,
)
from .errors import (
    BudgetExhausted,
    ConfigError,
    MdnsError,
    MdnsWarning,
    NotPositiveDefinite,
    NumericalError,
    ValidationError,
)
from .evaluation import CvReport, ModelSpec, crossval, default_model_grid, diagnose_links
from .fitting import FitConfig, FitMethod, FitResult, fit_beta_gls, fit_full_mle, fit_onestep, fit_stationary
from .geometry import (
    KM_PER_DEGREE,
    DesignMatrix,
    ObservationPanel,
    PredictorSet,
    SiteSet,
    build_design,
    distance_matrix,
    load_observations,
    split_folds,
)
from .kernels import BACKEND
from .likelihood import MeanModel, ModelState, penalized_loglik
from .nstest import LrtResult, chi_square_critical, chi_square_upper_tail, lrt_statistic, test_nonstationarity
from .prediction import (
    PredictiveDist,
    interval_coverage,
    krige,
    prediction_score,
    se_quantiles,
    threshold_nonnegative,
)
from .simulation import (
    SimConfig,
    run_estimation_mse,
    run_prediction_experiment,
    run_type1_power,
    simulate_replicate,
    simulation_design,
)

__version__ = "0.1.0"

__all__ = [
    "CovParams",
    "LinkFamily",
    "LinkKind",
    "covariance_matrix",
    "cross_covariance",
    "nonstat_correlation",
    "BudgetExhausted",
    "ConfigError",
    "MdnsError",
    "MdnsWarning",
    "NotPositiveDefinite",
    "NumericalError",
    "ValidationError",
    "KM_PER_DEGREE",
    "DesignMatrix",
    "ObservationPanel",
    "PredictorSet",
    "SiteSet",
    "build_design",
    "distance_matrix",
    "load_observations",
    "split_folds",
    "PredictiveDist",
    "interval_coverage",
    "krige",
    "prediction_score",
    "se_quantiles",
    "threshold_nonnegative",
    "SimConfig",
    "run_estimation_mse",
    "run_prediction_experiment",
    "run_type1_power",
    "simulate_replicate",
    "simulation_design",
    "CvReport",
    "ModelSpec",
    "crossval",
    "default_model_grid",
    "diagnose_links",
    "FitConfig",
    "FitMethod",
    "FitResult",
    "fit_beta_gls",
    "fit_full_mle",
    "fit_onestep",
    "fit_stationary",
    "BACKEND",
    "MeanModel",
    "ModelState",
    "penalized_loglik",
    "LrtResult",
    "chi_square_critical",
    "chi_square_upper_tail",
    "lrt_statistic",
    "test_nonstationarity",
]
