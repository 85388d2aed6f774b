"""Bayesian component regression with spatially correlated residuals.

Pipeline: standardize predictors, rotate onto singular-vector components, put
shrinkage priors on the coefficients, sample coefficients and covariance
parameters by a hybrid Gibbs / adaptive-Metropolis chain, and krige new
locations from the posterior. Ships the comparison baselines, a synthetic-grid
generator, and a replicated cross-validation benchmark around that core.
"""

from .backend import NUMBA_AVAILABLE, backend_name
from .baselines import KINDS, BaselineSpec, FittedModel, fit_model, fit_ols, select_k_adaptive
from .errors import (
    BpcrError,
    ConstantColumnError,
    ConstantTruthError,
    DegenerateInputError,
    DimensionMismatchError,
    InvalidParamError,
    NotPositiveDefiniteError,
    RankDeficientError,
    SchemaError,
    SingularFactorError,
    ZeroMeanTruthError,
)
from .model import (
    Chain,
    McmcConfig,
    ModelState,
    RegressionPriors,
    SpatialParams,
    SpatialPrior,
    default_priors,
    effective_sample_size,
    run_mcmc,
)
from .pca import PCABasis, ScalingParams, build_design, compute_basis, standardize, transform_new
from .predictor import PredictionResult, TrainData, posterior_predictive, predictive_draws, summarize
from .spatial import cross_covariance, distance_matrix, exp_covariance, total_covariance
from .synthetic import SyntheticConfig, SyntheticDataset, generate_dataset
from .validation import (
    ExperimentPlan,
    FitBundle,
    MetricsReport,
    SAConfig,
    bias_pct,
    fit_models,
    interval_metrics,
    loo_crossval,
    make_report,
    maximin_select,
    q2,
    rmse_pct,
    run_benchmark,
)

__version__ = "0.1.0"
