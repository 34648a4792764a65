"""Bayesian models for paired origin-destination point patterns on grids.

The package fits gridded Poisson and log-Gaussian Cox process intensities,
conditional recovery-location kernels (constant or spatially varying), and a
joint pair-intensity model with an explicit origin-destination dependence
parameter. Thinning-based validation, proper scoring rules, and synthetic
data generators round out the toolkit; the ``odcox`` CLI drives everything
from TOML configs.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    FactorizationError,
    GeometryError,
    MissingInputError,
    OdcoxError,
    SamplerError,
)
from .geometry import (
    CovariateTable,
    GridSpec,
    PairedPattern,
    PointPattern,
    assign_cells,
    assign_counts,
    build_regular_grid,
    grid_from_membership,
    nearest_cells,
    standardize_covariates,
    destandardize_covariates,
)
from .gp import (
    CholFactor,
    CovarianceModel,
    ExpCorrelationCache,
    chol,
    cov_matrix,
    cross_cov,
    gp_conditional,
    mvn_logpdf,
    mvn_sample,
)
from .samplers import (
    AdaptiveRWState,
    ChainModel,
    EllipticalSliceBlock,
    JointEllipticalSliceBlock,
    InverseGammaPrior,
    McmcConfig,
    MetropolisBlock,
    NormalPrior,
    PosteriorChain,
    UniformPrior,
    arwmh_step,
    ess_step,
    inefficiency_factor,
    parse_prior,
    run_chain,
)
from .intensity import (
    IntensityModelSpec,
    IntensitySurface,
    default_intensity_priors,
    fit_lgcp,
    fit_nhpp,
    lambda_draws,
    loglik_gradient,
    loglik_gridded,
    posterior_intensity,
    sample_predictive_counts,
)
from .selection import GlmFit, StepwiseResult, poisson_glm, stepwise_bic
from .recovery import (
    HIGDON_A,
    KernelConstant,
    KernelFieldHigdon,
    RecoveryPrediction,
    bicrps,
    cond_logdensity,
    fit_conditional_constant,
    fit_conditional_spatial,
    higdon_half_matrix,
    higdon_terms,
    predict_recovery,
    sigma_from_psi,
)
from .joint import (
    FlowSummary,
    JointModelSpec,
    block_partition,
    fit_joint,
    flow_from_chain,
    flow_from_counts,
    joint_loglik,
    log_lambda_matrix,
    pair_counts,
    quadrant_partition,
)
from .scoring import (
    EvalRegions,
    ThinSplit,
    ValidationReport,
    p_thin,
    pic,
    random_blocks,
    region_counts,
    rps,
    run_validation,
)
from .simulate import (
    JointTruth,
    draw_psi_field,
    simulate_joint,
    simulate_lgcp,
    simulate_recoveries,
    uniform_in_cells,
)
from .estimators import (
    ConstantRecoveryModel,
    JointPairModel,
    LgcpModel,
    NhppModel,
    SpatialRecoveryModel,
)

__all__ = [
    "__version__",
    # errors
    "OdcoxError",
    "ConfigError",
    "MissingInputError",
    "DataError",
    "DimensionError",
    "GeometryError",
    "FactorizationError",
    "SamplerError",
    # geometry
    "PointPattern",
    "PairedPattern",
    "GridSpec",
    "CovariateTable",
    "build_regular_grid",
    "grid_from_membership",
    "assign_cells",
    "assign_counts",
    "nearest_cells",
    "standardize_covariates",
    "destandardize_covariates",
    # gp
    "CovarianceModel",
    "cov_matrix",
    "cross_cov",
    "CholFactor",
    "chol",
    "mvn_sample",
    "mvn_logpdf",
    "ExpCorrelationCache",
    "gp_conditional",
    # samplers
    "AdaptiveRWState",
    "arwmh_step",
    "ess_step",
    "NormalPrior",
    "InverseGammaPrior",
    "UniformPrior",
    "parse_prior",
    "MetropolisBlock",
    "EllipticalSliceBlock",
    "JointEllipticalSliceBlock",
    "ChainModel",
    "McmcConfig",
    "run_chain",
    "PosteriorChain",
    "inefficiency_factor",
    # intensity
    "IntensityModelSpec",
    "IntensitySurface",
    "default_intensity_priors",
    "loglik_gridded",
    "loglik_gradient",
    "fit_nhpp",
    "fit_lgcp",
    "lambda_draws",
    "posterior_intensity",
    "sample_predictive_counts",
    # selection
    "GlmFit",
    "poisson_glm",
    "StepwiseResult",
    "stepwise_bic",
    # recovery
    "HIGDON_A",
    "higdon_terms",
    "sigma_from_psi",
    "higdon_half_matrix",
    "cond_logdensity",
    "KernelConstant",
    "KernelFieldHigdon",
    "fit_conditional_constant",
    "fit_conditional_spatial",
    "RecoveryPrediction",
    "predict_recovery",
    "bicrps",
    # joint
    "JointModelSpec",
    "pair_counts",
    "log_lambda_matrix",
    "joint_loglik",
    "fit_joint",
    "FlowSummary",
    "flow_from_counts",
    "flow_from_chain",
    "quadrant_partition",
    "block_partition",
    # scoring
    "ThinSplit",
    "p_thin",
    "EvalRegions",
    "random_blocks",
    "region_counts",
    "pic",
    "rps",
    "ValidationReport",
    "run_validation",
    # simulate
    "uniform_in_cells",
    "simulate_lgcp",
    "draw_psi_field",
    "simulate_recoveries",
    "JointTruth",
    "simulate_joint",
    # estimators
    "NhppModel",
    "LgcpModel",
    "ConstantRecoveryModel",
    "SpatialRecoveryModel",
    "JointPairModel",
]
