"""Quantile factor analysis for large panels.

Estimates quantile-dependent latent factors and loadings by iterative
quantile regression, selects the number of factors per quantile, and
provides smoothed-quantile-regression inference plus a seeded Monte Carlo
harness.
"""

from .dgp import DGP_NAMES, DgpSpec, SimulatedPanel, generate, rng_stream
from .exceptions import (
    BalancedPanelError,
    ConvergenceError,
    DegenerateColumnError,
    DimensionError,
    DomainError,
    ParseError,
    QfactorError,
    RankError,
    SingularDensityError,
    SingularityError,
    SpecError,
    SymmetryError,
    ZeroVolatilityError,
)
from .mathkit import (
    EigenDecomposition,
    QrSolveResult,
    check_loss,
    kernel_epanechnikov,
    kernel_k8,
    kernel_k8_tail,
    ols_r2,
    qr_solve,
    qr_solve_batch,
    smoothed_loss,
    sym_eig,
)
from .mc import McResult, MethodOutcome, align_to_truth, emit_table, run_replications
from .panel import PanelData, load_csv, save_csv, standardize, unstandardize
from .pca import PcaFit, PrincipalComponentFactors, pca_estimate, pca_sq_volatility
from .qfa import (
    FactorFit,
    IqrConfig,
    QuantileFactorAnalysis,
    StandardizationWarning,
    iqr_estimate,
    normalize_fit,
    objective,
    semimetric_d,
    two_stage_estimate,
)
from .select import (
    SelectionResult,
    select_eigen_ratio,
    select_ic_p1,
    select_ic_qfa,
    select_pc_p1,
    select_rank_min,
)
from .sqr import (
    SmoothedQuantileFactorAnalysis,
    SqrConfig,
    SqrFit,
    estimate_covariances,
    sqr_estimate,
    standardized_stats,
)

__version__ = "0.1.0"

__all__ = [
    "DGP_NAMES",
    "DgpSpec",
    "SimulatedPanel",
    "generate",
    "rng_stream",
    "QfactorError",
    "DomainError",
    "DimensionError",
    "BalancedPanelError",
    "ParseError",
    "DegenerateColumnError",
    "RankError",
    "ConvergenceError",
    "SymmetryError",
    "SingularityError",
    "ZeroVolatilityError",
    "SingularDensityError",
    "SpecError",
    "EigenDecomposition",
    "QrSolveResult",
    "check_loss",
    "smoothed_loss",
    "kernel_k8",
    "kernel_k8_tail",
    "kernel_epanechnikov",
    "sym_eig",
    "ols_r2",
    "qr_solve",
    "qr_solve_batch",
    "PanelData",
    "load_csv",
    "save_csv",
    "standardize",
    "unstandardize",
    "PcaFit",
    "pca_estimate",
    "pca_sq_volatility",
    "PrincipalComponentFactors",
    "FactorFit",
    "IqrConfig",
    "QuantileFactorAnalysis",
    "StandardizationWarning",
    "iqr_estimate",
    "objective",
    "normalize_fit",
    "semimetric_d",
    "two_stage_estimate",
    "SelectionResult",
    "select_rank_min",
    "select_ic_qfa",
    "select_pc_p1",
    "select_ic_p1",
    "select_eigen_ratio",
    "SqrConfig",
    "SqrFit",
    "sqr_estimate",
    "estimate_covariances",
    "standardized_stats",
    "SmoothedQuantileFactorAnalysis",
    "McResult",
    "MethodOutcome",
    "run_replications",
    "align_to_truth",
    "emit_table",
]
