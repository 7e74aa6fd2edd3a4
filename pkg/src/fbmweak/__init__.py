"""Fractional Brownian motion, Wiener integrals and weak solutions of fBm-driven equations."""

from .errors import (
    AlignmentError,
    CapabilityError,
    ConfigError,
    ConsistencyError,
    ConvergenceError,
    DimensionError,
    DomainError,
    EstimationError,
    FbmError,
    NumericalError,
    QuadratureError,
    RegimeError,
)
from .heat import FourierState, HeatParams, assemble_drift, noise_operator, physical_snapshot, solve_heat_spde
from .hilbert import (
    HilbertFbm,
    OperatorValuedFn,
    SpectralOperatorQ,
    integrate_operator,
    lemma1_check,
    sample_hilbert_fbm,
    second_moment_formula,
)
from .kernel import (
    BetaConvention,
    HurstParam,
    Regime,
    ScalarFn,
    TimeGrid,
    covariance_RH,
    factorization_check,
    inner_product_H,
    kernel_constants,
    kernel_KH,
    khstar_apply,
)
from .rng import RngStream
from .sampler import (
    FbmEnsemble,
    FbmPath,
    Method,
    covariance_check,
    estimate_hurst,
    rescale_selfsimilar,
    sample_cholesky,
    sample_circulant,
    sample_ensemble,
    sample_volterra,
)
from .solver import (
    DriftFn,
    PathProcess,
    ScalingParams,
    SmoothingFamily,
    WeakSolver,
    euler_oracle,
    jacobian_action,
    picard_solve,
    rescale_to_solution,
    residual_Fn,
    sensitivity_x0,
    validate_hypotheses,
)
from .wiener import SimpleFunction, integrate_riemann, integrate_simple, isometry_defect, isometry_test

__version__ = "0.1.0"
