"""fptmc: first-passage-time densities of one-dimensional diffusions by
exact Monte-Carlo simulation of the three-dimensional Brownian bridge.
"""

from ._kernels import BACKEND
from .baseline import EulerRun, KernelDensity, empirical_cdf, euler_fpt_sample, kernel_density
from .bridge import (
    BridgeEnsemble,
    BridgePath,
    bessel_max_cdf,
    generate_ensemble,
    load_ensemble,
    path_functional_I,
    path_seed,
    sample_bridge,
    save_ensemble,
)
from .errors import (
    ConfigError,
    EvaluationError,
    FptmcError,
    MeshConvergenceError,
    ParseError,
    QuadratureError,
)
from .estimator import (
    CovarianceDiagnostic,
    DensityEstimate,
    RateCurve,
    ScalingTable,
    convergence_scaling,
    covariance_diagnostic,
    estimate_density,
    estimate_rate,
    ou_rate_estimator,
    rate_bounds,
    run_estimation,
)
from .expr import parse_drift
from .model import (
    AssumptionReport,
    DriftModel,
    GeneralDiffusionSpec,
    bm_fpt_density,
    build_model,
    check_assumptions,
    lamperti_transform,
    model_from_json,
    model_to_json,
    ou_fpt_density,
)
from .tail import EigenResult, TailModel, build_tail, evaluate_mixture, principal_eigenvalue

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "__version__",
    "AssumptionReport",
    "BridgeEnsemble",
    "BridgePath",
    "ConfigError",
    "CovarianceDiagnostic",
    "DensityEstimate",
    "DriftModel",
    "EigenResult",
    "EulerRun",
    "EvaluationError",
    "FptmcError",
    "GeneralDiffusionSpec",
    "KernelDensity",
    "MeshConvergenceError",
    "ParseError",
    "QuadratureError",
    "RateCurve",
    "ScalingTable",
    "TailModel",
    "bessel_max_cdf",
    "bm_fpt_density",
    "build_model",
    "build_tail",
    "check_assumptions",
    "convergence_scaling",
    "covariance_diagnostic",
    "empirical_cdf",
    "estimate_density",
    "estimate_rate",
    "euler_fpt_sample",
    "evaluate_mixture",
    "generate_ensemble",
    "kernel_density",
    "lamperti_transform",
    "load_ensemble",
    "model_from_json",
    "model_to_json",
    "ou_fpt_density",
    "ou_rate_estimator",
    "parse_drift",
    "path_functional_I",
    "path_seed",
    "principal_eigenvalue",
    "rate_bounds",
    "run_estimation",
    "sample_bridge",
    "save_ensemble",
]
