"""Monte Carlo engine for martingale-representation hedging.

Simulates the joint state (stochastic-exponential density, Brownian
driver) under the pricing measure, computes pathwise hedging integrands
through the linearized state flow, projects them onto the filtration, and
verifies the resulting representation numerically — including a smooth
clamping scheme that extends everything to unbounded market-price-of-risk
models, with a convergence study across clamp levels.
"""

from ._version import __version__
from .engine import (
    MEASURE_REAL_WORLD,
    MEASURE_RISK_NEUTRAL,
    PathEnsemble,
    StatePath,
    TruncatedPath,
    TruncationResult,
    ensemble_mean_se,
    log_growth,
    novikov_diagnostic,
    simulate_paths,
    smooth_clamp,
    smooth_clamp_deriv,
    truncate_ensemble,
    truncate_path,
)
from .errors import AllPathsInvalidError, ConfigError, SingularSystemError
from .flows import (
    FlowMatrix,
    gronwall_check,
    solve_flow,
    solve_flow_ensemble,
    solve_truncated_flow,
)
from .grids import SCHEME_LOG_EULER, SimConfig, TimeGrid
from .hedging import (
    HedgeEstimate,
    HedgeReport,
    IntegrandPath,
    MultiplierSolution,
    TruncationStudy,
    compute_integrand,
    compute_integrands,
    compute_truncated_integrand,
    mean_variance_multipliers,
    nested_mc_beta,
    project_integrand,
    truncation_convergence,
    verify_representation,
)
from .models import (
    ConstantModel,
    DerivativeKernel,
    MarketPriceOfRiskModel,
    OrnsteinUhlenbeckModel,
    apply_kernel,
)
from .payoffs import (
    AffineTerminal,
    IntegralFunctional,
    Payoff,
    PayoffMeasure,
    TerminalSmooth,
    evaluate_payoff,
    payoff_derivative_measure,
)
from .rng import STREAM_EVAL, STREAM_FIT, STREAM_NESTED, STREAM_REAL_WORLD, substream

__all__ = [
    "__version__",
    # grids and configuration
    "TimeGrid",
    "SimConfig",
    "SCHEME_LOG_EULER",
    # models
    "MarketPriceOfRiskModel",
    "ConstantModel",
    "OrnsteinUhlenbeckModel",
    "DerivativeKernel",
    "apply_kernel",
    # simulation
    "simulate_paths",
    "PathEnsemble",
    "StatePath",
    "MEASURE_RISK_NEUTRAL",
    "MEASURE_REAL_WORLD",
    "ensemble_mean_se",
    "novikov_diagnostic",
    "log_growth",
    # truncation
    "smooth_clamp",
    "smooth_clamp_deriv",
    "truncate_ensemble",
    "truncate_path",
    "TruncationResult",
    "TruncatedPath",
    # flows
    "FlowMatrix",
    "solve_flow",
    "solve_flow_ensemble",
    "solve_truncated_flow",
    "gronwall_check",
    # payoffs
    "Payoff",
    "PayoffMeasure",
    "AffineTerminal",
    "TerminalSmooth",
    "IntegralFunctional",
    "evaluate_payoff",
    "payoff_derivative_measure",
    # hedging
    "IntegrandPath",
    "compute_integrand",
    "compute_integrands",
    "compute_truncated_integrand",
    "HedgeEstimate",
    "project_integrand",
    "nested_mc_beta",
    "HedgeReport",
    "verify_representation",
    "TruncationStudy",
    "truncation_convergence",
    "MultiplierSolution",
    "mean_variance_multipliers",
    # rng
    "substream",
    "STREAM_FIT",
    "STREAM_EVAL",
    "STREAM_REAL_WORLD",
    "STREAM_NESTED",
    # errors
    "ConfigError",
    "AllPathsInvalidError",
    "SingularSystemError",
]
