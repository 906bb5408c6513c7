"""Jump Ornstein-Uhlenbeck bridges as limits of an energy-optimal LQ regulator."""

__version__ = "0.1.0"

from .levy import ExpCompoundPoisson, JumpMoments, TemperedStable, moments, sample_increment  # noqa: E402
from .coefficients import (  # noqa: E402
    BridgeModel,
    FiniteFCoefficients,
    LimitCoefficients,
    closed_form_mean,
    finite_F_A,
    finite_F_B,
    finite_F_C,
    integrating_factor,
    kernel_K,
    kernels,
    limit_A,
    limit_B,
    optimal_control,
    value_function,
)
from .engine import Path, SimConfig, simulate_bridge, simulate_controlled, simulate_ou, simulate_se  # noqa: E402
from .moments import MomentCurves, ou_bridge_moments, se_bridge_moments, stationary_moments  # noqa: E402
from .montecarlo import EnsembleReport, run_ensemble, terminal_convergence_sweep, variance_decay_check  # noqa: E402
from .backend import BACKEND  # noqa: E402

__all__ = [
    "BACKEND", "BridgeModel", "EnsembleReport", "ExpCompoundPoisson", "FiniteFCoefficients", "JumpMoments",
    "LimitCoefficients", "MomentCurves", "Path", "SimConfig", "TemperedStable", "closed_form_mean",
    "finite_F_A", "finite_F_B", "finite_F_C", "integrating_factor", "kernel_K", "kernels", "limit_A", "limit_B",
    "moments", "optimal_control", "ou_bridge_moments", "run_ensemble", "sample_increment",
    "se_bridge_moments", "simulate_bridge", "simulate_controlled", "simulate_ou", "simulate_se",
    "stationary_moments", "terminal_convergence_sweep", "value_function", "variance_decay_check",
]
