"""phasedyne: Monte Carlo simulation and analytics of quantum-limited
continuous-wave phase tracking with feedback-steered dyne detection."""

__version__ = "0.1.0"

from .control import ControllerSpec, optimal_gain, optimal_gain_physical  # noqa: E402
from .detection import NoiseModel  # noqa: E402
from .errors import (  # noqa: E402
    AmbiguousMinimumWarning,
    ConfigError,
    NoSignalError,
    PhasedyneError,
    StiffnessError,
)
from .harness import (  # noqa: E402
    MseResult,
    SimConfig,
    SweepSpec,
    TrajectoryRecord,
    estimate_stationary_mse,
    find_optimal_squeezing,
    fit_power_law,
    make_run_setup,
    run_ensemble,
    run_sweep,
    run_trajectory,
    simulate,
)

__all__ = [
    "__version__",
    "AmbiguousMinimumWarning",
    "ConfigError",
    "ControllerSpec",
    "MseResult",
    "NoSignalError",
    "NoiseModel",
    "PhasedyneError",
    "SimConfig",
    "StiffnessError",
    "SweepSpec",
    "TrajectoryRecord",
    "estimate_stationary_mse",
    "find_optimal_squeezing",
    "fit_power_law",
    "make_run_setup",
    "optimal_gain",
    "optimal_gain_physical",
    "run_ensemble",
    "run_sweep",
    "run_trajectory",
    "simulate",
]
