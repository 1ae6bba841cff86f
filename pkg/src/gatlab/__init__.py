"""
gatlab: desk-scale laboratory for grounded sim-to-real transfer in
multi-agent traffic signal control.
"""

__version__ = "0.1.0"

from .config import (
    ABLATIONS,
    DYNAMICS_PRESETS,
    DqnConfig,
    ExperimentConfig,
    FlowEntry,
    FlowSpec,
    GridSpec,
    InformationChannels,
    ModelConfig,
    TimingConfig,
    VehicleDynamics,
    load_config,
    reference_config,
)
from .harness import ExperimentResult, TrialRunner, run_trial, run_trials
from .models import (
    ArchiveIncompleteError,
    ConfigError,
    DimensionError,
    EpochResult,
    GapReport,
    GatLabError,
    GroundingDecision,
    IncompatibleArchivesError,
    InvariantViolation,
    LayoutError,
    MetricsReport,
    RoutingError,
    TransitionRecord,
    TrialResult,
)
from .reporting import compute_gap
from .simcore import TrafficSim, run_fixed_cycle

__all__ = [
    "__version__",
    "ABLATIONS",
    "DYNAMICS_PRESETS",
    "DqnConfig",
    "ExperimentConfig",
    "FlowEntry",
    "FlowSpec",
    "GridSpec",
    "InformationChannels",
    "ModelConfig",
    "TimingConfig",
    "VehicleDynamics",
    "load_config",
    "reference_config",
    "ExperimentResult",
    "TrialRunner",
    "run_trial",
    "run_trials",
    "ArchiveIncompleteError",
    "ConfigError",
    "DimensionError",
    "EpochResult",
    "GapReport",
    "GatLabError",
    "GroundingDecision",
    "IncompatibleArchivesError",
    "InvariantViolation",
    "LayoutError",
    "MetricsReport",
    "RoutingError",
    "TransitionRecord",
    "TrialResult",
    "compute_gap",
    "TrafficSim",
    "run_fixed_cycle",
]
