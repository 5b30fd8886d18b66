"""Mixed-precision model families and memory/deadline allocation for concurrent DNN apps."""

from .allocator import (
    AllocationProblem,
    AllocationSolution,
    AppDemand,
    Verdict,
    check_feasibility,
    grid_oracle,
    solve,
)
from .errors import (
    CalibrationError,
    ConvergenceError,
    DegenerateProfileError,
    DomainError,
    FeasibilityError,
    LookupTableError,
    MixallocError,
    NoFittingModelError,
    ParseError,
    ValidationError,
)
from .family import BitConfig, CompressedModel, build_family, evaluate_config, sensitivity_order
from .lut import LookupTable, build_lut, query_lut
from .profiles import CubicProfile, ProfileKind, build_accuracy_profile, build_latency_profile, fit_cubic, profile_app
from .simulator import Scenario, ScenarioEvent, baseline_compare, robustness_sweep, run_scenario, sjf_order
from .synth import synthesize_workload
from .workload import AppSpec, LayerSpec, OutputSample, PrecisionLevel, kl_divergence, layer_sensitivity

__version__ = "0.1.0"
