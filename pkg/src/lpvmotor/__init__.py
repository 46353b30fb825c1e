"""Gain-scheduled LPV output-feedback speed control for surface PMSMs."""

from .motor_model import (
    RPM_TO_RAD_S,
    RAD_S_TO_RPM,
    ErrorState,
    MotorParams,
    MotorState,
    ReferenceSample,
    SpeedProfile,
    error_derivative,
    feedforward,
    flux_at,
    plant_derivative,
    resistance_at,
    torque_constant,
)
from .lpv_model import (
    GeneralizedPlant,
    ParameterBox,
    PerformanceWeights,
    PlantBasis,
    SchedulingPoint,
    circle_grid,
    default_box,
    error_plant,
    generalized_plant,
    min_trig_radius,
    plant_basis,
    scheduling_from,
)
from .lmi_synthesis import (
    AffineMatrixFunction,
    SynthesisInfeasibleError,
    SolverFailureError,
    SynthesisOptions,
    SynthesisProblem,
    SynthesisSolution,
    UncertaintyModel,
    assemble_nominal_lmi,
    assemble_robust_lmi,
    filter_grid,
    grid_points,
    load_artifact,
    lyapunov_rate_term,
    rate_vertices,
    save_artifact,
    synthesize,
    verify_solution,
)
from .controller_runtime import (
    ClosedLoopRealization,
    ControllerRealization,
    closed_loop,
    factorize,
    frozen_hinf_norm,
    reconstruct,
)
from .simulation import (
    FocPiGains,
    FocPiState,
    Scenario,
    SimTrace,
    foc_pi_step,
    metrics,
    perturb,
    simulate,
)
from .config import ConfigError, ToolkitConfig, default_config, load_config

__version__ = "0.1.0"
