"""Lyapunov drift-plus-penalty HVAC control for multizone commercial buildings."""

from .baselines import b1_step, b2_step, mcdra_delta, mcdra_step
from .coordination import Coordinator, DistributedAllocator, PrivacyAuditor, ZoneAgent
from .costs import CostBreakdown, slot_total_cost
from .errors import (
    ConfigError,
    ControllabilityError,
    CoordinationTimeout,
    DegenerateDynamicsError,
    FeasibilityViolation,
    HvacError,
    InfeasibleSlotError,
    InvalidModelError,
    PrivacyViolation,
    SolverError,
    TraceFormatError,
    TuningError,
)
from .simulation import (
    RunConfig,
    RunReport,
    TraceSet,
    emit_report,
    load_config,
    load_traces,
    reference_building,
    run_seeds,
    run_simulation,
    sample_inputs,
    sweep,
    synthetic_traces,
)
from .solver import (
    TuningBundle,
    ZoneState,
    cdra_step,
    compute_envelope,
    compute_tuning,
    solve_p3,
)
from .thermal import Building, BuildingConfig, SlotObservation, ZoneParams, validate_controllability

__version__ = "0.1.0"
