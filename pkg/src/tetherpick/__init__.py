"""Planning and simulation toolkit for cable-suspended aerial pickup."""

from .cable import (
    CableBounds,
    CableProperties,
    CableState,
    CatenarySolution,
    PlanarConfiguration,
    cable_bounds,
    corridor_bounds_batch,
    max_length,
    min_length,
    solve_catenary,
)
from .errors import (
    DegenerateThrust,
    LengthTooShort,
    NoConvergence,
    OutOfDomain,
    ParseError,
    SingularSystem,
    TetherpickError,
    ValidationError,
)
from .optimizer import (
    CostBreakdown,
    Limits,
    ObstaclePlane,
    OptimizeResult,
    PenaltyWeights,
    PlanningScenario,
    WinchSchedule,
    corridor_profile,
    corridor_violation,
    initial_guess,
    optimize,
    total_cost,
)
from .scenario import RetrievalSpec, Scenario, load_scenario, parse_scenario
from .simulation import (
    DroneParams,
    TelemetryLog,
    flat_to_inputs,
    simulate_pickup,
    simulate_retrieval,
    tether_force,
)
from .trajectory import BoundaryState, Trajectory, construct

__version__ = "0.1.0"

__all__ = [
    "BoundaryState",
    "CableBounds",
    "CableProperties",
    "CableState",
    "CatenarySolution",
    "CostBreakdown",
    "DegenerateThrust",
    "DroneParams",
    "LengthTooShort",
    "Limits",
    "NoConvergence",
    "ObstaclePlane",
    "OptimizeResult",
    "OutOfDomain",
    "ParseError",
    "PenaltyWeights",
    "PlanarConfiguration",
    "PlanningScenario",
    "RetrievalSpec",
    "Scenario",
    "SingularSystem",
    "TelemetryLog",
    "TetherpickError",
    "Trajectory",
    "ValidationError",
    "WinchSchedule",
    "cable_bounds",
    "construct",
    "corridor_bounds_batch",
    "corridor_profile",
    "corridor_violation",
    "flat_to_inputs",
    "initial_guess",
    "load_scenario",
    "max_length",
    "min_length",
    "optimize",
    "parse_scenario",
    "simulate_pickup",
    "simulate_retrieval",
    "solve_catenary",
    "tether_force",
    "total_cost",
    "__version__",
]
