"""Circular restricted three-body problem, Sun-Earth, nondimensional."""
from erofinder.cr3bp.dynamics import (
    EquilibriumSet,
    NoCrossingError,
    PropagationError,
    RotatingState,
    SingularityError,
    Trajectory,
    acceleration,
    equilibrium_points,
    flow,
    flow_with_stm,
    jacobi_constant,
    propagate,
    propagate_to_section,
    section_value,
    state_transition,
)
from erofinder.cr3bp.frames import heliocentric_to_rotating, rotating_to_heliocentric

__all__ = [
    "EquilibriumSet",
    "NoCrossingError",
    "PropagationError",
    "RotatingState",
    "SingularityError",
    "Trajectory",
    "acceleration",
    "equilibrium_points",
    "flow",
    "flow_with_stm",
    "heliocentric_to_rotating",
    "jacobi_constant",
    "propagate",
    "propagate_to_section",
    "rotating_to_heliocentric",
    "section_value",
    "state_transition",
]
