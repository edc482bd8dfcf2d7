"""Real conic programs: builder, cone projections and an operator-splitting solver."""

from .cones import CONE_KINDS, distance_to_cone, project_cone, project_dual
from .program import (
    Affine,
    CompiledProgram,
    ConicProgram,
    DimensionError,
    add_exp_epigraph,
    add_geomean_tower,
    add_rotated_soc,
    add_soc,
    fill_tower_values,
    load_triplets,
    rationalize_weights,
)
from .solver import (
    INFEASIBLE,
    MAX_ITERS,
    OPTIMAL,
    UNBOUNDED,
    ConicSolution,
    WarmStart,
    solve,
)

__all__ = [
    "CONE_KINDS", "distance_to_cone", "project_cone", "project_dual",
    "Affine", "CompiledProgram", "ConicProgram", "DimensionError",
    "add_exp_epigraph", "add_geomean_tower", "add_rotated_soc", "add_soc",
    "fill_tower_values", "load_triplets", "rationalize_weights",
    "INFEASIBLE", "MAX_ITERS", "OPTIMAL", "UNBOUNDED", "ConicSolution", "WarmStart", "solve",
]
