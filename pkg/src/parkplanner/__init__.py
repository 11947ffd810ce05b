"""Hierarchical parking planner.

A scenario-biased hybrid A* searches a geometric path through the lot, a
minimum-time optimal control stage turns it into a timed reference, and a
receding-horizon NMPC tracks the reference while avoiding moving obstacles
through dual-variable separation constraints on convex polytopes.
"""

__version__ = "0.1.0"

from .geometry import (
    ConvexPolytope,
    FootprintSpec,
    Pose2D,
    footprint_polytope,
    make_footprint,
    polytope_distance,
    polytopes_intersect,
    rectangle_polytope,
    transform_polytope,
)
from .vehicle import (
    ControlInput,
    VehicleParams,
    VehicleState,
    check_bounds,
    derivative,
    euler_step,
)
