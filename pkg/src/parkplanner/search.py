"""Lattice search over kinematic motion primitives for parking maneuvers.

Two planners share one best-first engine:

* ``plan_shastar`` biases the search with two scenario penalties: a linear
  ramp on heading magnitude outside a preferred band, and a heuristic
  multiplier that grows with lateral overtravel past a threshold. Both push
  the search toward low-yaw paths that stay near the goal column, which is
  what a parking approach wants.
* ``plan_hastar_baseline`` uses the conventional additive penalties
  (reverse motion, direction switches, steering magnitude and rate).

Primitives are arcs of fixed length integrated with the forward-Euler
bicycle model. Because Euler integration commutes with planar rotation,
each (steering, direction) primitive is integrated once from the origin
and replayed as a rigid offset, which keeps expansion cheap.
"""

from __future__ import annotations

import heapq
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .geometry import FootprintSpec, Pose2D, make_footprint, wrap_angle
from .vehicle import VehicleParams


def footprint_from_params(params: VehicleParams) -> FootprintSpec:
    """Footprint template matching a vehicle's body box and axle placement."""
    return make_footprint(params.body_length, params.body_width,
                          params.rear_axle_offset)


class NoPathError(RuntimeError):
    """Open list exhausted before reaching the goal."""

    def __init__(self, message: str, nodes_expanded: int):
        super().__init__(message)
        self.nodes_expanded = nodes_expanded


class BudgetExceededError(RuntimeError):
    """Node budget spent before reaching the goal."""

    def __init__(self, message: str, nodes_expanded: int):
        super().__init__(message)
        self.nodes_expanded = nodes_expanded


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the (x, y, yaw) state space plus workspace bounds."""

    xy_resolution: float = 0.5
    yaw_resolution: float = np.pi / 18.0
    x_min: float = -25.0
    x_max: float = 25.0
    y_min: float = -5.0
    y_max: float = 15.0

    def __post_init__(self):
        if self.xy_resolution <= 0 or self.yaw_resolution <= 0:
            raise ValueError("grid resolutions must be positive")
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError("grid bounds are empty")

    @property
    def yaw_bins(self) -> int:
        return int(math.ceil(2.0 * math.pi / self.yaw_resolution))

    def key(self, x: float, y: float, phi: float, d: int) -> tuple:
        return (
            int(math.floor(x / self.xy_resolution)),
            int(math.floor(y / self.xy_resolution)),
            int(math.floor((phi + math.pi) / self.yaw_resolution)) % self.yaw_bins,
            d,
        )

    def in_bounds(self, x: float, y: float) -> bool:
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max


@dataclass(frozen=True)
class SearchConfig:
    """Penalty weights and primitive settings for both planners.

    ``x_limit`` and ``x_target`` default to None and are resolved against
    the goal (goal_x - 5 and goal_x) when planning starts.
    """

    yaw_limit: float = np.pi / 6.0
    yaw_penalty_weight: float = 10.0
    x_limit: Optional[float] = None
    x_target: Optional[float] = None
    primitive_arc_length: float = 0.6
    n_substeps: int = 20
    node_budget: int = 200_000
    reverse_penalty: float = 1.0
    direction_switch_penalty: float = 2.0
    steering_penalty: float = 0.3
    steering_gradient_penalty: float = 0.5
    yaw_penalty_on_parent: bool = False  # literal variant: gate on the parent heading
    overtravel_literal: bool = False  # literal variant: bare ratio instead of 1 + ratio

    def __post_init__(self):
        if not 0.0 < self.yaw_limit < np.pi / 2.0:
            raise ValueError("yaw_limit must lie in (0, pi/2)")
        if self.yaw_penalty_weight < 0:
            raise ValueError("yaw_penalty_weight must be nonnegative")
        if self.primitive_arc_length <= 0:
            raise ValueError("primitive_arc_length must be positive")
        if self.n_substeps < 2:
            raise ValueError("n_substeps must be at least 2")
        if self.node_budget < 1:
            raise ValueError("node_budget must be positive")
        for name in ("reverse_penalty", "direction_switch_penalty",
                     "steering_penalty", "steering_gradient_penalty"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    def resolved(self, goal_x: float) -> "SearchConfig":
        if self.x_limit is not None and self.x_target is not None:
            return self
        return SearchConfig(
            yaw_limit=self.yaw_limit,
            yaw_penalty_weight=self.yaw_penalty_weight,
            x_limit=self.x_limit if self.x_limit is not None else goal_x - 5.0,
            x_target=self.x_target if self.x_target is not None else goal_x,
            primitive_arc_length=self.primitive_arc_length,
            n_substeps=self.n_substeps,
            node_budget=self.node_budget,
            reverse_penalty=self.reverse_penalty,
            direction_switch_penalty=self.direction_switch_penalty,
            steering_penalty=self.steering_penalty,
            steering_gradient_penalty=self.steering_gradient_penalty,
            yaw_penalty_on_parent=self.yaw_penalty_on_parent,
            overtravel_literal=self.overtravel_literal,
        )


@dataclass
class SearchNode:
    """One lattice state: pose, travel direction, and cost bookkeeping.

    ``g_cost`` is plain accumulated arc length; ``cost`` additionally carries
    the planner's penalties; ``f_cost`` is the queue priority. The root node
    has d = 0 (no direction yet) and steering None.
    """

    x: float
    y: float
    phi: float
    d: int
    g_cost: float = 0.0
    h_cost: float = 0.0
    f_cost: float = 0.0
    cost: float = 0.0
    parent: Optional["SearchNode"] = None
    steering: Optional[float] = None


@dataclass
class PlannedPath:
    poses: np.ndarray  # (N, 3) of x, y, phi
    directions: np.ndarray  # (N,) ints in {+1, -1}; index 0 mirrors the first segment
    steering: np.ndarray  # (N-1,) commanded steering per segment
    nodes_expanded: int
    wall_time: float
    path_length: float
    direction_switches: int

    def __len__(self):
        return self.poses.shape[0]


# ---------------------------------------------------------------------------
# motion primitives


_offset_cache: dict = {}


def _integrate_offset(steer: float, d: int, arc: float, n: int, wheelbase: float):
    """Integrate one primitive from the origin; returns (mid, end) offsets."""
    ds = arc / n
    x = y = phi = 0.0
    kappa = math.tan(steer) / wheelbase
    mid = None
    for i in range(n):
        x += d * ds * math.cos(phi)
        y += d * ds * math.sin(phi)
        phi += d * ds * kappa
        if i + 1 == n // 2:
            mid = (x, y, phi)
    return mid, (x, y, phi)


def primitive_offsets(cfg: SearchConfig, params: VehicleParams):
    """Six (steering, direction, mid offset, end offset) tuples, cached."""
    key = (cfg.primitive_arc_length, cfg.n_substeps, params.delta_max, params.wheelbase)
    out = _offset_cache.get(key)
    if out is None:
        out = []
        for steer in (-params.delta_max, 0.0, params.delta_max):
            for d in (1, -1):
                mid, end = _integrate_offset(steer, d, cfg.primitive_arc_length,
                                             cfg.n_substeps, params.wheelbase)
                out.append((steer, d, mid, end))
        out = tuple(out)
        _offset_cache[key] = out
    return out


# ---------------------------------------------------------------------------
# static collision checking


class StaticCollisionChecker:
    """Batched exact intersection tests of the footprint against fixed polytopes.

    Uses the separating-axis test over both polygons' face normals, with all
    obstacle faces and vertices stacked into flat arrays once so a batch of
    candidate poses costs a handful of vectorized operations regardless of
    obstacle count. Touching counts as collision, matching the geometry
    module's intersection predicate.
    """

    def __init__(self, footprint: FootprintSpec, obstacles):
        self.obstacles = list(obstacles)
        base = footprint.base_polytope()
        self.G = base.A  # (4, 2)
        self.g = base.b  # (4,)
        self.corners = base.vertices  # (4, 2) in body frame
        if self.obstacles:
            self.A_all = np.vstack([o.A for o in self.obstacles])
            self.b_all = np.concatenate([o.b for o in self.obstacles])
            self.V_all = np.vstack([o.vertices for o in self.obstacles])
            face_counts = [o.A.shape[0] for o in self.obstacles]
            vert_counts = [o.vertices.shape[0] for o in self.obstacles]
            self.face_starts = np.concatenate([[0], np.cumsum(face_counts)[:-1]]).astype(int)
            self.vert_starts = np.concatenate([[0], np.cumsum(vert_counts)[:-1]]).astype(int)

    def collides(self, poses: np.ndarray) -> np.ndarray:
        """poses (n, 3) -> boolean (n,): footprint intersects any obstacle."""
        poses = np.atleast_2d(np.asarray(poses, dtype=float))
        n = poses.shape[0]
        if not self.obstacles:
            return np.zeros(n, dtype=bool)
        c, s = np.cos(poses[:, 2]), np.sin(poses[:, 2])
        R = np.empty((n, 2, 2))
        R[:, 0, 0] = c
        R[:, 0, 1] = -s
        R[:, 1, 0] = s
        R[:, 1, 1] = c
        t = poses[:, :2]
        corners_w = np.einsum("nij,kj->nki", R, self.corners) + t[:, None, :]

        # axis family 1: obstacle face normals vs footprint corners
        proj = np.einsum("hj,nkj->nhk", self.A_all, corners_w)
        sep_rows = proj.min(axis=2) > self.b_all[None, :]
        sep1 = np.logical_or.reduceat(sep_rows, self.face_starts, axis=1)

        # axis family 2: footprint face normals vs obstacle vertices
        GRt = np.einsum("fj,nij->nfi", self.G, R)  # world-frame body normals
        offs = self.g[None, :] + np.einsum("nfi,ni->nf", GRt, t)
        vproj = np.einsum("nfi,ki->nfk", GRt, self.V_all)
        vmin = np.minimum.reduceat(vproj, self.vert_starts, axis=2)
        sep2 = np.any(vmin > offs[:, :, None], axis=1)

        return (~(sep1 | sep2)).any(axis=1)


# ---------------------------------------------------------------------------
# node operations


def expand(node: SearchNode, cfg: SearchConfig, grid: GridSpec,
           params: VehicleParams, obstacles=(), checker: Optional[StaticCollisionChecker] = None,
           footprint: Optional[FootprintSpec] = None):
    """Children of a node under the six primitives, filtered for feasibility.

    Children leave the parent pose along a constant-steering arc; those out
    of grid bounds, beyond the heading bound, or whose swept footprint
    (sampled at arc midpoint and endpoint) hits an obstacle are dropped.
    Costs accumulate plain arc length here; penalties are applied separately.
    """
    if checker is None and obstacles:
        if footprint is None:
            footprint = footprint_from_params(params)
        checker = StaticCollisionChecker(footprint, obstacles)

    arc = cfg.primitive_arc_length
    cphi, sphi = math.cos(node.phi), math.sin(node.phi)
    candidates = []
    sample_poses = []
    for steer, d, mid, end in primitive_offsets(cfg, params):
        ex = node.x + cphi * end[0] - sphi * end[1]
        ey = node.y + sphi * end[0] + cphi * end[1]
        ephi = wrap_angle(node.phi + end[2])
        if not grid.in_bounds(ex, ey):
            continue
        if abs(ephi) > params.phi_max:
            continue
        child = SearchNode(
            x=ex, y=ey, phi=ephi, d=d,
            g_cost=node.g_cost + arc,
            cost=node.cost + arc,
            parent=node, steering=steer)
        if checker is not None:
            mx = node.x + cphi * mid[0] - sphi * mid[1]
            my = node.y + sphi * mid[0] + cphi * mid[1]
            sample_poses.append((mx, my, node.phi + mid[2]))
            sample_poses.append((ex, ey, ephi))
        candidates.append(child)

    if checker is None or not candidates:
        return candidates
    hits = checker.collides(np.array(sample_poses))
    hits = hits.reshape(-1, 2).any(axis=1)
    return [child for child, hit in zip(candidates, hits) if not hit]


def apply_yaw_penalty(child: SearchNode, cfg: SearchConfig) -> SearchNode:
    """Add the linear heading-band penalty to the child's cost.

    Zero inside |phi| < yaw_limit, ramping linearly to the full weight at
    |phi| = pi/2. The gating heading is the child's own, unless the literal
    parent-gated variant is enabled.
    """
    phi = child.phi
    if cfg.yaw_penalty_on_parent and child.parent is not None:
        phi = child.parent.phi
    mag = abs(phi)
    if mag >= cfg.yaw_limit:
        ramp = (mag - cfg.yaw_limit) / (np.pi / 2.0 - cfg.yaw_limit)
        child.cost += ramp * cfg.yaw_penalty_weight
    return child


def apply_overtravel_penalty(child: SearchNode, cfg: SearchConfig) -> SearchNode:
    """Set the child's queue priority, inflating the heuristic past x_limit.

    Requires h_cost to be set. Inside |x| < x_limit the priority is plain
    cost + heuristic; outside, the heuristic is multiplied by
    1 + (|x| - x_limit)/(x_target - x_limit), so the inflation starts at 0
    on the threshold and grows with overtravel. The bare-ratio literal
    variant is available behind ``overtravel_literal``.
    """
    if cfg.x_limit is None or cfg.x_target is None:
        raise ValueError("x_limit and x_target must be set before applying the penalty")
    if cfg.x_target == cfg.x_limit:
        raise ValueError("x_target must differ from x_limit")
    if np.isfinite(cfg.x_limit) and cfg.x_target <= cfg.x_limit:
        raise ValueError("x_target must exceed x_limit")
    mag = abs(child.x)
    if mag >= cfg.x_limit:
        ratio = (mag - cfg.x_limit) / (cfg.x_target - cfg.x_limit)
        mult = ratio if cfg.overtravel_literal else 1.0 + ratio
    else:
        mult = 1.0
    child.f_cost = child.cost + mult * child.h_cost
    return child


# ---------------------------------------------------------------------------
# planners


def _baseline_penalty(parent: SearchNode, child: SearchNode, cfg: SearchConfig) -> float:
    pen = 0.0
    if child.d < 0:
        pen += cfg.reverse_penalty
    if parent.d != 0 and parent.d != child.d:
        pen += cfg.direction_switch_penalty
    pen += cfg.steering_penalty * abs(child.steering)
    if parent.steering is not None:
        pen += cfg.steering_gradient_penalty * abs(child.steering - parent.steering)
    return pen


def _reconstruct(node: SearchNode, arc: float, nodes_expanded: int,
                 wall_time: float) -> PlannedPath:
    chain = []
    cur = node
    while cur is not None:
        chain.append(cur)
        cur = cur.parent
    chain.reverse()
    poses = np.array([[n.x, n.y, n.phi] for n in chain])
    steering = np.array([n.steering for n in chain[1:]], dtype=float)
    directions = np.array([n.d for n in chain], dtype=int)
    if len(chain) > 1:
        directions[0] = directions[1]
    else:
        directions[0] = 1
    seg_d = directions[1:]
    switches = int(np.sum(seg_d[1:] != seg_d[:-1])) if seg_d.size > 1 else 0
    return PlannedPath(
        poses=poses, directions=directions, steering=steering,
        nodes_expanded=nodes_expanded, wall_time=wall_time,
        path_length=arc * steering.size, direction_switches=switches)


def _best_first(start: Pose2D, goal: Pose2D, obstacles, cfg: SearchConfig,
                grid: GridSpec, params: VehicleParams, scenario_biased: bool) -> PlannedPath:
    t0 = time.perf_counter()
    footprint = footprint_from_params(params)
    checker = StaticCollisionChecker(footprint, obstacles) if obstacles else None

    if checker is not None:
        blocked = checker.collides(np.array([[start.x, start.y, start.phi],
                                             [goal.x, goal.y, goal.phi]]))
        if blocked[0]:
            raise NoPathError("start pose is in collision", 0)
        if blocked[1]:
            raise NoPathError("goal pose is in collision", 0)

    def heuristic(x, y):
        return math.hypot(x - goal.x, y - goal.y)

    def finalize(child: SearchNode):
        if scenario_biased:
            apply_yaw_penalty(child, cfg)
            child.h_cost = heuristic(child.x, child.y)
            apply_overtravel_penalty(child, cfg)
        else:
            child.cost += _baseline_penalty(child.parent, child, cfg)
            child.h_cost = heuristic(child.x, child.y)
            child.f_cost = child.cost + child.h_cost
        return child

    root = SearchNode(x=start.x, y=start.y, phi=start.phi, d=0)
    root.h_cost = heuristic(root.x, root.y)
    root.f_cost = root.h_cost

    counter = 0
    open_heap = [(root.f_cost, root.h_cost, counter, root)]
    best_cost = {grid.key(root.x, root.y, root.phi, root.d): root.cost}
    closed = set()
    expanded = 0

    pos_tol = grid.xy_resolution
    yaw_tol = grid.yaw_resolution

    while open_heap:
        _, _, _, node = heapq.heappop(open_heap)
        key = grid.key(node.x, node.y, node.phi, node.d)
        if key in closed:
            continue
        closed.add(key)

        if (math.hypot(node.x - goal.x, node.y - goal.y) <= pos_tol
                and abs(wrap_angle(node.phi - goal.phi)) <= yaw_tol):
            return _reconstruct(node, cfg.primitive_arc_length, expanded,
                                time.perf_counter() - t0)

        expanded += 1
        if expanded > cfg.node_budget:
            raise BudgetExceededError(
                f"node budget {cfg.node_budget} spent before reaching the goal",
                expanded)

        for child in expand(node, cfg, grid, params, checker=checker):
            finalize(child)
            ckey = grid.key(child.x, child.y, child.phi, child.d)
            if ckey in closed:
                continue
            known = best_cost.get(ckey)
            if known is not None and child.cost >= known - 1e-12:
                continue
            best_cost[ckey] = child.cost
            counter += 1
            heapq.heappush(open_heap, (child.f_cost, child.h_cost, counter, child))

    raise NoPathError("open list exhausted before reaching the goal", expanded)


def plan_shastar(start: Pose2D, goal: Pose2D, static_obstacles, cfg: SearchConfig,
                 grid: GridSpec, params: VehicleParams) -> PlannedPath:
    """Scenario-biased search: heading-band penalty plus overtravel inflation."""
    return _best_first(start, goal, static_obstacles, cfg.resolved(goal.x), grid,
                       params, scenario_biased=True)


def plan_hastar_baseline(start: Pose2D, goal: Pose2D, static_obstacles,
                         cfg: SearchConfig, grid: GridSpec,
                         params: VehicleParams) -> PlannedPath:
    """Conventional additive-penalty search over the same primitive lattice."""
    return _best_first(start, goal, static_obstacles, cfg.resolved(goal.x), grid,
                       params, scenario_biased=False)
