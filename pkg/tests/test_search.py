"""Planner tests: penalty formulas, primitive geometry, search behavior."""

import math

import numpy as np
import pytest

from parkplanner import geometry
from parkplanner.geometry import Pose2D, rectangle_polytope
from parkplanner.search import (
    BudgetExceededError,
    GridSpec,
    NoPathError,
    SearchConfig,
    SearchNode,
    StaticCollisionChecker,
    apply_overtravel_penalty,
    apply_yaw_penalty,
    expand,
    footprint_from_params,
    plan_hastar_baseline,
    plan_shastar,
)
from parkplanner.vehicle import VehicleParams, VehicleState, ControlInput, euler_step

PARAMS = VehicleParams()
GRID = GridSpec()


def node_at(x=0.0, y=0.0, phi=0.0, d=0, cost=0.0, h=0.0):
    n = SearchNode(x=x, y=y, phi=phi, d=d)
    n.cost = cost
    n.h_cost = h
    return n


class TestYawPenalty:
    def test_inside_band_unchanged(self):
        cfg = SearchConfig(yaw_limit=np.pi / 6, yaw_penalty_weight=10.0)
        n = node_at(phi=0.1, cost=7.0)
        assert apply_yaw_penalty(n, cfg).cost == 7.0

    def test_full_weight_at_right_angle(self):
        cfg = SearchConfig(yaw_limit=np.pi / 6, yaw_penalty_weight=10.0)
        n = node_at(phi=np.pi / 2, cost=0.0)
        assert apply_yaw_penalty(n, cfg).cost == pytest.approx(10.0, abs=1e-12)

    def test_midpoint_of_ramp(self):
        cfg = SearchConfig(yaw_limit=np.pi / 6, yaw_penalty_weight=10.0)
        n = node_at(phi=np.pi / 3, cost=0.0)
        assert apply_yaw_penalty(n, cfg).cost == pytest.approx(5.0, abs=1e-12)

    def test_negative_heading_symmetric(self):
        cfg = SearchConfig(yaw_limit=np.pi / 6, yaw_penalty_weight=10.0)
        a = apply_yaw_penalty(node_at(phi=np.pi / 3), cfg).cost
        b = apply_yaw_penalty(node_at(phi=-np.pi / 3), cfg).cost
        assert a == b

    def test_parent_gated_variant(self):
        cfg = SearchConfig(yaw_limit=np.pi / 6, yaw_penalty_weight=10.0,
                           yaw_penalty_on_parent=True)
        parent = node_at(phi=0.0)
        child = node_at(phi=np.pi / 3)
        child.parent = parent
        # parent heading inside the band -> no penalty even though child is out
        assert apply_yaw_penalty(child, cfg).cost == 0.0


class TestOvertravelPenalty:
    CFG = SearchConfig(x_limit=2.0, x_target=4.0)

    def test_inside_threshold_plain_sum(self):
        n = node_at(x=1.0, cost=5.0, h=3.0)
        assert apply_overtravel_penalty(n, self.CFG).f_cost == pytest.approx(8.0)

    def test_at_threshold_continuous(self):
        n = node_at(x=2.0, cost=5.0, h=3.0)
        assert apply_overtravel_penalty(n, self.CFG).f_cost == pytest.approx(8.0)

    def test_halfway_up_the_ramp(self):
        n = node_at(x=3.0, cost=5.0, h=3.0)
        assert apply_overtravel_penalty(n, self.CFG).f_cost == pytest.approx(9.5)

    def test_negative_x_uses_magnitude(self):
        n = node_at(x=-3.0, cost=5.0, h=3.0)
        assert apply_overtravel_penalty(n, self.CFG).f_cost == pytest.approx(9.5)

    def test_degenerate_config_rejected(self):
        cfg = SearchConfig(x_limit=4.0, x_target=4.0)
        with pytest.raises(ValueError):
            apply_overtravel_penalty(node_at(x=1.0), cfg)

    def test_multiplier_never_below_one(self):
        for x in (-20.0, -2.0, 0.0, 1.99, 2.0, 3.7, 50.0):
            n = node_at(x=x, cost=1.0, h=2.0)
            apply_overtravel_penalty(n, self.CFG)
            assert n.f_cost >= n.cost + n.h_cost - 1e-12

    def test_infinite_threshold_disables_inflation(self):
        cfg = SearchConfig(x_limit=np.inf, x_target=0.0)
        n = node_at(x=1e6, cost=5.0, h=3.0)
        assert apply_overtravel_penalty(n, cfg).f_cost == pytest.approx(8.0)


class TestExpand:
    CFG = SearchConfig(primitive_arc_length=1.0)

    def test_six_children_in_open_space(self):
        children = expand(node_at(), self.CFG, GRID, PARAMS)
        assert len(children) == 6

    def test_straight_forward_child(self):
        children = expand(node_at(), self.CFG, GRID, PARAMS)
        straight = [c for c in children if c.steering == 0.0 and c.d == 1][0]
        assert straight.x == pytest.approx(1.0, abs=1e-9)
        assert straight.y == pytest.approx(0.0, abs=1e-12)
        assert straight.phi == pytest.approx(0.0, abs=1e-12)

    def test_arc_child_heading_and_radius(self):
        children = expand(node_at(), self.CFG, GRID, PARAMS)
        left = [c for c in children if c.steering == PARAMS.delta_max and c.d == 1][0]
        # constant-steering kinematics: heading change = arc * tan(delta) / L
        assert left.phi == pytest.approx(math.tan(0.6) / 2.7, abs=1e-12)
        radius = 2.7 / math.tan(0.6)
        center_dist = math.hypot(left.x - 0.0, left.y - radius)
        # forward-Euler endpoint drifts off the exact circle by O(arc^2/(2 r n))
        assert center_dist == pytest.approx(radius, abs=0.01)

    def test_costs_accumulate_arc_length(self):
        parent = node_at(cost=2.0)
        parent.g_cost = 2.0
        for child in expand(parent, self.CFG, GRID, PARAMS):
            assert child.g_cost == pytest.approx(3.0)
            assert child.cost == pytest.approx(3.0)
            assert child.parent is parent

    def test_walled_in_node_has_no_children(self):
        walls = [
            rectangle_polytope(2.6, 0.0, 0.4, 6.0),
            rectangle_polytope(-2.6, 0.0, 0.4, 6.0),
            rectangle_polytope(0.0, 1.25, 5.0, 0.4),
            rectangle_polytope(0.0, -1.25, 5.0, 0.4),
        ]
        cfg = SearchConfig(primitive_arc_length=0.6)
        assert expand(node_at(), cfg, GRID, PARAMS, obstacles=walls) == []

    def test_out_of_bounds_children_dropped(self):
        grid = GridSpec(x_min=-0.5, x_max=0.5, y_min=-0.5, y_max=0.5)
        assert expand(node_at(), self.CFG, grid, PARAMS) == []

    def test_heading_bound_filters_children(self):
        # parent heading just inside the state bound: turning children exceed it
        phi0 = PARAMS.phi_max - 0.05
        children = expand(node_at(phi=phi0), self.CFG, GRID, PARAMS)
        assert all(abs(c.phi) <= PARAMS.phi_max for c in children)
        assert len(children) < 6


class TestCollisionChecker:
    def test_agrees_with_geometry_predicate(self):
        rng = np.random.default_rng(23)
        foot = footprint_from_params(PARAMS)
        obstacles = [rectangle_polytope(rng.uniform(-6, 6), rng.uniform(-6, 6),
                                        rng.uniform(0.5, 3), rng.uniform(0.5, 3),
                                        rng.uniform(-np.pi, np.pi))
                     for _ in range(5)]
        checker = StaticCollisionChecker(foot, obstacles)
        poses = np.column_stack([rng.uniform(-7, 7, 80), rng.uniform(-7, 7, 80),
                                 rng.uniform(-np.pi, np.pi, 80)])
        got = checker.collides(poses)
        for i in range(poses.shape[0]):
            pose = Pose2D(*poses[i])
            body = geometry.footprint_polytope(foot, pose)
            want = any(geometry.polytopes_intersect(body, o) for o in obstacles)
            assert got[i] == want

    def test_no_obstacles_never_collides(self):
        checker = StaticCollisionChecker(footprint_from_params(PARAMS), [])
        assert not checker.collides(np.array([[0.0, 0.0, 0.0]]))[0]


def corridor_scenario():
    """Straight corridor with a parking gap between two parked rows."""
    obstacles = [
        rectangle_polytope(0.0, 8.5, 30.0, 1.0),    # upper wall
        rectangle_polytope(0.0, -1.0, 30.0, 1.0),   # curb below the spots
        rectangle_polytope(-6.0, 1.0, 4.7, 2.0),    # parked car, left of gap
        rectangle_polytope(6.0, 1.0, 4.7, 2.0),     # parked car, right of gap
    ]
    start = Pose2D(-12.0, 5.0, 0.0)
    goal = Pose2D(0.0, 1.0, 0.0)
    return start, goal, obstacles


class TestPlanners:
    def test_scenario_planner_reaches_goal(self):
        start, goal, obstacles = corridor_scenario()
        path = plan_shastar(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
        end = path.poses[-1]
        assert math.hypot(end[0] - goal.x, end[1] - goal.y) <= GRID.xy_resolution
        assert abs(geometry.wrap_angle(end[2] - goal.phi)) <= GRID.yaw_resolution
        assert path.nodes_expanded > 0
        assert path.path_length == pytest.approx(
            0.6 * (len(path) - 1), abs=1e-12)

    def test_baseline_planner_reaches_goal(self):
        start, goal, obstacles = corridor_scenario()
        path = plan_hastar_baseline(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
        end = path.poses[-1]
        assert math.hypot(end[0] - goal.x, end[1] - goal.y) <= GRID.xy_resolution

    def test_paths_are_collision_free(self):
        start, goal, obstacles = corridor_scenario()
        foot = footprint_from_params(PARAMS)
        for planner in (plan_shastar, plan_hastar_baseline):
            path = planner(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
            for pose in path.poses:
                body = geometry.footprint_polytope(foot, Pose2D(*pose))
                assert not any(geometry.polytopes_intersect(body, o) for o in obstacles)

    def test_paths_reintegrate_under_euler_stepping(self):
        start, goal, obstacles = corridor_scenario()
        cfg = SearchConfig()
        path = plan_shastar(start, goal, obstacles, cfg, GRID, PARAMS)
        ds = cfg.primitive_arc_length / cfg.n_substeps
        for i in range(len(path) - 1):
            d = path.directions[i + 1]
            z = VehicleState(*path.poses[i], v=float(d))
            u = ControlInput(delta=float(path.steering[i]), a=0.0)
            for _ in range(cfg.n_substeps):
                z = euler_step(z, u, ds, PARAMS)
            assert math.hypot(z.x - path.poses[i + 1][0],
                              z.y - path.poses[i + 1][1]) <= 1e-6
            assert abs(geometry.wrap_angle(z.phi - path.poses[i + 1][2])) <= 1e-6

    def test_deterministic_repeat(self):
        start, goal, obstacles = corridor_scenario()
        a = plan_shastar(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
        b = plan_shastar(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
        assert a.poses.tobytes() == b.poses.tobytes()
        assert a.nodes_expanded == b.nodes_expanded

    def test_unbiased_config_reduces_to_plain_baseline(self):
        # no heading penalty, no heuristic inflation, no additive penalties:
        # both planners must do the identical search
        start, goal, obstacles = corridor_scenario()
        cfg = SearchConfig(
            yaw_penalty_weight=0.0, x_limit=np.inf, x_target=0.0,
            reverse_penalty=0.0, direction_switch_penalty=0.0,
            steering_penalty=0.0, steering_gradient_penalty=0.0)
        a = plan_shastar(start, goal, obstacles, cfg, GRID, PARAMS)
        b = plan_hastar_baseline(start, goal, obstacles, cfg, GRID, PARAMS)
        assert a.poses.tobytes() == b.poses.tobytes()
        assert a.nodes_expanded == b.nodes_expanded

    def test_start_equals_goal(self):
        start, _, obstacles = corridor_scenario()
        path = plan_shastar(start, start, obstacles, SearchConfig(), GRID, PARAMS)
        assert len(path) == 1
        assert path.path_length == 0.0
        assert path.direction_switches == 0

    def test_goal_inside_obstacle(self):
        start, _, obstacles = corridor_scenario()
        bad_goal = Pose2D(-6.0, 1.0, 0.0)  # center of a parked car
        with pytest.raises(NoPathError, match="goal pose"):
            plan_shastar(start, bad_goal, obstacles, SearchConfig(), GRID, PARAMS)

    def test_start_inside_obstacle(self):
        _, goal, obstacles = corridor_scenario()
        with pytest.raises(NoPathError, match="start pose"):
            plan_shastar(Pose2D(-6.0, 1.0, 0.0), goal, obstacles,
                         SearchConfig(), GRID, PARAMS)

    def test_sealed_start_exhausts_open_list(self):
        # start boxed in by walls: the reachable set is tiny, search must
        # terminate with a no-path error rather than hang
        walls = [
            rectangle_polytope(4.0, 0.0, 1.0, 12.0),
            rectangle_polytope(-4.0, 0.0, 1.0, 12.0),
            rectangle_polytope(0.0, 3.0, 9.0, 1.0),
            rectangle_polytope(0.0, -3.0, 9.0, 1.0),
        ]
        with pytest.raises(NoPathError, match="exhausted"):
            plan_shastar(Pose2D(0.0, 0.0, 0.0), Pose2D(15.0, 0.0, 0.0), walls,
                         SearchConfig(), GRID, PARAMS)

    def test_tiny_budget_raises(self):
        start, goal, obstacles = corridor_scenario()
        with pytest.raises(BudgetExceededError):
            plan_shastar(start, goal, obstacles, SearchConfig(node_budget=5),
                         GRID, PARAMS)

    def test_scenario_bias_expands_fewer_nodes(self):
        start, goal, obstacles = corridor_scenario()
        fast = plan_shastar(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
        slow = plan_hastar_baseline(start, goal, obstacles, SearchConfig(), GRID, PARAMS)
        assert fast.nodes_expanded < slow.nodes_expanded


class TestConfigValidation:
    def test_bad_yaw_limit(self):
        with pytest.raises(ValueError):
            SearchConfig(yaw_limit=2.0)

    def test_bad_grid(self):
        with pytest.raises(ValueError):
            GridSpec(xy_resolution=0.0)
        with pytest.raises(ValueError):
            GridSpec(x_min=5.0, x_max=-5.0)

    def test_negative_penalty_rejected(self):
        with pytest.raises(ValueError):
            SearchConfig(reverse_penalty=-1.0)
