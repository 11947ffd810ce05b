"""Time parameterization of geometric parking paths.

The lattice planner outputs a polyline of poses with direction labels but no
time law. This module splits that path at direction switches, then solves a
minimum-time optimal control problem per switch-free segment: a direct
transcription of the bicycle dynamics whose decision variables are the state
and input sequences plus (in the first pass) the segment duration. A second
pass re-solves on a grid whose step is exactly the output sampling interval,
so the emitted samples are themselves the transcription points and stay
Euler-consistent without any interpolation.

The objective trades pure duration against squared path deviation and input
effort, both integrated with the time step, so duration stays the dominant
term at any grid density.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import nlp as nlp_mod
from .nlp import NlpOptions, NlpProblem
from .search import PlannedPath
from .vehicle import ControlInput, VehicleParams, VehicleState, check_bounds

log = logging.getLogger(__name__)

OUTPUT_DT = 0.1
TRANSCRIPTION_POINTS = 40  # free-duration pass grid


@dataclass
class PathSegment:
    """Maximal sub-path with a single travel direction."""

    poses: np.ndarray  # (n, 3)
    steering: np.ndarray  # (n-1,)
    direction: int  # +1 forward, -1 reverse
    arc_step: float

    @property
    def length(self) -> float:
        return self.arc_step * self.steering.size

    @property
    def n_poses(self) -> int:
        return self.poses.shape[0]


@dataclass
class Trajectory:
    """Uniformly sampled reference: (t, state, input) triples.

    ``switch_indices`` mark the samples where travel direction flips (the
    segment seams); speed is zero exactly there and at both endpoints.
    ``from_fallback`` marks a piece produced by the trapezoidal fallback
    rather than the optimizer; ``fallback_segments`` carries those piece
    indices through assembly.
    """

    dt: float
    samples: list  # of (t, VehicleState, ControlInput)
    switch_indices: list = field(default_factory=list)
    from_fallback: bool = False
    fallback_segments: tuple = ()

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return self.samples[-1][0] - self.samples[0][0] if self.samples else 0.0

    def times(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    def states_array(self) -> np.ndarray:
        return np.array([s[1].as_array() for s in self.samples])

    def inputs_array(self) -> np.ndarray:
        return np.array([s[2].as_array() for s in self.samples])

    def segment_id(self, i: int) -> int:
        return bisect_left(self.switch_indices, i)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,y,phi,v,delta,a,segment_id\n")
            for i, (t, z, u) in enumerate(self.samples):
                fh.write(f"{t!r},{z.x!r},{z.y!r},{z.phi!r},{z.v!r},"
                         f"{u.delta!r},{u.a!r},{self.segment_id(i)}\n")


def split_segments(path: PlannedPath) -> list:
    """Cut a planned path at direction switches.

    Adjacent segments share their boundary pose, so concatenating the pieces
    (dropping each later segment's first pose) reproduces the path.
    """
    n = len(path)
    if n == 0:
        raise ValueError("path has no poses")
    if n == 1:
        return [PathSegment(poses=path.poses.copy(), steering=np.zeros(0),
                            direction=1, arc_step=0.0)]
    arc = path.path_length / (n - 1)
    seg_d = path.directions[1:]
    cuts = [0]
    for i in range(1, seg_d.size):
        if seg_d[i] != seg_d[i - 1]:
            cuts.append(i)
    cuts.append(seg_d.size)
    out = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        out.append(PathSegment(
            poses=path.poses[a:b + 1].copy(),
            steering=path.steering[a:b].copy(),
            direction=int(seg_d[a]),
            arc_step=arc))
    return out


def _accel_limits(params: VehicleParams) -> tuple[float, float]:
    return params.a_max, -params.a_min


def _speed_cap(params: VehicleParams, direction: int) -> float:
    return params.v_max if direction > 0 else -params.v_min


def trapezoid_duration(length: float, params: VehicleParams,
                       direction: int = 1) -> float:
    """Minimum time to cover ``length`` from rest to rest along a straight line."""
    if length <= 0.0:
        return 0.0
    a_up, a_dn = _accel_limits(params)
    v_cap = _speed_cap(params, direction)
    v_peak = math.sqrt(2.0 * length * a_up * a_dn / (a_up + a_dn))
    if v_peak <= v_cap:
        return v_peak / a_up + v_peak / a_dn
    cruise = length - v_cap ** 2 * (1.0 / (2 * a_up) + 1.0 / (2 * a_dn))
    return v_cap / a_up + v_cap / a_dn + cruise / v_cap


def _trapezoid_speed_at_time(t: float, length: float, params: VehicleParams,
                             direction: int) -> float:
    """Speed magnitude of the rest-to-rest trapezoid at time t."""
    if length <= 0.0:
        return 0.0
    a_up, a_dn = _accel_limits(params)
    v_cap = _speed_cap(params, direction)
    total = trapezoid_duration(length, params, direction)
    if t <= 0.0 or t >= total:
        return 0.0
    v_peak = min(v_cap, math.sqrt(2.0 * length * a_up * a_dn / (a_up + a_dn)))
    t_up = v_peak / a_up
    t_dn = v_peak / a_dn
    if t <= t_up:
        return a_up * t
    if t >= total - t_dn:
        return a_dn * (total - t)
    return v_peak


def seed_profile(segment: PathSegment, params: VehicleParams) -> np.ndarray:
    """Trapezoidal speed at each segment pose, signed by direction.

    Speed magnitude at arc position s is min(v_cap, sqrt(2 a_up s),
    sqrt(2 a_dn (L - s))), the classic rest-to-rest profile.
    """
    n = segment.n_poses
    L = segment.length
    if L <= 0.0:
        return np.zeros(n)
    a_up, a_dn = _accel_limits(params)
    v_cap = _speed_cap(params, segment.direction)
    s = np.arange(n) * segment.arc_step
    mag = np.minimum(v_cap, np.minimum(np.sqrt(2.0 * a_up * s),
                                       np.sqrt(2.0 * a_dn * np.maximum(L - s, 0.0))))
    return segment.direction * mag


# ---------------------------------------------------------------------------
# polyline resampling helpers


def _segment_geometry(segment: PathSegment):
    """Cumulative arc grid, unwrapped headings, per-arc steering."""
    s_grid = np.arange(segment.n_poses) * segment.arc_step
    phi = np.unwrap(segment.poses[:, 2])
    return s_grid, phi


def _pose_at_arc(segment: PathSegment, s_grid, phi_unwrapped, s: float):
    s = min(max(s, 0.0), s_grid[-1] if s_grid.size else 0.0)
    x = np.interp(s, s_grid, segment.poses[:, 0])
    y = np.interp(s, s_grid, segment.poses[:, 1])
    ph = np.interp(s, s_grid, phi_unwrapped)
    return x, y, ph


def _steering_at_arc(segment: PathSegment, s: float) -> float:
    if segment.steering.size == 0:
        return 0.0
    idx = min(int(s / segment.arc_step), segment.steering.size - 1)
    return float(segment.steering[max(idx, 0)])


# ---------------------------------------------------------------------------
# direct transcription


class _PolylineDistance:
    """Squared distance of query points to a polyline, with gradients.

    The gradient of min-over-segments squared distance at a point p is
    2 (p - q) with q the nearest polyline point, valid wherever the nearest
    point is unique (everywhere but a measure-zero set).
    """

    def __init__(self, points: np.ndarray):
        pts = np.asarray(points, dtype=float)
        if pts.shape[0] < 2:
            pts = np.vstack([pts, pts])
        self.a = pts[:-1]  # (m, 2)
        self.d = pts[1:] - pts[:-1]
        self.len2 = np.maximum(np.einsum("ij,ij->i", self.d, self.d), 1e-18)

    def nearest(self, P: np.ndarray) -> np.ndarray:
        rel = P[:, None, :] - self.a[None, :, :]  # (K+1, m, 2)
        t = np.clip(np.einsum("kmj,mj->km", rel, self.d) / self.len2, 0.0, 1.0)
        proj = self.a[None, :, :] + t[:, :, None] * self.d[None, :, :]
        d2 = np.sum((P[:, None, :] - proj) ** 2, axis=2)
        idx = np.argmin(d2, axis=1)
        return proj[np.arange(P.shape[0]), idx]


class _Transcription:
    """Vectorized callbacks for one segment's minimum-time program.

    Variable layout: [T] (free-duration pass only) + states (K+1, 4) row-major
    + inputs (K, 2) row-major. Dynamics enter as K four-row equality blocks
    z[k+1] - z[k] - dt f(z[k], u[k]) = 0 with dt = T/K (or the fixed step).
    Path deviation is squared distance to the segment polyline as a curve, so
    it constrains cross-track error without dictating the speed profile.
    """

    def __init__(self, K: int, dev_poly: np.ndarray, params: VehicleParams,
                 w_dev: float, w_u: float, free_T: bool, fixed_dt: float = OUTPUT_DT):
        self.K = K
        self.dist = _PolylineDistance(dev_poly)
        self.p = params
        self.w_dev = w_dev
        self.w_u = w_u
        self.free_T = free_T
        self.fixed_dt = fixed_dt
        self.off_z = 1 if free_T else 0
        self.off_u = self.off_z + 4 * (K + 1)
        self.n = self.off_u + 2 * K

    def unpack(self, x):
        K = self.K
        T = x[0] if self.free_T else self.fixed_dt * K
        Z = x[self.off_z:self.off_z + 4 * (K + 1)].reshape(K + 1, 4)
        U = x[self.off_u:].reshape(K, 2)
        return T, Z, U

    def _deviation(self, Z):
        P = Z[:, :2]
        res = P - self.dist.nearest(P)
        return res, float(np.sum(res * res))

    def objective(self, x):
        T, Z, U = self.unpack(x)
        dt = T / self.K
        _, dev2 = self._deviation(Z)
        J = self.w_dev * dt * dev2 + self.w_u * dt * float(np.sum(U * U))
        if self.free_T:
            J += T
        return J

    def gradient(self, x):
        T, Z, U = self.unpack(x)
        dt = T / self.K
        res, dev2 = self._deviation(Z)
        g = np.zeros(self.n)
        gz = np.zeros((self.K + 1, 4))
        gz[:, :2] = 2.0 * self.w_dev * dt * res
        g[self.off_z:self.off_u] = gz.ravel()
        g[self.off_u:] = (2.0 * self.w_u * dt * U).ravel()
        if self.free_T:
            g[0] = 1.0 + (self.w_dev * dev2
                          + self.w_u * float(np.sum(U * U))) / self.K
        return g

    def _rhs(self, Z, U):
        v = Z[:-1, 3]
        phi = Z[:-1, 2]
        F = np.empty((self.K, 4))
        F[:, 0] = v * np.cos(phi)
        F[:, 1] = v * np.sin(phi)
        F[:, 2] = v * np.tan(U[:, 0]) / self.p.wheelbase
        F[:, 3] = U[:, 1]
        return F

    def equalities(self, x):
        T, Z, U = self.unpack(x)
        dt = T / self.K
        return (Z[1:] - Z[:-1] - dt * self._rhs(Z, U)).ravel()

    def eq_jacobian(self, x):
        T, Z, U = self.unpack(x)
        K = self.K
        dt = T / K
        phi = Z[:-1, 2]
        v = Z[:-1, 3]
        tan_d = np.tan(U[:, 0])
        sec2 = 1.0 + tan_d * tan_d
        c, s = np.cos(phi), np.sin(phi)
        L = self.p.wheelbase

        J = np.zeros((4 * K, self.n))
        k = np.arange(K)
        zcol = lambda kk, j: self.off_z + 4 * kk + j
        ucol = lambda kk, j: self.off_u + 2 * kk + j

        for j in range(4):  # identity on z[k+1], negative identity on z[k]
            J[4 * k + j, zcol(k + 1, j)] = 1.0
            J[4 * k + j, zcol(k, j)] = -1.0
        J[4 * k + 0, zcol(k, 2)] += dt * v * s
        J[4 * k + 0, zcol(k, 3)] += -dt * c
        J[4 * k + 1, zcol(k, 2)] += -dt * v * c
        J[4 * k + 1, zcol(k, 3)] += -dt * s
        J[4 * k + 2, zcol(k, 3)] += -dt * tan_d / L
        J[4 * k + 2, ucol(k, 0)] = -dt * v * sec2 / L
        J[4 * k + 3, ucol(k, 1)] = -dt

        if self.free_T:
            F = self._rhs(Z, U)
            J[:, 0] = (-F / K).ravel()
        return J

    def bounds(self, start_state, end_pose, direction, T_bounds=None,
               state_margin: float = 1e-2, input_margin: float = 2e-3):
        """Box bounds; free states and inputs keep a small margin inside the
        true limits so the exactness projection has interior room to correct
        in (its own clipping uses the true limits)."""
        lo = np.full(self.n, -np.inf)
        hi = np.full(self.n, np.inf)
        if self.free_T:
            lo[0], hi[0] = T_bounds
        K = self.K
        zs = self.off_z
        lo[zs + 2:self.off_u:4] = -self.p.phi_max + state_margin
        hi[zs + 2:self.off_u:4] = self.p.phi_max - state_margin
        if direction > 0:
            lo[zs + 3:self.off_u:4] = 0.0
            hi[zs + 3:self.off_u:4] = self.p.v_max - state_margin
        else:
            lo[zs + 3:self.off_u:4] = self.p.v_min + state_margin
            hi[zs + 3:self.off_u:4] = 0.0
        lo[self.off_u::2] = -self.p.delta_max + input_margin
        hi[self.off_u::2] = self.p.delta_max - input_margin
        lo[self.off_u + 1::2] = self.p.a_min + input_margin
        hi[self.off_u + 1::2] = self.p.a_max - input_margin
        # pinned endpoint states, rest speed at both ends
        for j, val in enumerate(start_state):
            lo[zs + j] = hi[zs + j] = val
        for j, val in enumerate(end_pose):
            lo[zs + 4 * K + j] = hi[zs + 4 * K + j] = val
        lo[zs + 4 * K + 3] = hi[zs + 4 * K + 3] = 0.0
        return lo, hi


def _rollout(z0: np.ndarray, U: np.ndarray, dt: float,
             params: VehicleParams) -> np.ndarray:
    """Forward-Euler rollout as raw arrays (heading left unwrapped)."""
    K = U.shape[0]
    Z = np.empty((K + 1, 4))
    Z[0] = z0
    L = params.wheelbase
    for k in range(K):
        x, y, phi, v = Z[k]
        delta, a = U[k]
        Z[k + 1] = (x + dt * v * math.cos(phi),
                    y + dt * v * math.sin(phi),
                    phi + dt * v * math.tan(delta) / L,
                    v + dt * a)
    return Z


def _terminal_sensitivity(Z: np.ndarray, U: np.ndarray, dt: float,
                          params: VehicleParams) -> np.ndarray:
    """d z[K] / d U as a (4, 2K) matrix via one backward sweep."""
    K = U.shape[0]
    L = params.wheelbase
    J = np.zeros((4, 2 * K))
    P = np.eye(4)  # product of step Jacobians from the tail down to k+1
    for k in range(K - 1, -1, -1):
        phi, v = Z[k, 2], Z[k, 3]
        delta = U[k, 0]
        tan_d = math.tan(delta)
        A = np.eye(4)
        A[0, 2] = -dt * v * math.sin(phi)
        A[0, 3] = dt * math.cos(phi)
        A[1, 2] = dt * v * math.cos(phi)
        A[1, 3] = dt * math.sin(phi)
        A[2, 3] = dt * tan_d / L
        B = np.zeros((4, 2))
        B[2, 0] = dt * v * (1.0 + tan_d * tan_d) / L
        B[3, 1] = dt
        J[:, 2 * k:2 * k + 2] = P @ B
        P = P @ A
    return J


class _Shooting:
    """Input-space program whose states are the exact step-model rollout.

    With the duration fixed there is no minimum-time pressure, so state
    limits are left to a post-check and only the inputs carry bounds. The
    terminal condition is four equality rows; this keeps the multiplier
    method well conditioned where a full transcription grinds. Stored states
    replay exactly by construction.
    """

    ENVELOPE_WEIGHT = 1e4
    ENVELOPE_MARGIN = 3e-3

    def __init__(self, K: int, z0: np.ndarray, target4: np.ndarray,
                 dev_poly: np.ndarray, params: VehicleParams,
                 w_dev: float, w_u: float, dt: float, direction: int = 1):
        self.K = K
        self.n = 2 * K
        self.z0 = np.asarray(z0, dtype=float)
        self.target4 = np.asarray(target4, dtype=float)
        self.dist = _PolylineDistance(dev_poly)
        self.p = params
        self.w_dev = w_dev
        self.w_u = w_u
        self.dt = dt
        m = self.ENVELOPE_MARGIN
        # rest points sit at v = 0 exactly, so only the far side shrinks
        if direction > 0:
            self.v_lo, self.v_hi = 0.0, params.v_max - m
        else:
            self.v_lo, self.v_hi = params.v_min + m, 0.0
        self.phi_lim = params.phi_max - m
        self._cache_key = None
        self._cache_Z = None

    def _env_terms(self, Z):
        """Hinge excesses above the interior envelope, per sample."""
        h_v = (np.maximum(0.0, Z[:, 3] - self.v_hi)
               - np.maximum(0.0, self.v_lo - Z[:, 3]))
        h_phi = (np.maximum(0.0, Z[:, 2] - self.phi_lim)
                 - np.maximum(0.0, -self.phi_lim - Z[:, 2]))
        return h_v, h_phi

    def states(self, u_flat: np.ndarray) -> np.ndarray:
        key = u_flat.tobytes()
        if key != self._cache_key:
            self._cache_Z = _rollout(self.z0, u_flat.reshape(-1, 2),
                                     self.dt, self.p)
            self._cache_key = key
        return self._cache_Z

    def objective(self, u_flat):
        Z = self.states(u_flat)
        res = Z[:, :2] - self.dist.nearest(Z[:, :2])
        U = u_flat.reshape(-1, 2)
        h_v, h_phi = self._env_terms(Z)
        return (self.w_dev * self.dt * float(np.sum(res * res))
                + self.w_u * self.dt * float(np.sum(U * U))
                + self.ENVELOPE_WEIGHT * self.dt
                * float(np.sum(h_v * h_v) + np.sum(h_phi * h_phi)))

    def gradient(self, u_flat):
        Z = self.states(u_flat)
        U = u_flat.reshape(-1, 2)
        res = Z[:, :2] - self.dist.nearest(Z[:, :2])
        h_v, h_phi = self._env_terms(Z)
        L = self.p.wheelbase
        dt = self.dt
        w_env = self.ENVELOPE_WEIGHT
        g = 2.0 * self.w_u * dt * U.copy()
        lam = np.zeros(4)
        lam[:2] = 2.0 * self.w_dev * dt * res[self.K]
        lam[2] = 2.0 * w_env * dt * h_phi[self.K]
        lam[3] = 2.0 * w_env * dt * h_v[self.K]
        for k in range(self.K - 1, -1, -1):
            phi, v = Z[k, 2], Z[k, 3]
            tan_d = math.tan(U[k, 0])
            # g_u[k] += B_k^T lam
            g[k, 0] += dt * v * (1.0 + tan_d * tan_d) / L * lam[2]
            g[k, 1] += dt * lam[3]
            # lam <- dl/dz_k + A_k^T lam
            new = lam.copy()
            new[2] += dt * v * (-math.sin(phi) * lam[0] + math.cos(phi) * lam[1])
            new[3] += dt * (math.cos(phi) * lam[0] + math.sin(phi) * lam[1]
                            + tan_d / L * lam[2])
            new[:2] += 2.0 * self.w_dev * dt * res[k]
            new[2] += 2.0 * w_env * dt * h_phi[k]
            new[3] += 2.0 * w_env * dt * h_v[k]
            lam = new
        return g.ravel()

    def equalities(self, u_flat):
        return self.states(u_flat)[-1] - self.target4

    def eq_jacobian(self, u_flat):
        Z = self.states(u_flat)
        return _terminal_sensitivity(Z, u_flat.reshape(-1, 2), self.dt, self.p)

    def input_box(self):
        lo = np.tile([-self.p.delta_max, self.p.a_min], self.K)
        hi = np.tile([self.p.delta_max, self.p.a_max], self.K)
        return lo, hi


def _fallback_piece(segment: PathSegment, params: VehicleParams) -> Trajectory:
    """Trapezoidal time law along the geometric path (solver escape hatch).

    States are anchored to the polyline so seams stay exact; inputs carry the
    path steering and the trapezoid's acceleration schedule.
    """
    L = segment.length
    T_trap = trapezoid_duration(L, params, segment.direction)
    K = max(int(math.ceil(T_trap / OUTPUT_DT - 1e-9)), 1)
    s_grid, phi_unw = _segment_geometry(segment)
    speeds = np.array([_trapezoid_speed_at_time(k * OUTPUT_DT, L, params,
                                                segment.direction)
                       for k in range(K + 1)])
    speeds[-1] = 0.0
    # forward-Euler arc positions so speed and displacement agree
    s = np.concatenate([[0.0], np.cumsum(speeds[:-1]) * OUTPUT_DT])
    s = np.minimum(s, L)
    s[-1] = L
    samples = []
    for k in range(K + 1):
        x, y, ph = _pose_at_arc(segment, s_grid, phi_unw, s[k])
        z = VehicleState(x, y, ph, segment.direction * speeds[k])
        a = (speeds[k + 1] - speeds[k]) / OUTPUT_DT if k < K else 0.0
        u = ControlInput(delta=_steering_at_arc(segment, s[k]),
                         a=segment.direction * a)
        samples.append((k * OUTPUT_DT, z, u))
    return Trajectory(dt=OUTPUT_DT, samples=samples, from_fallback=True)


def min_time_ocp(segment: PathSegment, seed: np.ndarray, params: VehicleParams,
                 nlp: Optional[Callable] = None, w_dev: float = 10.0,
                 w_u: float = 0.1, end_pose: Optional[np.ndarray] = None,
                 start_pose: Optional[np.ndarray] = None) -> Trajectory:
    """Minimum-time trajectory for one switch-free segment.

    Two passes: the first transcribes with a free duration on a fixed-count
    grid; the second re-transcribes at the duration rounded up to the output
    step, so transcription nodes and output samples coincide. A final
    projection replays the inputs through the exact step model and closes
    the terminal error in input space, so stored states re-integrate to
    machine precision. ``end_pose``/``start_pose`` override the pinned
    boundary (x, y, phi); the pipeline uses them to land the final segment
    exactly on the scenario goal rather than on the grid-snapped path end.
    Solver failure falls back to the trapezoidal time law along the path.
    """
    solve = nlp if nlp is not None else nlp_mod.solve
    if segment.length <= 0.0:
        return Trajectory(dt=OUTPUT_DT, samples=[])

    s_grid, phi_unw = _segment_geometry(segment)

    def _branch(pose_phi: float, anchor: float) -> float:
        return anchor + math.remainder(pose_phi - anchor, 2.0 * math.pi)

    start = np.array([*segment.poses[0, :2], phi_unw[0], 0.0])
    if start_pose is not None:
        sp_arr = np.asarray(start_pose, dtype=float)
        start = np.array([sp_arr[0], sp_arr[1],
                          _branch(sp_arr[2], phi_unw[0]), 0.0])
    target = np.array(segment.poses[-1], dtype=float)
    target[2] = phi_unw[-1]
    if end_pose is not None:
        target = np.asarray(end_pose, dtype=float)[:3].copy()
        target[2] = _branch(target[2], phi_unw[-1])
    gap = float(np.hypot(*(target[:2] - segment.poses[-1, :2])))
    start_gap = float(np.hypot(*(start[:2] - segment.poses[0, :2])))

    T_trap = trapezoid_duration(segment.length, params, segment.direction)

    def seed_vector(trans: _Transcription, T: float):
        K = trans.K
        x0 = np.zeros(trans.n)
        speeds = np.abs(seed)
        t_of_s = np.zeros(s_grid.size)
        for i in range(1, s_grid.size):
            v_avg = max(0.5 * (speeds[i - 1] + speeds[i]), 0.05)
            t_of_s[i] = t_of_s[i - 1] + segment.arc_step / v_avg
        t_scale = T / max(t_of_s[-1], 1e-9)
        t_of_s = t_of_s * t_scale
        for k in range(K + 1):
            tk = T * k / K
            s = float(np.interp(tk, t_of_s, s_grid))
            x, y, ph = _pose_at_arc(segment, s_grid, phi_unw, s)
            vmag = float(np.interp(s, s_grid, speeds)) / max(t_scale, 1e-9)
            zrow = trans.off_z + 4 * k
            x0[zrow:zrow + 4] = (x, y, ph, segment.direction * vmag)
            if k < K:
                urow = trans.off_u + 2 * k
                x0[urow] = _steering_at_arc(segment, s)
        if trans.free_T:
            x0[0] = T
        return x0

    dev_poly = segment.poses[:, :2].copy()
    frac = s_grid / max(segment.length, 1e-9)
    if end_pose is not None and gap > 1e-9:
        # bend the deviation curve toward the override so cost and pin agree
        dev_poly += np.outer(frac ** 2, target[:2] - segment.poses[-1, :2])
    if start_pose is not None and start_gap > 1e-9:
        dev_poly += np.outer((1.0 - frac) ** 2,
                             start[:2] - segment.poses[0, :2])

    # pass 1: free duration
    K1 = TRANSCRIPTION_POINTS
    tr1 = _Transcription(K1, dev_poly, params, w_dev, w_u, free_T=True)
    lo, hi = tr1.bounds(start, target, segment.direction,
                        T_bounds=(max(segment.length / _speed_cap(params, 1), 0.2),
                                  4.0 * T_trap + 3.0))
    prob1 = NlpProblem(n=tr1.n, objective=tr1.objective, gradient=tr1.gradient,
                       equalities=tr1.equalities, eq_jacobian=tr1.eq_jacobian,
                       lower=lo, upper=hi)
    sol1 = solve(prob1, seed_vector(tr1, max(T_trap, 0.3)),
                 NlpOptions(tol=1e-4, max_outer=30, max_inner=300))
    if sol1.status == "infeasible_point":
        log.warning("free-duration pass failed (%s); using trapezoidal fallback",
                    sol1.status)
        return _fallback_piece(segment, params)
    T1 = float(sol1.x[0])

    # pass 2: duration snapped up to the output grid, inputs as the only
    # unknowns so stored states replay exactly
    pad = OUTPUT_DT * 2 if max(gap, start_gap) > 0.05 else 0.0
    T2 = OUTPUT_DT * math.ceil(T1 / OUTPUT_DT - 1e-9) + pad
    K2 = max(int(round(T2 / OUTPUT_DT)), 2)
    T2 = K2 * OUTPUT_DT
    target4 = np.array([target[0], target[1], target[2], 0.0])
    shoot = _Shooting(K2, start, target4, dev_poly, params, w_dev, w_u,
                      OUTPUT_DT, direction=segment.direction)
    lo2, hi2 = shoot.input_box()
    # seed from the pass-1 inputs resampled in time
    _, Z1, U1 = tr1.unpack(sol1.x)
    t1_grid = np.linspace(0.0, T1, K1 + 1)
    t2_grid = np.linspace(0.0, T2, K2 + 1)
    u0 = np.zeros((K2, 2))
    for j in range(2):
        u0[:, j] = np.interp(np.minimum(t2_grid[:-1], T1), t1_grid[:-1], U1[:, j])
    prob2 = NlpProblem(n=shoot.n, objective=shoot.objective,
                       gradient=shoot.gradient, equalities=shoot.equalities,
                       eq_jacobian=shoot.eq_jacobian, lower=lo2, upper=hi2)
    sol2 = solve(prob2, u0.ravel(), NlpOptions(tol=1e-9, max_outer=40, max_inner=300))
    U2 = sol2.x.reshape(-1, 2)
    Z2 = _rollout(start, U2, OUTPUT_DT, params)
    end_err = float(np.max(np.abs(Z2[-1] - target4)))
    if not np.all(np.isfinite(Z2)) or end_err > 1e-7:
        log.warning("fixed-duration pass missed the pinned endpoint by %.2e; "
                    "using trapezoidal fallback", end_err)
        return _fallback_piece(segment, params)
    bad_state = (np.max(np.abs(Z2[:, 2])) > params.phi_max + 1e-9
                 or np.max(Z2[:, 3]) > params.v_max + 1e-9
                 or np.min(Z2[:, 3]) < params.v_min - 1e-9)
    if bad_state:
        log.warning("fixed-duration pass left the state envelope; "
                    "using trapezoidal fallback")
        return _fallback_piece(segment, params)
    Z2[-1] = target4  # snap away the terminal residual dust

    samples = []
    for k in range(K2 + 1):
        z = VehicleState(*Z2[k])
        u = ControlInput(*U2[k]) if k < K2 else ControlInput(0.0, 0.0)
        samples.append((k * OUTPUT_DT, z, u))
    return Trajectory(dt=OUTPUT_DT, samples=samples)


def assemble_reference(pieces: list) -> Trajectory:
    """Concatenate per-segment trajectories into one reference.

    Seams must coincide within 1e-6 m in position; each later piece's first
    sample is dropped in favor of the seam sample, and the seam indices are
    recorded as direction switches.
    """
    nonempty = [(i, p) for i, p in enumerate(pieces) if len(p) > 0]
    if not nonempty:
        raise ValueError("no nonempty trajectory pieces to assemble")
    samples = []
    switch_indices = []
    fallback_segments = []
    t_base = 0.0
    for j, (orig_idx, piece) in enumerate(nonempty):
        if piece.dt != OUTPUT_DT:
            raise ValueError("all pieces must share the output sampling step")
        if piece.from_fallback:
            fallback_segments.append(orig_idx)
        if j == 0:
            samples.extend(piece.samples)
        else:
            prev_z = samples[-1][1]
            head_z = piece.samples[0][1]
            seam_gap = math.hypot(prev_z.x - head_z.x, prev_z.y - head_z.y)
            if seam_gap > 1e-6:
                raise ValueError(
                    f"pieces {nonempty[j-1][0]} and {orig_idx} are discontinuous: "
                    f"seam gap {seam_gap:.3e} m")
            switch_indices.append(len(samples) - 1)
            for (t, z, u) in piece.samples[1:]:
                samples.append((t_base + t, z, u))
        t_base = samples[-1][0]
    return Trajectory(dt=OUTPUT_DT, samples=samples, switch_indices=switch_indices,
                      fallback_segments=tuple(fallback_segments))


def build_reference(path: PlannedPath, params: VehicleParams,
                    goal_pose: Optional[np.ndarray] = None,
                    nlp: Optional[Callable] = None) -> Trajectory:
    """Full high-level stage: split, solve each segment, assemble.

    ``goal_pose`` pins the final segment's terminal state to the exact goal
    instead of the grid-snapped path end. A short final segment is usually a
    single full-lock arc with no steering authority to spare, so it is
    replaced by a straight dock leg along the goal heading and the (long)
    penultimate segment absorbs the whole correction.
    """
    segments = split_segments(path)
    overrides = [(None, None)] * len(segments)  # (start_pose, end_pose)
    rerouted = False
    if goal_pose is not None:
        goal = np.asarray(goal_pose, dtype=float)[:3]
        last = segments[-1]
        tail = last.poses[-1]
        dpos = goal[:2] - tail[:2]
        dphi = math.remainder(goal[2] - tail[2], 2.0 * math.pi)
        phi_authority = 0.8 * last.length * math.tan(params.delta_max) / params.wheelbase
        cramped = (float(np.hypot(*dpos)) > 0.3 * max(last.length, 1e-9)
                   or abs(dphi) > phi_authority)
        if cramped and len(segments) >= 2 and segments[-2].length >= 3.0:
            rerouted = True
            retreat = max(last.length, 2 * last.arc_step, 0.5)
            heading = np.array([math.cos(goal[2]), math.sin(goal[2])])
            # a reverse dock starts ahead of the goal, a forward one behind
            seam_xy = goal[:2] - last.direction * retreat * heading
            seam_target = np.array([seam_xy[0], seam_xy[1], goal[2]])
            n = max(last.n_poses, 3)
            line = np.linspace(seam_xy, goal[:2], n)
            dock = PathSegment(
                poses=np.column_stack([line, np.full(n, goal[2])]),
                steering=np.zeros(n - 1), direction=last.direction,
                arc_step=retreat / (n - 1))
            segments = segments[:-1] + [dock]
            overrides[-2] = (None, seam_target)
        else:
            overrides[-1] = (None, goal)

    def run(segs, ovr):
        out = []
        for seg, (s_ovr, e_ovr) in zip(segs, ovr):
            seed = seed_profile(seg, params)
            out.append(min_time_ocp(seg, seed, params, nlp=nlp,
                                    end_pose=e_ovr, start_pose=s_ovr))
        return out

    pieces = run(segments, overrides)
    if rerouted and any(p.from_fallback for p in pieces[-2:]):
        # a fallback ignores overrides, so rebuild the tail unrerouted
        log.warning("goal pinning degraded: a final-segment solve fell back")
        pieces = run(split_segments(path),
                     [(None, None)] * len(segments))
    return assemble_reference(pieces)
