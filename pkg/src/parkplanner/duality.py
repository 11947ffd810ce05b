"""Dual formulation of polytope separation for smooth collision constraints.

Keeping the vehicle footprint at least ``d_min`` away from a convex obstacle
is a nonsmooth condition on the pose. The convex-duality rewrite turns it
into smooth algebraic constraints in auxiliary multiplier variables (one per
obstacle face and one per body face): whenever the multipliers satisfy the
parallelism and norm conditions, the separation expression is a certified
lower bound on the true distance, so feasibility of the smooth system
implies clearance even when an optimizer stops at loose tolerance.

The certificate direction needs no external solver; the reverse direction
(finding maximizing multipliers to warm-start an optimizer) is a small
second-order cone program solved through cvxpy, with compiled-problem
caching keyed on the obstacle face count so repeated calls only pay for a
parameter update and a resolve.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cvxpy as cp
import numpy as np

from .geometry import ConvexPolytope, FootprintSpec, Pose2D, rotation_matrix


@dataclass(frozen=True)
class DualPair:
    """Multipliers for one body-obstacle pair: lam per obstacle face, mu per body face."""

    lam: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lam", np.asarray(self.lam, dtype=float))
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        if self.lam.ndim != 1 or self.mu.ndim != 1:
            raise ValueError("multipliers must be one-dimensional")


def _rotation_derivative(phi: float) -> np.ndarray:
    s, c = np.sin(phi), np.cos(phi)
    return np.array([[-s, -c], [c, -s]])


def _pose_of(z) -> tuple[np.ndarray, float]:
    """Planar position and heading from a state-like object or array."""
    if hasattr(z, "phi"):
        return np.array([z.x, z.y], dtype=float), float(z.phi)
    arr = np.asarray(z, dtype=float)
    return arr[:2].copy(), float(arr[2])


@dataclass
class AvoidanceConstraintSet:
    """Smooth residuals (and derivatives) for one footprint-obstacle pair.

    For an obstacle with faces {A y <= b}, body template {G y <= g}, pose
    z = (x, y, phi, ...) and multipliers (lam, mu):

        separation(z, lam, mu) = (A p - b) @ lam - g @ mu - d_min
        parallelism(z, lam, mu) = G.T @ mu + R(phi).T @ A.T @ lam   (2-vector)
        norm_defect(lam)        = ||A.T @ lam||^2 - 1

    with p = (x, y). Feasibility (separation > 0, parallelism = 0,
    norm_defect <= 0, lam >= 0, mu >= 0) certifies that the footprint at z
    keeps distance greater than d_min from the obstacle. The squared norm
    keeps that constraint differentiable at lam = 0.
    """

    footprint: FootprintSpec
    obstacle: ConvexPolytope
    d_min: float
    G: np.ndarray = field(init=False)
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.d_min < 0:
            raise ValueError("d_min must be nonnegative")
        if not isinstance(self.obstacle, ConvexPolytope):
            raise TypeError("obstacle must be a ConvexPolytope")
        base = self.footprint.base_polytope()
        self.G = base.A
        self.g = base.b

    @property
    def h(self) -> int:
        """Number of obstacle faces (the lam dimension)."""
        return self.obstacle.h

    def _check_dims(self, lam, mu):
        lam = np.asarray(lam, dtype=float)
        mu = np.asarray(mu, dtype=float)
        if lam.shape != (self.h,):
            raise ValueError(f"lam must have shape ({self.h},), got {lam.shape}")
        if mu.shape != (4,):
            raise ValueError(f"mu must have shape (4,), got {mu.shape}")
        return lam, mu

    # ---- separation residual -------------------------------------------------

    def sep_value(self, z, lam, mu) -> float:
        lam, mu = self._check_dims(lam, mu)
        p, _ = _pose_of(z)
        A, b = self.obstacle.A, self.obstacle.b
        return float((A @ p - b) @ lam - self.g @ mu - self.d_min)

    def sep_grad_z(self, z, lam, mu) -> np.ndarray:
        """Gradient in (x, y, phi, v); only the position entries are nonzero."""
        lam, _ = self._check_dims(lam, mu)
        out = np.zeros(4)
        out[:2] = self.obstacle.A.T @ lam
        return out

    def sep_grad_lam(self, z) -> np.ndarray:
        p, _ = _pose_of(z)
        return self.obstacle.A @ p - self.obstacle.b

    def sep_grad_mu(self) -> np.ndarray:
        return -self.g

    # ---- parallelism residual (2-vector equality) -----------------------------

    def par_value(self, z, lam, mu) -> np.ndarray:
        lam, mu = self._check_dims(lam, mu)
        _, phi = _pose_of(z)
        return self.G.T @ mu + rotation_matrix(phi).T @ (self.obstacle.A.T @ lam)

    def par_grad_z(self, z, lam, mu) -> np.ndarray:
        """(2, 4) Jacobian; only the heading column is nonzero."""
        lam, _ = self._check_dims(lam, mu)
        _, phi = _pose_of(z)
        out = np.zeros((2, 4))
        out[:, 2] = _rotation_derivative(phi).T @ (self.obstacle.A.T @ lam)
        return out

    def par_grad_lam(self, z) -> np.ndarray:
        _, phi = _pose_of(z)
        return rotation_matrix(phi).T @ self.obstacle.A.T

    def par_grad_mu(self) -> np.ndarray:
        return self.G.T.copy()

    # ---- norm residual ---------------------------------------------------------

    def norm_value(self, lam) -> float:
        w = self.obstacle.A.T @ np.asarray(lam, dtype=float)
        return float(w @ w) - 1.0

    def norm_grad_lam(self, lam) -> np.ndarray:
        A = self.obstacle.A
        return 2.0 * (A @ (A.T @ np.asarray(lam, dtype=float)))

    # ---- diagnostics -------------------------------------------------------------

    def residuals(self, z, pair: DualPair) -> dict:
        return {
            "separation": self.sep_value(z, pair.lam, pair.mu),
            "parallelism": float(np.max(np.abs(self.par_value(z, pair.lam, pair.mu)))),
            "norm_defect": self.norm_value(pair.lam),
            "negativity": max(float(-np.min(pair.lam, initial=0.0)),
                              float(-np.min(pair.mu, initial=0.0))),
        }

    def certifies(self, z, pair: DualPair, tol: float = 1e-6) -> bool:
        """True when the multipliers prove clearance greater than d_min at z."""
        r = self.residuals(z, pair)
        return (r["separation"] > -tol and r["parallelism"] <= tol
                and r["norm_defect"] <= tol and r["negativity"] <= tol)


def build_avoidance_constraints(footprint: FootprintSpec, obstacle: ConvexPolytope,
                                d_min: float) -> AvoidanceConstraintSet:
    """Assemble the residual set for one footprint-obstacle pair."""
    return AvoidanceConstraintSet(footprint=footprint, obstacle=obstacle,
                                  d_min=float(d_min))


class _SeparationSocp:
    """Compiled maximum-separation cone program, reusable across poses.

    The program depends on the obstacle only through its face count, so one
    compilation per count serves every solve; per-call data enters through
    cvxpy parameters.
    """

    def __init__(self, h: int):
        self.lam = cp.Variable(h, nonneg=True)
        self.mu = cp.Variable(4, nonneg=True)
        self.c = cp.Parameter(h)            # A @ p - b
        self.At = cp.Parameter((2, h))      # A.T
        self.RtAt = cp.Parameter((2, h))    # R(phi).T @ A.T
        self.Gt = cp.Parameter((2, 4))      # G.T
        self.gb = cp.Parameter(4)           # g
        objective = cp.Maximize(self.c @ self.lam - self.gb @ self.mu)
        constraints = [
            self.Gt @ self.mu + self.RtAt @ self.lam == 0,
            cp.norm(self.At @ self.lam) <= 1,
        ]
        self.problem = cp.Problem(objective, constraints)

    def solve(self, A, b, G, g, p, phi):
        R = rotation_matrix(phi)
        self.c.value = A @ p - b
        self.At.value = A.T
        self.RtAt.value = R.T @ A.T
        self.Gt.value = G.T
        self.gb.value = g
        try:
            self.problem.solve(solver=cp.CLARABEL)
        except cp.error.SolverError:
            self.problem.solve(solver=cp.SCS)
        if self.problem.status not in ("optimal", "optimal_inaccurate"):
            raise RuntimeError(f"separation program ended with status {self.problem.status}")
        lam = np.maximum(np.asarray(self.lam.value, dtype=float), 0.0)
        mu = np.maximum(np.asarray(self.mu.value, dtype=float), 0.0)
        return float(self.problem.value), lam, mu


_socp_cache: dict = {}


def _solve_separation(footprint: FootprintSpec, obstacle: ConvexPolytope, z):
    base = footprint.base_polytope()
    p, phi = _pose_of(z)
    prog = _socp_cache.get(obstacle.h)
    if prog is None:
        prog = _SeparationSocp(obstacle.h)
        _socp_cache[obstacle.h] = prog
    return prog.solve(obstacle.A, obstacle.b, base.A, base.b, p, phi)


def max_dual(footprint: FootprintSpec, obstacle: ConvexPolytope, z) -> float:
    """Largest certified separation bound for the footprint at state z.

    Equals the Euclidean distance between the footprint polytope and the
    obstacle when they are disjoint, and zero when they touch or overlap.
    """
    value, _, _ = _solve_separation(footprint, obstacle, z)
    return value


def init_duals(footprint: FootprintSpec, obstacle: ConvexPolytope, z,
               overlap_tol: float = 1e-7) -> DualPair:
    """Maximizing multipliers at state z, for warm-starting an OCP.

    Raises ValueError when the footprint overlaps (or touches) the obstacle:
    the maximizing multipliers degenerate to zero there and certify nothing.
    """
    value, lam, mu = _solve_separation(footprint, obstacle, z)
    if value <= overlap_tol:
        p, phi = _pose_of(z)
        raise ValueError(
            f"footprint at ({p[0]:.3f}, {p[1]:.3f}, {phi:.3f}) overlaps the "
            f"obstacle; separation multipliers are degenerate")
    return DualPair(lam=lam, mu=mu)
