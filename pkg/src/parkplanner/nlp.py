"""Solver-agnostic nonlinear program contract and a built-in solver.

The built-in solver is a classic augmented Lagrangian: equality and
inequality constraints are folded into a smooth merit function (the
inequality term is the slack-eliminated Rockafellar form), each outer
iteration minimizes it over the variable box with L-BFGS-B, and the
multipliers and penalty weight are updated from the residuals. It is
deliberately dense and small-scale; the problems it serves here have at
most a few hundred variables.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize


class PoisonedEvaluationError(RuntimeError):
    """A callback returned a non-finite value; carries the variable snapshot."""

    def __init__(self, message: str, x: np.ndarray):
        super().__init__(message)
        self.x = np.array(x)


@dataclass
class NlpProblem:
    """min f(x) s.t. c_eq(x) = 0, c_ineq(x) <= 0, lower <= x <= upper.

    Derivative callbacks are optional; missing ones fall back to dense
    central finite differences.
    """

    n: int
    objective: Callable[[np.ndarray], float]
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None
    equalities: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eq_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    inequalities: Optional[Callable[[np.ndarray], np.ndarray]] = None
    ineq_jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None

    def box(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.full(self.n, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.n, np.inf) if self.upper is None else np.asarray(self.upper, float)
        return lo, hi


@dataclass
class NlpOptions:
    tol: float = 1e-6
    max_outer: int = 50
    max_inner: int = 200
    rho0: float = 10.0
    rho_growth: float = 10.0
    rho_cap: float = 1e12
    feas_decrease: float = 0.25
    fd_step: float = 1e-6
    merit_weight: float = 1e4
    eq_multipliers0: Optional[np.ndarray] = None
    ineq_multipliers0: Optional[np.ndarray] = None
    log_path: Optional[str] = None


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    kkt: dict
    status: str  # optimal | max_iter | infeasible_point
    iterations: int
    outer_iterations: int
    wall_time: float
    eq_multipliers: np.ndarray
    ineq_multipliers: np.ndarray
    merit_log: list = field(default_factory=list)


def _fd_gradient(f, x, step):
    g = np.empty_like(x)
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def _fd_jacobian(c, x, step, m):
    J = np.empty((m, x.size))
    for i in range(x.size):
        h = step * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        J[:, i] = (np.asarray(c(xp)) - np.asarray(c(xm))) / (2.0 * h)
    return J


class _Callbacks:
    """Wraps problem callbacks with finiteness checks and FD fallbacks."""

    def __init__(self, problem: NlpProblem, fd_step: float):
        self.p = problem
        self.fd = fd_step
        z = np.zeros(0)
        self.m_eq = 0
        self.m_ineq = 0
        self.eval_count = 0
        self._z = z

    def probe_sizes(self, x):
        if self.p.equalities is not None:
            self.m_eq = np.asarray(self.p.equalities(x)).size
        if self.p.inequalities is not None:
            self.m_ineq = np.asarray(self.p.inequalities(x)).size

    def _guard(self, val, x, what):
        arr = np.asarray(val, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise PoisonedEvaluationError(f"{what} returned a non-finite value", x)
        return arr

    def f(self, x):
        self.eval_count += 1
        return float(self._guard(self.p.objective(x), x, "objective"))

    def g(self, x):
        if self.p.gradient is not None:
            return self._guard(self.p.gradient(x), x, "gradient")
        return self._guard(_fd_gradient(self.p.objective, x, self.fd), x, "fd gradient")

    def c_eq(self, x):
        if self.p.equalities is None:
            return self._z
        return self._guard(self.p.equalities(x), x, "equalities")

    def c_ineq(self, x):
        if self.p.inequalities is None:
            return self._z
        return self._guard(self.p.inequalities(x), x, "inequalities")

    def J_eq(self, x):
        if self.p.equalities is None:
            return np.zeros((0, self.p.n))
        if self.p.eq_jacobian is not None:
            return self._guard(self.p.eq_jacobian(x), x, "eq jacobian")
        return _fd_jacobian(self.p.equalities, x, self.fd, self.m_eq)

    def J_ineq(self, x):
        if self.p.inequalities is None:
            return np.zeros((0, self.p.n))
        if self.p.ineq_jacobian is not None:
            return self._guard(self.p.ineq_jacobian(x), x, "ineq jacobian")
        return _fd_jacobian(self.p.inequalities, x, self.fd, self.m_ineq)


def _violation(ce, ci):
    v = 0.0
    if ce.size:
        v = max(v, float(np.max(np.abs(ce))))
    if ci.size:
        v = max(v, float(np.max(np.maximum(ci, 0.0))))
    return v


def solve(problem: NlpProblem, x0, opts: Optional[NlpOptions] = None) -> NlpSolution:
    """Augmented-Lagrangian solve over the variable box.

    Deterministic for identical inputs. Returns the best iterate seen,
    ranked by a fixed feasibility-weighted merit, with KKT residuals of
    the true Lagrangian at the returned point.
    """
    opts = opts or NlpOptions()
    t_start = time.perf_counter()
    cb = _Callbacks(problem, opts.fd_step)
    lo, hi = problem.box()
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    cb.probe_sizes(x)

    lam = (np.zeros(cb.m_eq) if opts.eq_multipliers0 is None
           else np.asarray(opts.eq_multipliers0, float).copy())
    mu = (np.zeros(cb.m_ineq) if opts.ineq_multipliers0 is None
          else np.maximum(np.asarray(opts.ineq_multipliers0, float), 0.0).copy())
    if lam.size != cb.m_eq or mu.size != cb.m_ineq:
        raise ValueError("warm-start multiplier sizes do not match the problem")
    rho = opts.rho0

    bounds = list(zip(np.where(np.isinf(lo), None, lo), np.where(np.isinf(hi), None, hi)))

    def merit(fx, ce, ci):
        pen = 0.0
        if ce.size:
            pen += float(np.sum(np.abs(ce)))
        if ci.size:
            pen += float(np.sum(np.maximum(ci, 0.0)))
        return fx + opts.merit_weight * pen

    def augmented(xv):
        fx = cb.f(xv)
        ce = cb.c_eq(xv)
        ci = cb.c_ineq(xv)
        gx = cb.g(xv)
        val = fx
        grad = gx.copy()
        if ce.size:
            val += lam @ ce + 0.5 * rho * float(ce @ ce)
            grad += cb.J_eq(xv).T @ (lam + rho * ce)
        if ci.size:
            w = mu + rho * ci
            act = w > 0.0
            # Rockafellar form: quadratic where mu + rho*c > 0, flat elsewhere
            val += float(np.sum(np.where(act, mu * ci + 0.5 * rho * ci * ci,
                                         -0.5 * mu * mu / rho)))
            if np.any(act):
                grad += cb.J_ineq(xv).T @ np.where(act, w, 0.0)
        return val, grad

    total_inner = 0
    best = None  # (merit, x, fx, ce, ci)
    merit_log = []
    kkt = {"stationarity": np.inf, "primal": np.inf, "complementarity": np.inf}
    status = "max_iter"
    viol_prev = np.inf
    outer_done = 0

    for outer in range(opts.max_outer):
        res = minimize(augmented, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": opts.max_inner,
                                "ftol": 1e-14,
                                "gtol": max(opts.tol / 10.0, 1e-10),
                                "maxls": 40})
        x = np.clip(res.x, lo, hi)
        total_inner += int(res.nit)
        outer_done = outer + 1

        fx = cb.f(x)
        ce = cb.c_eq(x)
        ci = cb.c_ineq(x)
        viol = _violation(ce, ci)

        # first-order multiplier updates
        if ce.size:
            lam = lam + rho * ce
        if ci.size:
            mu = np.maximum(0.0, mu + rho * ci)

        m_now = merit(fx, ce, ci)
        if best is None or m_now < best[0]:
            best = (m_now, x.copy(), fx, lam.copy(), mu.copy())
        merit_log.append(best[0])

        # KKT residuals of the true Lagrangian at x with updated multipliers
        gL = cb.g(x)
        if ce.size:
            gL = gL + cb.J_eq(x).T @ lam
        if ci.size:
            gL = gL + cb.J_ineq(x).T @ mu
        proj = x - np.clip(x - gL, lo, hi)
        stat = float(np.max(np.abs(proj))) if proj.size else 0.0
        comp = 0.0
        if ci.size:
            comp = float(np.max(np.abs(np.minimum(mu, np.maximum(-ci, 0.0)))))
        kkt = {"stationarity": stat, "primal": viol, "complementarity": comp}

        if stat <= opts.tol and viol <= opts.tol and comp <= opts.tol:
            status = "optimal"
            best = (merit(fx, ce, ci), x.copy(), fx, lam.copy(), mu.copy())
            break

        if viol > opts.feas_decrease * viol_prev and viol > opts.tol:
            rho = min(rho * opts.rho_growth, opts.rho_cap)
        viol_prev = viol if not np.isfinite(viol_prev) else min(viol_prev, viol)

    if status != "optimal":
        status = "max_iter" if kkt["primal"] <= np.sqrt(opts.tol) else "infeasible_point"

    _, bx, bf, blam, bmu = best
    sol = NlpSolution(
        x=bx, objective=bf, kkt=kkt, status=status,
        iterations=total_inner, outer_iterations=outer_done,
        wall_time=time.perf_counter() - t_start,
        eq_multipliers=blam, ineq_multipliers=bmu,
        merit_log=merit_log)

    if opts.log_path:
        with open(opts.log_path, "w") as fh:
            fh.write("iter,merit,kkt_residual\n")
            for i, m in enumerate(merit_log):
                fh.write(f"{i},{m!r},{max(kkt.values())!r}\n")
    return sol


def check_gradients(problem: NlpProblem, x) -> float:
    """Max relative error of provided derivatives vs central differences.

    Relative error is |analytic - fd| / (1 + |fd|), taken over the gradient
    and both constraint Jacobians componentwise.
    """
    x = np.asarray(x, dtype=float)
    worst = 0.0

    def rel(a, f):
        return np.max(np.abs(a - f) / (1.0 + np.abs(f))) if a.size else 0.0

    step = 1e-6
    if problem.gradient is not None:
        fd = _fd_gradient(problem.objective, x, step)
        worst = max(worst, float(rel(np.asarray(problem.gradient(x)), fd)))
    if problem.equalities is not None and problem.eq_jacobian is not None:
        m = np.asarray(problem.equalities(x)).size
        fd = _fd_jacobian(problem.equalities, x, step, m)
        worst = max(worst, float(rel(np.asarray(problem.eq_jacobian(x)), fd)))
    if problem.inequalities is not None and problem.ineq_jacobian is not None:
        m = np.asarray(problem.inequalities(x)).size
        fd = _fd_jacobian(problem.inequalities, x, step, m)
        worst = max(worst, float(rel(np.asarray(problem.ineq_jacobian(x)), fd)))
    return worst
