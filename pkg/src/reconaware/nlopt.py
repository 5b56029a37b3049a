"""Constrained local optimization over joint-space trajectories.

Augmented Lagrangian outer loop with bound-constrained L-BFGS-B inner solves.
The first waypoint is held fixed at the problem's start state; the remaining
waypoints are the decision variables.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)


@dataclass
class TrajectoryProblem:
    """``min objective(traj)  s.t.  every constraint(traj) <= 0,  lower <= traj <= upper``.

    Trajectories are ``(horizon, n_joints)`` arrays. A constraint may return a
    scalar or an array. Optional ``objective_grad`` returns an array shaped
    like the trajectory; optional entries of ``constraint_jacs`` return
    ``(m, horizon, n_joints)``. Missing derivatives are taken by central
    differences.
    """

    horizon: int
    objective: Callable[[np.ndarray], float]
    bounds: tuple
    start_state: np.ndarray
    constraints: Sequence[Callable] = ()
    objective_grad: Optional[Callable] = None
    constraint_jacs: Optional[Sequence[Optional[Callable]]] = None

    def __post_init__(self):
        self.start_state = np.asarray(self.start_state, dtype=float)
        lo, hi = self.bounds
        self.bounds = (np.broadcast_to(np.asarray(lo, float), self.start_state.shape).copy(),
                       np.broadcast_to(np.asarray(hi, float), self.start_state.shape).copy())
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")


@dataclass
class SolveOptions:
    feas_tol: float = 1e-4
    max_outer: int = 50
    max_inner: int = 100
    fd_step: float = 1e-6
    rho_init: float = 10.0
    rho_growth: float = 10.0
    rho_max: float = 1e8
    merit_weight: float = 1e6
    ftol: float = 1e-12
    gtol: float = 1e-9


@dataclass
class SolveReport:
    trajectory: np.ndarray
    objective_value: float
    max_violation: float
    iterations: int
    converged: bool
    merit_history: list = field(default_factory=list)
    message: str = ""


def _fd_grad(fun, x, h):
    g = np.empty_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2 * h)
    return g


def _fd_jac(fun, x, h):
    cols = []
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        cols.append((np.atleast_1d(fun(xp)) - np.atleast_1d(fun(xm))) / (2 * h))
    return np.stack(cols, axis=1)


class _Flat:
    """Maps the free waypoints to a flat vector and back."""

    def __init__(self, problem: TrajectoryProblem):
        self.p = problem
        self.shape = (problem.horizon - 1, problem.start_state.size)

    def traj(self, x):
        return np.vstack([self.p.start_state[None, :], x.reshape(self.shape)])

    def flat(self, traj):
        return np.asarray(traj, dtype=float)[1:].ravel().copy()

    def f(self, x):
        return float(self.p.objective(self.traj(x)))

    def grad(self, x, h):
        if self.p.objective_grad is not None:
            return np.asarray(self.p.objective_grad(self.traj(x)), dtype=float)[1:].ravel()
        return _fd_grad(self.f, x, h)

    def c(self, x):
        t = self.traj(x)
        vals = [np.atleast_1d(np.asarray(g(t), dtype=float)).ravel() for g in self.p.constraints]
        return np.concatenate(vals) if vals else np.zeros(0)

    def jac(self, x, h):
        t = self.traj(x)
        blocks = []
        jacs = self.p.constraint_jacs or [None] * len(self.p.constraints)
        for g, jg in zip(self.p.constraints, jacs):
            if jg is not None:
                J = np.asarray(jg(t), dtype=float)
                blocks.append(J.reshape(J.shape[0], -1, t.shape[1])[:, 1:].reshape(J.shape[0], -1))
            else:
                blocks.append(_fd_jac(lambda z, g=g: np.atleast_1d(g(self.traj(z))).ravel(), x, h))
        return np.vstack(blocks) if blocks else np.zeros((0, x.size))


def max_violation(problem: TrajectoryProblem, traj) -> float:
    fl = _Flat(problem)
    c = fl.c(fl.flat(traj))
    lo, hi = problem.bounds
    t = np.asarray(traj)[1:]
    bound_v = max(float(np.max(lo - t, initial=0.0)), float(np.max(t - hi, initial=0.0)))
    return max(float(np.max(c, initial=0.0)), bound_v)


def solve(problem: TrajectoryProblem, init, opts: SolveOptions | None = None) -> SolveReport:
    """Locally minimize the problem objective starting from ``init``.

    The returned trajectory is the best iterate under the exact-penalty merit
    ``objective + merit_weight * max_violation``; ``converged`` is set when its
    violation is within ``feas_tol``. A report is returned even when the
    constraints could not be satisfied.
    """
    opts = opts or SolveOptions()
    init = np.asarray(init, dtype=float)
    if init.shape != (problem.horizon, problem.start_state.size):
        raise ValueError(f"init has shape {init.shape}, expected {(problem.horizon, problem.start_state.size)}")
    fl = _Flat(problem)
    lo = np.tile(problem.bounds[0], problem.horizon - 1)
    hi = np.tile(problem.bounds[1], problem.horizon - 1)
    x = np.clip(fl.flat(init), lo, hi)
    h = opts.fd_step

    def merit(z, cz=None):
        cz = fl.c(z) if cz is None else cz
        v = float(np.max(cz, initial=0.0))
        return fl.f(z) + opts.merit_weight * v, v

    x0_raw = fl.flat(init)
    best_x = x0_raw
    best_merit, best_v = merit(x0_raw)
    if np.any(x0_raw < lo) or np.any(x0_raw > hi):
        best_merit, best_v = np.inf, np.inf
    history = [best_merit]

    m = fl.c(x).size
    lam = np.zeros(m)
    rho = opts.rho_init
    prev_v = np.inf
    prev_f = None
    it = 0
    message = "iteration cap"
    for it in range(1, opts.max_outer + 1):
        def aug(z, lam=lam, rho=rho):
            f = fl.f(z)
            g = fl.grad(z, h)
            if m:
                cz = fl.c(z)
                shifted = np.maximum(0.0, lam + rho * cz)
                f += (shifted @ shifted - lam @ lam) / (2 * rho)
                active = shifted > 0
                if np.any(active):
                    J = fl.jac(z, h)
                    g = g + shifted[active] @ J[active]
            return f, g

        res = minimize(aug, x, jac=True, method="L-BFGS-B", bounds=list(zip(lo, hi)),
                       options={"maxiter": opts.max_inner, "ftol": opts.ftol, "gtol": opts.gtol})
        x = np.clip(res.x, lo, hi)
        cx = fl.c(x)
        mx, v = merit(x, cx)
        if mx < best_merit:
            best_x, best_merit, best_v = x.copy(), mx, v
        history.append(best_merit)
        fx = fl.f(x)
        if m:
            lam = np.maximum(0.0, lam + rho * cx)
        if v <= opts.feas_tol:
            if m == 0 or (prev_f is not None and abs(fx - prev_f) <= 1e-10 * max(1.0, abs(fx))):
                message = "converged"
                break
            if v <= 1e-3 * opts.feas_tol and res.success and prev_f is not None and abs(fx - prev_f) <= 1e-8 * max(1.0, abs(fx)):
                message = "converged"
                break
        elif v > 0.25 * prev_v:
            rho = min(rho * opts.rho_growth, opts.rho_max)
        if v > opts.feas_tol and rho >= opts.rho_max and abs(v - prev_v) <= 1e-12:
            message = "stalled"
            break
        prev_v = v
        prev_f = fx

    traj = fl.traj(best_x)
    converged = best_v <= opts.feas_tol
    if not converged:
        message = "infeasible: " + message
    return SolveReport(traj, fl.f(best_x), float(max(best_v, 0.0)), it, converged, history, message)
