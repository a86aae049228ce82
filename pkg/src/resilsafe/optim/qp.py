"""Convex quadratic programming by a primal active-set method.

Solves

    min  1/2 z' P z + q' z
    s.t. G z >= h          (inequalities)
         A z  = b          (optional equalities)

with P symmetric positive definite (the runtime safety filter always uses
P = 2I for a min-norm input, so strict convexity is the relevant regime).
Each iteration solves the equality-constrained subproblem on the working set
through its KKT system; the terminal iterate satisfies stationarity,
feasibility, and complementarity to 1e-8.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

KKT_TOL = 1e-8


class QpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class QpProblem:
    P: np.ndarray
    q: np.ndarray
    G: np.ndarray
    h: np.ndarray
    A: np.ndarray | None = None
    b: np.ndarray | None = None

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        n = P.shape[0]
        q = np.asarray(self.q, dtype=float).ravel()
        G = np.asarray(self.G, dtype=float).reshape(-1, n) if np.size(self.G) else np.zeros((0, n))
        h = np.asarray(self.h, dtype=float).ravel()
        A = (np.asarray(self.A, dtype=float).reshape(-1, n)
             if self.A is not None and np.size(self.A) else np.zeros((0, n)))
        b = np.asarray(self.b, dtype=float).ravel() if self.b is not None else np.zeros(0)
        if P.shape != (n, n) or q.shape != (n,):
            raise ValueError("inconsistent cost dimensions")
        if G.shape[0] != h.shape[0] or A.shape[0] != b.shape[0]:
            raise ValueError("inconsistent constraint dimensions")
        for name, val in (("P", P), ("q", q), ("G", G), ("h", h), ("A", A), ("b", b)):
            object.__setattr__(self, name, val)

    @property
    def n(self):
        return self.P.shape[0]


@dataclass(frozen=True)
class QpSolution:
    status: QpStatus
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    objective: float = np.nan
    active_set: tuple[int, ...] = ()
    kkt_residual: float = np.inf
    iterations: int = 0


def _feasible_start(p: QpProblem):
    """Return a feasible point or None (via one auxiliary LP)."""
    n = p.n
    # cheap candidate: least squares on equalities, then test inequalities
    if p.A.shape[0]:
        z0, *_ = np.linalg.lstsq(p.A, p.b, rcond=None)
    else:
        z0 = np.zeros(n)
    if (p.G @ z0 >= p.h - 1e-10).all() and (not p.A.shape[0] or np.allclose(p.A @ z0, p.b, atol=1e-10)):
        return z0
    # phase 1: min s  s.t.  G z + s >= h, s >= 0, A z = b
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([-p.G, -np.ones((p.G.shape[0], 1))]) if p.G.shape[0] else np.zeros((0, n + 1))
    b_ub = -p.h
    A_eq = np.hstack([p.A, np.zeros((p.A.shape[0], 1))]) if p.A.shape[0] else None
    res = linprog(c, A_ub=A_ub if A_ub.size else None, b_ub=b_ub if A_ub.size else None,
                  A_eq=A_eq, b_eq=p.b if A_eq is not None else None,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0 or res.x is None or res.x[-1] > 1e-7:
        return None
    return res.x[:n]


def solve_qp(p: QpProblem, max_iter: int = 200) -> QpSolution:
    n = p.n
    sym_err = np.max(np.abs(p.P - p.P.T)) if n else 0.0
    if sym_err > 1e-10:
        raise ValueError("quadratic cost matrix must be symmetric")
    eigs = np.linalg.eigvalsh(p.P)
    if eigs[0] < -1e-10:
        raise ValueError("quadratic cost matrix must be positive semidefinite")
    P = p.P + max(0.0, 1e-12 - eigs[0]) * np.eye(n)  # nudge semidefinite costs

    z = _feasible_start(p)
    if z is None:
        return QpSolution(QpStatus.INFEASIBLE)

    working = [i for i in range(p.G.shape[0]) if p.G[i] @ z - p.h[i] <= 1e-10]
    working = _independent_subset(p.G, working)

    lam = np.zeros(0)
    for it in range(1, max_iter + 1):
        Gw = p.G[working] if working else np.zeros((0, n))
        z_star, nu, lam = _eq_qp(P, p.q, p.A, p.b, Gw, p.h[working] if working else np.zeros(0))
        step = z_star - z
        if np.linalg.norm(step, np.inf) <= 1e-11:
            if lam.size == 0 or lam.min() >= -KKT_TOL:
                return _finish(p, z, working, nu, lam, it)
            drop = working[int(np.argmin(lam))]
            working.remove(drop)
            continue
        # largest step along z -> z_star that stays feasible
        alpha, blocker = 1.0, None
        for i in range(p.G.shape[0]):
            if i in working:
                continue
            denom = p.G[i] @ step
            if denom < -1e-12:
                a = (p.h[i] - p.G[i] @ z) / denom
                if a < alpha - 1e-14:
                    alpha, blocker = a, i
        z = z + max(alpha, 0.0) * step
        if blocker is not None:
            candidate = working + [blocker]
            working = _independent_subset(p.G, candidate)
    return QpSolution(QpStatus.MAX_ITER, z, iterations=max_iter)


def _independent_subset(G, idx):
    """Keep rows (in order) that are linearly independent."""
    out = []
    basis = []
    for i in idx:
        v = G[i].astype(float).copy()
        for u in basis:
            v -= (v @ u) * u
        norm = np.linalg.norm(v)
        if norm > 1e-10 * max(1.0, np.linalg.norm(G[i])):
            basis.append(v / norm)
            out.append(i)
    return out


def _eq_qp(P, q, A, b, Gw, hw):
    """Minimize the quadratic over the current equality set via its KKT system."""
    n = P.shape[0]
    me, mw = A.shape[0], Gw.shape[0]
    # stationarity: P z + q - A' nu - Gw' lam = 0
    K = np.zeros((n + me + mw, n + me + mw))
    K[:n, :n] = P
    if me:
        K[:n, n:n + me] = -A.T
        K[n:n + me, :n] = A
    if mw:
        K[:n, n + me:] = -Gw.T
        K[n + me:, :n] = Gw
    rhs = np.concatenate([-q, b, hw])
    sol, *_ = np.linalg.lstsq(K, rhs, rcond=None)
    z = sol[:n]
    nu = sol[n:n + me]
    lam = sol[n + me:]
    return z, nu, lam


def _finish(p, z, working, nu, lam, iterations):
    grad = p.P @ z + p.q
    if p.A.shape[0]:
        grad = grad - p.A.T @ nu
    if working:
        grad = grad - p.G[working].T @ lam
    stat = float(np.max(np.abs(grad))) if grad.size else 0.0
    feas = 0.0
    if p.G.shape[0]:
        feas = max(feas, float(np.max(p.h - p.G @ z)))
    if p.A.shape[0]:
        feas = max(feas, float(np.max(np.abs(p.A @ z - p.b))))
    comp = 0.0
    for k, i in enumerate(working):
        comp = max(comp, abs(lam[k] * (p.G[i] @ z - p.h[i])))
    residual = max(stat, max(feas, 0.0), comp)
    status = QpStatus.OPTIMAL if residual <= KKT_TOL else QpStatus.NUMERICAL_FAILURE
    objective = float(0.5 * z @ p.P @ z + p.q @ z)
    return QpSolution(status, z, objective, tuple(working), residual, iterations)
