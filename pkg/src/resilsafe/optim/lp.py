"""Linear programming with vertex reporting.

Problems are stated as

    min  c' z   s.t.  A z >= b

with every bound folded into A.  The solve itself is delegated to HiGHS
(dual simplex) through scipy, which returns a basic solution; the solution is
then classified as a vertex by counting linearly independent active rows.
For problems with at most 12 variables an exhaustive vertex enumeration is
available as an independent cross-check of the optimum and of the vertex
attainment claim.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations

import numpy as np
from scipy.optimize import linprog

ACTIVE_TOL = 1e-8


class LpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class LpProblem:
    c: np.ndarray
    A: np.ndarray  # A z >= b
    b: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float).ravel()
        A = np.asarray(self.A, dtype=float).reshape(-1, c.size)
        b = np.asarray(self.b, dtype=float).ravel()
        if A.shape[0] != b.shape[0]:
            raise ValueError("inconsistent constraint dimensions")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n(self):
        return self.c.size


@dataclass(frozen=True)
class LpSolution:
    status: LpStatus
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    optimum: float = np.nan
    is_vertex: bool = False
    active_rows: tuple[int, ...] = ()


def solve_lp(p: LpProblem) -> LpSolution:
    res = linprog(p.c, A_ub=-p.A, b_ub=-p.b, bounds=[(None, None)] * p.n, method="highs")
    if res.status == 2:
        return LpSolution(LpStatus.INFEASIBLE)
    if res.status == 3:
        return LpSolution(LpStatus.UNBOUNDED)
    if res.status != 0 or res.x is None:
        return LpSolution(LpStatus.NUMERICAL_FAILURE)
    z = np.asarray(res.x)
    slack = p.A @ z - p.b
    active = tuple(int(i) for i in np.nonzero(np.abs(slack) <= ACTIVE_TOL * np.maximum(1.0, np.abs(p.b)))[0])
    rank = np.linalg.matrix_rank(p.A[list(active)], tol=1e-9) if active else 0
    return LpSolution(LpStatus.OPTIMAL, z, float(res.fun), rank == p.n, active)


def enumerate_vertices(p: LpProblem, max_vars: int = 12) -> list[np.ndarray]:
    """All vertices of {z : A z >= b} by basis enumeration (small problems only)."""
    n = p.n
    if n > max_vars:
        raise ValueError(f"vertex enumeration limited to {max_vars} variables")
    verts = []
    for rows in combinations(range(p.A.shape[0]), n):
        M = p.A[list(rows)]
        if np.linalg.matrix_rank(M, tol=1e-9) < n:
            continue
        try:
            v = np.linalg.solve(M, p.b[list(rows)])
        except np.linalg.LinAlgError:
            continue
        if (p.A @ v >= p.b - 1e-8 * np.maximum(1.0, np.abs(p.b))).all():
            if not any(np.allclose(v, w, atol=1e-8) for w in verts):
                verts.append(v)
    return verts


def cross_check_vertex_optimum(p: LpProblem) -> tuple[float, np.ndarray]:
    """Optimum over the enumerated vertex set (polytope must be bounded)."""
    verts = enumerate_vertices(p)
    if not verts:
        raise ValueError("no vertices found; polytope empty or unbounded")
    vals = [float(p.c @ v) for v in verts]
    k = int(np.argmin(vals))
    return vals[k], verts[k]
