"""Block-diagonal semidefinite programming via a primal-dual interior point.

A problem holds symmetric PSD matrix blocks plus named free scalar variables,
a linear objective (always minimized), and linear equality constraints.  A
linear functional references block entries through upper-triangle indices
``(block, i, j)`` with i <= j and single-count semantics:

    value = sum coef[b,i,j] * X_b[i,j]  +  sum coef[name] * scalar[name]

The solve is backed by cvxopt's cone LP (Nesterov-Todd scaled primal-dual
path following) with dense linear algebra; problems here stay tiny (blocks
well under 60x60).  Linearly dependent equality rows are removed by a
rank-revealing factorization before the solve.  Results are deterministic
given identical problem data.

The SDPA sparse export writes the problem in the standard primal form

    min <C, Y>  s.t.  <A_k, Y> = b_k,  Y >= 0 (block diagonal)

with free scalars encoded as pairs of 1x1 diagonal blocks (v = v+ - v-).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

DEPENDENT_ROW_TOL = 1e-10


class SdpStatus(Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"
    MAX_ITER = "MaxIter"
    NUMERICAL_FAILURE = "NumericalFailure"


@dataclass(frozen=True)
class LinFunc:
    """Linear functional over block entries (upper triangle) and scalars."""

    blocks: Mapping[tuple[int, int, int], float] = field(default_factory=dict)
    scalars: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        blocks = {}
        for (b, i, j), c in dict(self.blocks).items():
            if i > j:
                i, j = j, i
            key = (b, i, j)
            blocks[key] = blocks.get(key, 0.0) + float(c)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "scalars", {k: float(v) for k, v in dict(self.scalars).items()})

    def value(self, block_mats, scalar_vals) -> float:
        total = 0.0
        for (b, i, j), c in sorted(self.blocks.items()):
            total += c * block_mats[b][i, j]
        for name, c in sorted(self.scalars.items()):
            total += c * scalar_vals[name]
        return total


@dataclass(frozen=True)
class SdpProblem:
    block_dims: tuple[int, ...]
    scalars: tuple[str, ...]
    objective: LinFunc
    constraints: tuple[tuple[LinFunc, float], ...]

    def __post_init__(self):
        if not self.block_dims and not self.scalars:
            raise ValueError("SDP needs at least one block or scalar variable")
        if any(d <= 0 for d in self.block_dims):
            raise ValueError("block sizes must be positive")
        names = set(self.scalars)
        funcs = [self.objective] + [f for f, _ in self.constraints]
        for f in funcs:
            for b, i, j in f.blocks:
                if not (0 <= b < len(self.block_dims)):
                    raise ValueError(f"functional references undeclared block {b}")
                if not (0 <= i <= j < self.block_dims[b]):
                    raise ValueError(f"entry ({i},{j}) outside block {b} of size {self.block_dims[b]}")
            for name in f.scalars:
                if name not in names:
                    raise ValueError(f"functional references undeclared scalar {name!r}")

    @property
    def n_vars(self) -> int:
        return len(self.scalars) + sum(d * (d + 1) // 2 for d in self.block_dims)


@dataclass(frozen=True)
class SdpOptions:
    feastol: float = 1e-7
    abstol: float = 1e-7
    reltol: float = 1e-6
    maxiters: int = 200

    def scaled(self, factor: float) -> "SdpOptions":
        return SdpOptions(self.feastol * factor, self.abstol * factor,
                          self.reltol * factor, self.maxiters)


class SdpSolution:
    """Solver output: per-block matrices, scalar values, status, residuals."""

    __slots__ = ("status", "blocks", "scalar_values", "objective",
                 "dual_objective", "primal_residual", "min_eigenvalue", "iterations")

    def __init__(self, status, blocks=(), scalar_values=None, objective=np.nan,
                 dual_objective=np.nan, primal_residual=np.inf,
                 min_eigenvalue=-np.inf, iterations=0):
        self.status = status
        self.blocks = tuple(np.asarray(b) for b in blocks)
        self.scalar_values = dict(scalar_values or {})
        self.objective = float(objective)
        self.dual_objective = float(dual_objective)
        self.primal_residual = float(primal_residual)
        self.min_eigenvalue = float(min_eigenvalue)
        self.iterations = int(iterations)

    def __repr__(self):
        return (f"SdpSolution(status={self.status.value}, objective={self.objective:.6g}, "
                f"residual={self.primal_residual:.2e}, min_eig={self.min_eigenvalue:.2e})")


def _tri_index(dim: int):
    """Column offsets for the upper-triangle packing of one block."""
    pairs = [(i, j) for i in range(dim) for j in range(i, dim)]
    return {p: k for k, p in enumerate(pairs)}, pairs


def _assemble(problem: SdpProblem):
    """Build dense A, b, c over x = [scalars, upper-tri block entries...]."""
    nscal = len(problem.scalars)
    scal_pos = {name: k for k, name in enumerate(problem.scalars)}
    offsets = []
    pos = nscal
    tri = []
    for d in problem.block_dims:
        idx, pairs = _tri_index(d)
        offsets.append(pos)
        tri.append((idx, pairs))
        pos += len(pairs)
    nvar = pos

    def func_row(f: LinFunc):
        row = np.zeros(nvar)
        for name, c in f.scalars.items():
            row[scal_pos[name]] += c
        for (b, i, j), c in f.blocks.items():
            row[offsets[b] + tri[b][0][(i, j)]] += c
        return row

    c = func_row(problem.objective)
    A = np.array([func_row(f) for f, _ in problem.constraints]).reshape(len(problem.constraints), nvar)
    b = np.array([rhs for _, rhs in problem.constraints])
    return c, A, b, offsets, tri, nvar


def _drop_dependent_rows(A: np.ndarray, b: np.ndarray):
    """Remove linearly dependent equality rows; inconsistent rows are kept.

    Greedy Gram-Schmidt style scan preserves the original row order so the
    reduction is deterministic.
    """
    if A.shape[0] == 0:
        return A, b, False
    kept, dropped = [], []
    inconsistent = False
    basis = []
    for r in range(A.shape[0]):
        v = A[r].astype(float).copy()
        rhs = b[r]
        for u, urhs in basis:
            coef = v @ u
            v = v - coef * u
            rhs = rhs - coef * urhs
        norm = np.linalg.norm(v)
        scale = max(1.0, np.linalg.norm(A[r]))
        if norm > DEPENDENT_ROW_TOL * scale:
            basis.append((v / norm, rhs / norm))
            kept.append(r)
        else:
            # dependent row: redundant if the projected rhs also vanished,
            # otherwise the equalities are contradictory
            if abs(rhs) > 1e-8 * max(1.0, abs(b[r])):
                inconsistent = True
            else:
                dropped.append(r)
    if dropped:
        warnings.warn(f"dropped {len(dropped)} linearly dependent equality rows", stacklevel=3)
    return A[kept], b[kept], inconsistent


def solve_sdp(problem: SdpProblem, options: SdpOptions | None = None) -> SdpSolution:
    """Solve the SDP; never raises for solver trouble, reports a status instead."""
    from cvxopt import matrix, solvers

    options = options or SdpOptions()
    c, A, b, offsets, tri, nvar = _assemble(problem)
    A, b, inconsistent = _drop_dependent_rows(A, b)
    if inconsistent:
        return SdpSolution(SdpStatus.INFEASIBLE)

    if not problem.block_dims:
        return _solve_linear_only(problem, c, A, b)

    # scalars that appear in no constraint: fix to zero (warn) or report unbounded
    nscal = len(problem.scalars)
    fixed_rows = []
    if nscal:
        used = np.zeros(nvar, dtype=bool)
        if A.shape[0]:
            used |= (np.abs(A) > 0).any(axis=0)
        for k in range(nscal):
            if not used[k]:
                if abs(c[k]) > 0:
                    return SdpSolution(SdpStatus.UNBOUNDED)
                warnings.warn(
                    f"scalar {problem.scalars[k]!r} appears in no constraint; fixed to 0",
                    stacklevel=2)
                row = np.zeros(nvar)
                row[k] = 1.0
                fixed_rows.append(row)
    if fixed_rows:
        A = np.vstack([A] + fixed_rows) if A.size else np.array(fixed_rows)
        b = np.concatenate([b, np.zeros(len(fixed_rows))])

    # PSD cone rows: s_block = P x  (full column-major entries of each block)
    G_rows = []
    for bidx, d in enumerate(problem.block_dims):
        P = np.zeros((d * d, nvar))
        idx, _ = tri[bidx]
        for i in range(d):
            for j in range(d):
                col = offsets[bidx] + idx[(min(i, j), max(i, j))]
                P[j * d + i, col] = 1.0  # column-major position of (i,j)
        G_rows.append(-P)
    G = np.vstack(G_rows)
    h = np.zeros(G.shape[0])

    solvers.options.update({
        "show_progress": False,
        "maxiters": options.maxiters,
        "abstol": options.abstol,
        "reltol": options.reltol,
        "feastol": options.feastol,
    })
    dims = {"l": 0, "q": [], "s": list(problem.block_dims)}
    try:
        sol = solvers.conelp(matrix(c), matrix(G), matrix(h), dims,
                             matrix(A), matrix(b))
    except (ValueError, ZeroDivisionError, ArithmeticError):
        return SdpSolution(SdpStatus.NUMERICAL_FAILURE)

    status_map = {
        "optimal": SdpStatus.OPTIMAL,
        "primal infeasible": SdpStatus.INFEASIBLE,
        "dual infeasible": SdpStatus.UNBOUNDED,
    }
    raw = sol.get("status", "unknown")
    iterations = sol.get("iterations", 0)
    if raw not in status_map:
        status = SdpStatus.MAX_ITER if iterations >= options.maxiters else SdpStatus.NUMERICAL_FAILURE
        return SdpSolution(status, iterations=iterations)
    status = status_map[raw]
    if status is not SdpStatus.OPTIMAL:
        return SdpSolution(status, iterations=iterations)

    x = np.array(sol["x"]).ravel()
    scalar_values = {name: float(x[k]) for k, name in enumerate(problem.scalars)}
    blocks = []
    for bidx, d in enumerate(problem.block_dims):
        M = np.zeros((d, d))
        _, pairs = tri[bidx]
        for k, (i, j) in enumerate(pairs):
            M[i, j] = M[j, i] = x[offsets[bidx] + k]
        blocks.append(M)

    primal_residual = float(np.max(np.abs(A @ x - b))) if A.shape[0] else 0.0
    min_eig = min((float(np.linalg.eigvalsh(M)[0]) for M in blocks), default=0.0)
    objective = float(c @ x)
    dual_objective = float(sol["dual objective"]) if sol.get("dual objective") is not None else np.nan

    if primal_residual > 1e-7 or min_eig < -1e-7:
        status = SdpStatus.NUMERICAL_FAILURE
    return SdpSolution(status, blocks, scalar_values, objective, dual_objective,
                       primal_residual, min_eig, iterations)


def _solve_linear_only(problem, c, A, b):
    """Degenerate case with scalar variables only: a plain linear system."""
    if A.shape[0] == 0:
        if np.any(np.abs(c) > 0):
            return SdpSolution(SdpStatus.UNBOUNDED)
        vals = {name: 0.0 for name in problem.scalars}
        return SdpSolution(SdpStatus.OPTIMAL, (), vals, 0.0, 0.0, 0.0, 0.0)
    x, res, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if np.max(np.abs(A @ x - b)) > 1e-7:
        return SdpSolution(SdpStatus.INFEASIBLE)
    if rank < A.shape[1]:
        # objective varies along the null space -> unbounded
        ns = _null_space(A)
        if ns.size and np.max(np.abs(ns.T @ c)) > 1e-12:
            return SdpSolution(SdpStatus.UNBOUNDED)
    vals = {name: float(x[k]) for k, name in enumerate(problem.scalars)}
    return SdpSolution(SdpStatus.OPTIMAL, (), vals, float(c @ x), float(c @ x),
                       float(np.max(np.abs(A @ x - b))), 0.0)


def _null_space(A):
    _, s, vh = np.linalg.svd(A)
    rank = int(np.sum(s > 1e-12 * max(A.shape) * (s[0] if s.size else 1.0)))
    return vh[rank:].T


# -- SDPA sparse format --------------------------------------------------------


def export_sdpa(problem: SdpProblem, path) -> None:
    """Write SDPA sparse format with bit-exact deterministic ordering.

    Free scalars become pairs of 1x1 diagonal blocks (v = v+ - v-), appended
    after the matrix blocks.  Constraintless problems are rejected: the format
    needs mDIM >= 1 to be meaningful.
    """
    if not problem.constraints:
        raise ValueError("cannot export a constraintless SDP to SDPA format")

    block_dims = list(problem.block_dims)
    scal_block0 = len(block_dims)
    for _ in problem.scalars:
        block_dims.extend([1, 1])  # v+ block, v- block

    def expand(f: LinFunc):
        entries = {}
        for (bl, i, j), coef in f.blocks.items():
            # tr(F X) doubles off-diagonal contributions; halve to preserve value
            entries[(bl, i, j)] = coef if i == j else coef / 2.0
        for k, name in enumerate(problem.scalars):
            coef = f.scalars.get(name, 0.0)
            if coef:
                entries[(scal_block0 + 2 * k, 0, 0)] = coef
                entries[(scal_block0 + 2 * k + 1, 0, 0)] = -coef
        return entries

    lines = []
    lines.append(f"{len(problem.constraints)}")
    lines.append(f"{len(block_dims)}")
    lines.append(" ".join(str(d) for d in block_dims))
    lines.append(" ".join(repr(float(rhs)) for _, rhs in problem.constraints))
    mats = [(0, expand(problem.objective))]
    for k, (f, _) in enumerate(problem.constraints, start=1):
        mats.append((k, expand(f)))
    for matno, entries in mats:
        for (bl, i, j) in sorted(entries):
            val = entries[(bl, i, j)]
            if val == 0.0:
                continue
            lines.append(f"{matno} {bl + 1} {i + 1} {j + 1} {val!r}")
    text = "\n".join(lines) + "\n"
    with open(path, "w") as fh:
        fh.write(text)


def read_sdpa(path) -> SdpProblem:
    """Independent SDPA sparse reader; inverse of :func:`export_sdpa`.

    All blocks read back as matrix blocks (the scalar encoding is not
    re-folded), so round-trip checks compare exported structure.
    """
    tokens: list[str] = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("*") or line.startswith('"'):
                continue
            tokens.append(line)
    m = int(tokens[0])
    nblocks = int(tokens[1])
    dims = [abs(int(t)) for t in tokens[2].split()]
    if len(dims) != nblocks:
        raise ValueError("block structure length mismatch")
    rhs = [float(t) for t in tokens[3].split()]
    if len(rhs) != m:
        raise ValueError("rhs length mismatch")
    funcs: list[dict] = [dict() for _ in range(m + 1)]
    for line in tokens[4:]:
        matno_s, bl_s, i_s, j_s, val_s = line.split()
        matno, bl, i, j = int(matno_s), int(bl_s) - 1, int(i_s) - 1, int(j_s) - 1
        val = float(val_s)
        coef = val if i == j else 2.0 * val
        funcs[matno][(bl, min(i, j), max(i, j))] = coef
    objective = LinFunc(blocks=funcs[0])
    constraints = tuple((LinFunc(blocks=funcs[k]), rhs[k - 1]) for k in range(1, m + 1))
    return SdpProblem(tuple(dims), (), objective, constraints)
