"""Interconnected system model: sub-systems, partition, safety constraints.

A system is a list of sub-systems, each with self-dynamics (functions of its
own state block only) and coupled-dynamics (functions of the whole state),
both affine in the sub-system's own input:

    xdot_i = f_slf_i(x_i) + g_slf_i(x_i) u_i + f_cpl_i(x) + g_cpl_i(x) u_i

Inputs are box constrained channel by channel.  The sub-systems are
partitioned into protected ones (trustworthy actuators) and vulnerable ones
(faulty or adversarial actuators).  Safety is the intersection of the
superlevel sets of the declared polynomials h^k(x) >= 0.

Variables use global indexing: sub-system i owns the state variables
x[x_offset[i] : x_offset[i]+n_i] and inputs u[u_offset[i] : ...+r_i].
Everything is immutable after construction and validation.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, PolyMatrix, PolyVector, Var, uvar, xvar


@dataclass(frozen=True)
class SubsystemModel:
    name: str
    n: int
    r: int
    f_slf: PolyVector
    g_slf: PolyMatrix
    f_cpl: PolyVector
    g_cpl: PolyMatrix | None
    input_box: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if len(self.f_slf) != self.n or len(self.f_cpl) != self.n:
            raise ValueError(f"{self.name}: dynamics vectors must have length n={self.n}")
        if self.g_slf.shape != (self.n, self.r):
            raise ValueError(f"{self.name}: g_slf must be {self.n}x{self.r}")
        if self.g_cpl is not None and self.g_cpl.shape != (self.n, self.r):
            raise ValueError(f"{self.name}: g_cpl must be {self.n}x{self.r}")
        if len(self.input_box) != self.r:
            raise ValueError(f"{self.name}: input box needs {self.r} channel bounds")


@dataclass(frozen=True)
class SafetyDomainSampler:
    """User-supplied box enclosing the safe set, with grid utilities.

    The bounding box is data, not something inferred: bounding a
    semialgebraic set is itself an optimization problem, so the system
    description carries the box explicitly.
    """

    box: tuple[tuple[float, float], ...]
    resolution: int = 11

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("grid resolution must be at least 2 per axis")
        for lo, hi in self.box:
            if not lo < hi:
                raise ValueError(f"degenerate bounding box interval [{lo}, {hi}]")

    def axes(self, resolution: int | None = None):
        res = resolution or self.resolution
        return [np.linspace(lo, hi, res) for lo, hi in self.box]

    def grid(self, resolution: int | None = None):
        """All box grid points in lexicographic order, one row per point."""
        axes = self.axes(resolution)
        pts = np.array(list(itertools.product(*axes)))
        return pts.reshape(-1, len(self.box))

    def box_polynomials(self) -> list[Polynomial]:
        """Per-axis (x - lo)(hi - x) >= 0 encodings of the box."""
        out = []
        for j, (lo, hi) in enumerate(self.box):
            v = Polynomial.variable(xvar(j))
            out.append((v - lo) * (hi - v))
        return out


@dataclass(frozen=True)
class InterconnectedSystem:
    subsystems: tuple[SubsystemModel, ...]
    protected: frozenset[int]
    vulnerable: frozenset[int]
    safety: tuple[Polynomial, ...]
    sampler: SafetyDomainSampler
    x_offset: tuple[int, ...] = field(init=False)
    u_offset: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        xo, uo = [], []
        px = pu = 0
        for s in self.subsystems:
            xo.append(px)
            uo.append(pu)
            px += s.n
            pu += s.r
        object.__setattr__(self, "x_offset", tuple(xo))
        object.__setattr__(self, "u_offset", tuple(uo))
        object.__setattr__(self, "protected", frozenset(self.protected))
        object.__setattr__(self, "vulnerable", frozenset(self.vulnerable))

    # -- dimensions and variables ---------------------------------------------

    @property
    def N(self) -> int:
        return len(self.subsystems)

    @property
    def n(self) -> int:
        return sum(s.n for s in self.subsystems)

    @property
    def r(self) -> int:
        return sum(s.r for s in self.subsystems)

    @property
    def K(self) -> int:
        return len(self.safety)

    def state_vars(self, i: int | None = None) -> list[Var]:
        if i is None:
            return [xvar(z) for z in range(self.n)]
        s = self.subsystems[i]
        return [xvar(self.x_offset[i] + z) for z in range(s.n)]

    def input_vars(self, i: int | None = None) -> list[Var]:
        if i is None:
            return [uvar(z) for z in range(self.r)]
        s = self.subsystems[i]
        return [uvar(self.u_offset[i] + z) for z in range(s.r)]

    def input_bounds(self, i: int) -> dict[Var, tuple[float, float]]:
        s = self.subsystems[i]
        return {uvar(self.u_offset[i] + j): s.input_box[j] for j in range(s.r)}

    def full_scope(self):
        return frozenset(self.state_vars()) | frozenset(self.input_vars())

    # -- Lie derivatives --------------------------------------------------------

    def lie_self(self, i: int, k: int) -> Polynomial:
        """Gradient of h^k against sub-system i's self-dynamics.

        Returns sum_z (dh^k/dx_{i,z}) (f_slf + g_slf u_i)_z, a polynomial in
        the states and u_i, affine in u_i.
        """
        self._check_indices(i, k)
        s = self.subsystems[i]
        scope = self.full_scope()
        h = self.safety[k].with_scope(scope)
        total = Polynomial.zero(scope)
        for z in range(s.n):
            xv = xvar(self.x_offset[i] + z)
            dh = h.differentiate(xv)
            if dh.is_zero():
                continue
            flow = s.f_slf[z].with_scope(scope)
            for j in range(s.r):
                uj = Polynomial.variable(uvar(self.u_offset[i] + j), scope)
                flow = flow + s.g_slf[z, j].with_scope(scope) * uj
            total = total + dh * flow
        return total

    def lie_coupled(self, i: int, k: int) -> Polynomial:
        """Gradient of h^k against sub-system i's coupled-dynamics."""
        self._check_indices(i, k)
        s = self.subsystems[i]
        scope = self.full_scope()
        h = self.safety[k].with_scope(scope)
        total = Polynomial.zero(scope)
        for z in range(s.n):
            xv = xvar(self.x_offset[i] + z)
            dh = h.differentiate(xv)
            if dh.is_zero():
                continue
            flow = s.f_cpl[z].with_scope(scope)
            if s.g_cpl is not None:
                for j in range(s.r):
                    uj = Polynomial.variable(uvar(self.u_offset[i] + j), scope)
                    flow = flow + s.g_cpl[z, j].with_scope(scope) * uj
            total = total + dh * flow
        return total

    def lie_coupled_sum(self, k: int, subset) -> Polynomial:
        """Summed coupled Lie derivative over a subset of sub-systems."""
        scope = self.full_scope()
        total = Polynomial.zero(scope)
        for i in sorted(subset):
            total = total + self.lie_coupled(i, k)
        return total

    def lie_full(self, i: int, k: int) -> Polynomial:
        return self.lie_self(i, k) + self.lie_coupled(i, k)

    def assemble_global(self) -> PolyVector:
        """The joint vector field F(x, u), block by block."""
        scope = self.full_scope()
        entries = []
        for i, s in enumerate(self.subsystems):
            for z in range(s.n):
                flow = s.f_slf[z].with_scope(scope) + s.f_cpl[z].with_scope(scope)
                for j in range(s.r):
                    uj = Polynomial.variable(uvar(self.u_offset[i] + j), scope)
                    flow = flow + s.g_slf[z, j].with_scope(scope) * uj
                    if s.g_cpl is not None:
                        flow = flow + s.g_cpl[z, j].with_scope(scope) * uj
                entries.append(flow)
        return PolyVector(entries)

    def _check_indices(self, i: int, k: int):
        if not (0 <= i < self.N):
            raise IndexError(f"sub-system index {i} out of range 0..{self.N - 1}")
        if not (0 <= k < self.K):
            raise IndexError(f"constraint index {k} out of range 0..{self.K - 1}")

    # -- domain helpers ----------------------------------------------------------

    def domain_polynomials(self, shrink: dict[int, float] | None = None) -> list[Polynomial]:
        """Safety polynomials (optionally level-shifted) plus box encodings."""
        shrink = shrink or {}
        out = [h - shrink.get(k, 0.0) if shrink.get(k, 0.0) else h
               for k, h in enumerate(self.safety)]
        out.extend(self.sampler.box_polynomials())
        return out

    def safe_grid(self, resolution: int | None = None, shrink=None) -> np.ndarray:
        """Box grid points that satisfy every (possibly shifted) constraint."""
        shrink = shrink or {}
        pts = self.sampler.grid(resolution)
        keep = np.ones(len(pts), dtype=bool)
        xv = self.state_vars()
        for k, h in enumerate(self.safety):
            level = shrink.get(k, 0.0)
            vals = np.array([h.evaluate(dict(zip(xv, p))) for p in pts])
            keep &= vals >= level
        return pts[keep]

    def state_point(self, x: np.ndarray) -> dict[Var, float]:
        return {xvar(z): float(x[z]) for z in range(self.n)}

    def input_point(self, u: np.ndarray) -> dict[Var, float]:
        return {uvar(z): float(u[z]) for z in range(self.r)}


def validate(sys: InterconnectedSystem) -> list[str]:
    """Check structural invariants; returns a list of violation messages."""
    out = []
    N = sys.N
    ids = set(range(N))
    if sys.protected | sys.vulnerable != ids:
        out.append("partition does not cover all sub-systems")
    overlap = sys.protected & sys.vulnerable
    if overlap:
        out.append(f"partition overlaps on sub-systems {sorted(overlap)}")

    for i, s in enumerate(sys.subsystems):
        own = set(sys.state_vars(i))
        for z, p in enumerate(s.f_slf):
            if not p.variables() <= own:
                out.append(f"{s.name}: f_slf[{z}] references variables outside its state block")
        for z in range(s.n):
            for j in range(s.r):
                if not s.g_slf[z, j].variables() <= own:
                    out.append(f"{s.name}: g_slf[{z},{j}] references variables outside its state block")
        all_states = set(sys.state_vars())
        for z, p in enumerate(s.f_cpl):
            if not p.variables() <= all_states:
                out.append(f"{s.name}: f_cpl[{z}] must be a function of states only")
        if s.g_cpl is not None:
            for z in range(s.n):
                for j in range(s.r):
                    if not s.g_cpl[z, j].variables() <= all_states:
                        out.append(f"{s.name}: g_cpl[{z},{j}] must be a function of states only")
        for j, (lo, hi) in enumerate(s.input_box):
            if not lo < hi:
                out.append(f"{s.name}: input channel {j} has empty box [{lo}, {hi}]")

    states = set(sys.state_vars())
    for k, h in enumerate(sys.safety):
        extra = h.variables() - states
        if extra:
            out.append(f"safety function h{k} references input variable "
                       + ", ".join(str(v) for v in sorted(extra)))
    if len(sys.sampler.box) != sys.n:
        out.append(f"bounding box has {len(sys.sampler.box)} axes, expected {sys.n}")
    return out
