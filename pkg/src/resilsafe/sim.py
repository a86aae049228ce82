"""Closed-loop simulation with pluggable adversaries on vulnerable sub-systems.

Episodes integrate the joint dynamics with the protected inputs supplied by a
controller (certified polynomial policy, runtime min-norm filter, or zero)
and the vulnerable inputs supplied by adversary models constrained to their
boxes.  Every constraint h^k is monitored at every step; trajectories record
the first violation.  Episodes are deterministic given the system, the
controller, adversary seeds, the step size, and the horizon.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, uvar, xvar
from .rsi import RsiReport
from .synth import (
    ClassKFunction,
    PolicyCertificate,
    QpFilterInfeasible,
    WeightMatrix,
    qp_filter,
)
from .system import InterconnectedSystem

VIOLATION_TOL = 1e-9


# -- adversary models -------------------------------------------------------------


class ConstantCorner:
    """Pin every channel of the compromised input at one box corner."""

    def __init__(self, high: bool | tuple[bool, ...] = True):
        self.high = high

    def reset(self, sys, i, seed=None):
        box = sys.subsystems[i].input_box
        flags = self.high if isinstance(self.high, (tuple, list)) else [self.high] * len(box)
        self._u = np.array([hi if f else lo for (lo, hi), f in zip(box, flags)])

    def __call__(self, sys, i, x, t):
        return self._u


class UniformRandom:
    """Independent uniform draws inside the box each step, seeded."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def reset(self, sys, i, seed=None):
        self._rng = np.random.default_rng(self.seed if seed is None else seed)
        self._box = np.array(sys.subsystems[i].input_box)

    def __call__(self, sys, i, x, t):
        return self._rng.uniform(self._box[:, 0], self._box[:, 1])


class GreedyWorst:
    """Pick the box corner that most decreases the summed barrier derivatives."""

    def reset(self, sys, i, seed=None):
        self._corners = list(itertools.product(*[b for b in sys.subsystems[i].input_box]))
        self._lies = [sys.lie_full(i, k) for k in range(sys.K)]
        self._lies = [p.with_scope(p.variables()) for p in self._lies]

    def __call__(self, sys, i, x, t):
        pt = sys.state_point(x)
        best_val, best_u = np.inf, None
        for corner in self._corners:
            point = dict(pt)
            for j, v in enumerate(sys.input_vars(i)):
                point[v] = corner[j]
            total = 0.0
            for lie in self._lies:
                if lie.is_zero():
                    continue
                total += lie.evaluate({v: point[v] for v in lie.scope})
            if total < best_val - 1e-15:
                best_val, best_u = total, np.array(corner)
        return best_u if best_u is not None else np.array(self._corners[0])


# -- controllers -------------------------------------------------------------------


class ZeroController:
    """Zero input, clipped into each box."""

    def __call__(self, sys, x, t):
        out = {}
        for i in sorted(sys.protected):
            box = np.array(sys.subsystems[i].input_box)
            out[i] = np.clip(np.zeros(sys.subsystems[i].r), box[:, 0], box[:, 1])
        return out


class SosPolicyController:
    """Evaluate the certified polynomial policies, clipped into the boxes."""

    def __init__(self, cert: PolicyCertificate):
        if not cert.feasible:
            raise ValueError("cannot run an infeasible policy certificate")
        self.cert = cert

    def __call__(self, sys, x, t):
        pt = sys.state_point(x)
        out = {}
        for i in sorted(sys.protected):
            taus = self.cert.policy(i)
            box = np.array(sys.subsystems[i].input_box)
            u = np.array([tau.evaluate({v: pt[v] for v in tau.scope}) for tau in taus])
            out[i] = np.clip(u, box[:, 0], box[:, 1])
        return out


class QpFilterController:
    """Per-state min-norm filter over the certified inequality set."""

    def __init__(self, rsi: RsiReport, eta: list[ClassKFunction],
                 alpha: WeightMatrix | None = None, alpha_as_variables: bool = False,
                 local_cert: PolicyCertificate | None = None):
        self.rsi = rsi
        self.eta = eta
        self.alpha = alpha
        self.alpha_as_variables = alpha_as_variables
        self.local_cert = local_cert

    def __call__(self, sys, x, t):
        if self.local_cert is not None and self.local_cert.mode == "local":
            return qp_filter_local(sys, self.local_cert, x)
        return qp_filter(sys, self.rsi, self.eta, self.alpha, x,
                         alpha_as_variables=self.alpha_as_variables,
                         warn_outside=False)


def qp_filter_local(sys: InterconnectedSystem, cert: PolicyCertificate,
                    x: np.ndarray) -> dict[int, np.ndarray]:
    """Min-norm filter for the translated-constraint mode.

    Enforces the barrier conditions of the operating envelope and of the
    non-local constraints (worst case over vulnerable box corners) as linear
    rows in the joint protected input.
    """
    from .optim import QpProblem, QpStatus, solve_qp
    from .synth import _lie_rows

    x = np.asarray(x, dtype=float)
    prot = sorted(sys.protected)
    u_off, pos = {}, 0
    for i in prot:
        u_off[i] = pos
        pos += sys.subsystems[i].r
    n = pos
    local_ks = {lc.k for lc in cert.locals}
    G, hh = [], []

    pt = sys.state_point(x)
    barriers = list(zip(cert.envelope, [cert.envelope_eta] * len(cert.envelope)))
    for k in range(sys.K):
        if k in local_ks:
            continue
        barriers.append((sys.safety[k], cert.eta[k]))

    F = sys.assemble_global()
    for barrier, eta in barriers:
        bval = barrier.evaluate({v: pt[v] for v in barrier.scope})
        # grad(barrier) . F as affine form in all inputs
        scope = frozenset(sys.state_vars()) | frozenset(sys.input_vars())
        total = Polynomial.zero(scope)
        b = barrier.with_scope(scope)
        for z, v in enumerate(sys.state_vars()):
            db = b.differentiate(v)
            if db.is_zero():
                continue
            total = total + db * F[z]
        const, prot_row, vuln_cols = _affine_input_split(sys, total, pt)
        # worst case over vulnerable corners: affine in each channel, so the
        # minimum picks the bad end per channel independently
        worst = 0.0
        bounds = sys_input_bounds_flat(sys)
        for v, coef in vuln_cols.items():
            lo, hi = bounds[v]
            worst += min(coef * lo, coef * hi)
        row = np.zeros(n)
        for i in prot:
            for j, v in enumerate(sys.input_vars(i)):
                row[u_off[i] + j] = prot_row.get(v, 0.0)
        G.append(row)
        hh.append(-eta(bval) - const - worst)
    for i in prot:
        for j, (lo, hi) in enumerate(sys.subsystems[i].input_box):
            e = np.zeros(n)
            e[u_off[i] + j] = 1.0
            G.append(e.copy())
            hh.append(lo)
            G.append(-e)
            hh.append(-hi)
    sol = solve_qp(QpProblem(P=2 * np.eye(n), q=np.zeros(n),
                             G=np.array(G), h=np.array(hh)))
    if sol.status is not QpStatus.OPTIMAL:
        raise QpFilterInfeasible(f"local-mode filter infeasible at x={x.tolist()}")
    return {i: sol.z[u_off[i]:u_off[i] + sys.subsystems[i].r] for i in prot}


def sys_input_bounds_flat(sys):
    out = {}
    for i in range(sys.N):
        out.update(sys.input_bounds(i))
    return out


def _affine_input_split(sys, poly, pt):
    """Evaluate states; split the remaining affine input dependence."""
    from .poly import Monomial

    reduced = poly.substitute({v: pt[v] for v in poly.scope if v.ns == "x"})
    const = reduced.coefficient(Monomial())
    prot_row, vuln_cols = {}, {}
    for m, c in reduced.terms.items():
        if m == Monomial():
            continue
        (v, e), = m.exps
        if e != 1:
            raise ValueError("input dependence is not affine")
        owner = next(i for i in range(sys.N) if v in sys.input_vars(i))
        if owner in sys.protected:
            prot_row[v] = prot_row.get(v, 0.0) + c
        else:
            vuln_cols[v] = vuln_cols.get(v, 0.0) + c
    return const, prot_row, vuln_cols


# -- integration -------------------------------------------------------------------


class NumericDynamics:
    """Vectorized numeric evaluation of the assembled joint vector field."""

    def __init__(self, sys: InterconnectedSystem):
        self.sys = sys
        F = sys.assemble_global()
        self._fields = [f.with_scope(f.variables()) for f in F]

    def __call__(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        point = {**self.sys.state_point(x), **self.sys.input_point(u)}
        return np.array([f.evaluate({v: point[v] for v in f.scope})
                         for f in self._fields])


def step(sys: InterconnectedSystem, x: np.ndarray, u: np.ndarray, dt: float,
         scheme: str = "euler", dynamics: NumericDynamics | None = None) -> np.ndarray:
    """One integration step with the input held constant."""
    if dt <= 0:
        raise ValueError("step size must be positive")
    f = dynamics or NumericDynamics(sys)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if scheme == "euler":
        out = x + dt * f(x, u)
    elif scheme == "rk4":
        k1 = f(x, u)
        k2 = f(x + 0.5 * dt * k1, u)
        k3 = f(x + 0.5 * dt * k2, u)
        k4 = f(x + dt * k3, u)
        out = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    else:
        raise ValueError(f"unknown integration scheme {scheme!r}")
    if not np.all(np.isfinite(out)):
        raise ArithmeticError("state became non-finite during integration")
    return out


# -- episodes ----------------------------------------------------------------------


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray          # (T+1) x n
    inputs: np.ndarray          # T x r
    h_values: np.ndarray        # (T+1) x K
    violated: bool
    first_violation: float | None
    status: str = "ok"

    def min_h(self) -> float:
        return float(self.h_values.min()) if self.h_values.size else np.inf

    def column(self, name: str):
        return {"avg_state": self.states.mean(axis=1)}[name]


def run_episode(sys: InterconnectedSystem, controller, adversaries: dict,
                x0: np.ndarray, steps: int, dt: float, scheme: str = "euler",
                seed: int | None = None) -> Trajectory:
    """Simulate the closed loop for a fixed horizon.

    ``controller(sys, x, t) -> {i: u_i}`` supplies the protected inputs;
    ``adversaries[i]`` supplies vulnerable sub-system i's input.  A controller
    exception truncates the trajectory with a status message.
    """
    x0 = np.asarray(x0, dtype=float)
    xv = sys.state_vars()
    hvals0 = [h.evaluate({v: q for v, q in zip(xv, x0) if v in h.scope})
              for h in sys.safety]
    if min(hvals0) < -VIOLATION_TOL:
        import warnings
        warnings.warn("initial state lies outside the safe set", stacklevel=2)

    for i in sorted(sys.vulnerable):
        if i not in adversaries:
            raise ValueError(f"no adversary model for vulnerable sub-system {i}")
        adversaries[i].reset(sys, i, seed=seed)

    dynamics = NumericDynamics(sys)
    states = [x0.copy()]
    inputs = []
    hrows = [hvals0]
    status = "ok"
    x = x0.copy()
    T = steps
    for t in range(steps):
        u = np.zeros(sys.r)
        try:
            prot_u = controller(sys, x, t)
        except QpFilterInfeasible as exc:
            status = f"truncated at step {t}: {exc}"
            T = t
            break
        for i, ui in prot_u.items():
            u[sys.u_offset[i]:sys.u_offset[i] + sys.subsystems[i].r] = ui
        for i in sorted(sys.vulnerable):
            ui = np.asarray(adversaries[i](sys, i, x, t), dtype=float)
            box = np.array(sys.subsystems[i].input_box)
            if (ui < box[:, 0] - 1e-12).any() or (ui > box[:, 1] + 1e-12).any():
                raise ValueError(f"adversary for sub-system {i} left its input box")
            u[sys.u_offset[i]:sys.u_offset[i] + sys.subsystems[i].r] = ui
        try:
            x = step(sys, x, u, dt, scheme, dynamics)
        except ArithmeticError as exc:
            raise ArithmeticError(f"{exc} (step {t})") from None
        inputs.append(u)
        states.append(x.copy())
        hrows.append([h.evaluate({v: q for v, q in zip(xv, x) if v in h.scope})
                      for h in sys.safety])

    states = np.array(states)
    inputs = np.array(inputs).reshape(len(inputs), sys.r)
    hm = np.array(hrows)
    violated = bool((hm < -VIOLATION_TOL).any())
    first = None
    if violated:
        idx = np.argwhere(hm < -VIOLATION_TOL)
        first = float(idx[:, 0].min() * dt)
    times = np.arange(len(states)) * dt
    return Trajectory(times, states, inputs, hm, violated, first, status)


# -- CSV emission ------------------------------------------------------------------


def emit(traj: Trajectory, path) -> None:
    """Write the trajectory as CSV with nine significant digits.

    Columns: t, x_1..x_n, u_1..u_r, h_1..h_K, avg_state.  The final row
    repeats the last applied input so every row parses numerically.
    """
    n = traj.states.shape[1]
    r = traj.inputs.shape[1] if traj.inputs.size else 0
    K = traj.h_values.shape[1]
    header = (["t"] + [f"x_{i+1}" for i in range(n)] + [f"u_{j+1}" for j in range(r)]
              + [f"h_{k+1}" for k in range(K)] + ["avg_state"])
    lines = [",".join(header)]
    avg = traj.states.mean(axis=1)
    for row in range(len(traj.states)):
        u_row = traj.inputs[min(row, len(traj.inputs) - 1)] if len(traj.inputs) else []
        vals = ([traj.times[row]] + list(traj.states[row]) + list(u_row)
                + list(traj.h_values[row]) + [avg[row]])
        lines.append(",".join(f"{v:.9g}" for v in vals))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_csv(path):
    """Parse an emitted trajectory file back into arrays (column name -> array)."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = np.array([[float(tok) for tok in line.strip().split(",")]
                         for line in fh if line.strip()])
    return {name: data[:, j] for j, name in enumerate(header)}
