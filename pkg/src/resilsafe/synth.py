"""Safety-ensuring policy synthesis for the protected sub-systems.

The offline route searches for polynomial state-feedback policies tau_i(x)
such that, for every constraint k,

    grad_i h^k . F_i(x, tau_i(x))  >=  alpha_i^k ( -eta_i^k(h^k(x))
                                                   - beta^k - sum_j gamma_j^k )

holds on the safe set, which by the index construction makes every h^k
forward invariant no matter what the vulnerable sub-systems do inside their
input boxes.  The inequality and the box membership of each policy channel
are certified by SOS multipliers over the safe set and bounding box.

A runtime alternative is the min-norm quadratic program filter solving, at
each visited state, for the smallest input satisfying the same per-constraint
inequalities plus the input box.

Constraints local to a vulnerable sub-system cannot be treated through the
index route (their own worst case is unbounded by design); for those the
translated-constraint mode enforces the barrier condition of the local
constraint directly, for worst-case compromised input over its box corners,
as additional conditions on the protected sub-systems, together with an
operating envelope that the protected rooms keep invariant.

Infeasible synthesis at level zero can be retried on shrunken safe sets
{h_k >= c_k}; the sweep raises c_k in fixed steps until certification
succeeds or the level exceeds the constraint's maximum, so it terminates
within ceil(max h_k / step) iterations.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .optim import QpProblem, QpStatus, SdpOptions, SdpStatus, solve_qp
from .poly import Monomial, Polynomial, Var, monomial_basis, uvar, xvar
from .rsi import RsiReport, compute_report, normalize_to_unit_box
from .sos import ParamPoly, SosCertificate, SosProgram
from .system import InterconnectedSystem

MR_GRID_TOL = 1e-6
BOX_GRID_TOL = 1e-6


class NotApplicable(Exception):
    pass


class PolicyStatus(Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"
    ERROR = "Error"


@dataclass(frozen=True)
class ClassKFunction:
    """eta(h) = kappa * h (linear) or kappa * h^3 (cubic); eta(0) = 0, increasing."""

    kind: str = "linear"
    kappa: float = 1.0

    def __post_init__(self):
        if self.kind not in ("linear", "cubic"):
            raise ValueError(f"unsupported class-K kind {self.kind!r}")
        if self.kappa <= 0:
            raise ValueError("class-K gain must be positive")

    def of_poly(self, h: Polynomial) -> Polynomial:
        if self.kind == "linear":
            return h.scale(self.kappa)
        return (h * h * h).scale(self.kappa)

    def __call__(self, v: float) -> float:
        if self.kind == "linear":
            return self.kappa * v
        return self.kappa * v ** 3

    def is_increasing_on(self, lo: float, hi: float, samples: int = 64) -> bool:
        grid = np.linspace(lo, hi, samples)
        vals = np.array([self(v) for v in grid])
        return bool((np.diff(vals) > 0).all()) and abs(self(0.0)) < 1e-15


class WeightMatrix:
    """Responsibility weights alpha_i^k over protected sub-systems, k-wise normalized."""

    def __init__(self, entries: dict[tuple[int, int], float], protected, K: int):
        self.entries = {k: float(v) for k, v in entries.items()}
        self.protected = frozenset(protected)
        self.K = K
        for (i, k), v in self.entries.items():
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"alpha[{i},{k}] = {v} outside [0, 1]")
        for k in range(K):
            s = sum(self.entries.get((i, k), 0.0) for i in self.protected)
            if abs(s - 1.0) > 1e-12:
                raise ValueError(f"alpha column {k} sums to {s}, expected 1")

    @staticmethod
    def uniform(protected, K: int) -> "WeightMatrix":
        protected = sorted(protected)
        entries = {(i, k): 1.0 / len(protected) for i in protected for k in range(K)}
        return WeightMatrix(entries, protected, K)

    @staticmethod
    def local_aware(sys) -> "WeightMatrix":
        """Uniform weights, except constraints local to one protected sub-system
        put their whole weight on that sub-system (the remaining conditions are
        then vacuous and drop out of the programs)."""
        protected = sorted(sys.protected)
        entries = {}
        for k, h in enumerate(sys.safety):
            owners = {i for i in range(sys.N) if h.variables() & set(sys.state_vars(i))}
            if len(owners) == 1 and next(iter(owners)) in sys.protected:
                owner = next(iter(owners))
                for i in protected:
                    entries[(i, k)] = 1.0 if i == owner else 0.0
            else:
                for i in protected:
                    entries[(i, k)] = 1.0 / len(protected)
        return WeightMatrix(entries, protected, sys.K)

    def __call__(self, i: int, k: int) -> float:
        return self.entries.get((i, k), 0.0)


@dataclass
class LocalConstraint:
    """Translated treatment of a constraint local to one vulnerable sub-system.

    Both corner instances of the barrier condition

        grad h . F_i(x, u_i = corner) + eta(h(x)) >= 0

    must hold on the operating domain; they involve no protected inputs, so
    they act as feasibility requirements on the domain itself.
    """

    k: int
    subsystem: int
    eta: ClassKFunction
    corner_conditions: list[tuple[tuple[float, ...], Polynomial]]


@dataclass
class PolicyEntry:
    subsystem: int
    status: PolicyStatus
    policies: list[Polynomial] = field(default_factory=list)  # one per input channel
    certificates: dict[str, SosCertificate] = field(default_factory=dict)
    message: str = ""


@dataclass
class PolicyCertificate:
    status: PolicyStatus
    entries: dict[int, PolicyEntry] = field(default_factory=dict)
    alpha: WeightMatrix | None = None
    eta: list[ClassKFunction] = field(default_factory=list)
    rsi: RsiReport | None = None
    mode: str = "standard"
    locals: list[LocalConstraint] = field(default_factory=list)
    envelope: list[Polynomial] = field(default_factory=list)
    envelope_eta: ClassKFunction | None = None
    shrink: dict[int, float] = field(default_factory=dict)
    message: str = ""

    def policy(self, i: int) -> list[Polynomial]:
        return self.entries[i].policies

    @property
    def feasible(self) -> bool:
        return self.status is PolicyStatus.FEASIBLE


# -- shared construction pieces ---------------------------------------------------


def _inverse_scale_map(meta: dict[Var, tuple[float, float]]):
    inv = {}
    for v, (mid, half) in meta.items():
        inv[v] = Polynomial({Monomial({v: 1}): 1.0 / half, Monomial(): -mid / half}, [v])
    return inv


def _policy_templates(prog: SosProgram, sys: InterconnectedSystem, i: int,
                      degree: int, state_vars):
    """One unknown polynomial per input channel of sub-system i."""
    basis = monomial_basis(state_vars, degree)
    taus = []
    for j in range(sys.subsystems[i].r):
        tpl, names = ParamPoly.template(f"tau{i}_{j}", basis, state_vars)
        for name in names:
            prog.add_param(name)
        taus.append(tpl)
    return taus


def _lie_with_policy(sys: InterconnectedSystem, i: int, k: int, taus,
                     mapping_polys) -> ParamPoly:
    """grad_i h^k . F_i with channel inputs replaced by policy templates.

    mapping_polys carries the normalization substitution applied to every
    known polynomial; the templates are already expressed in normalized
    variables.
    """
    s = sys.subsystems[i]
    scope = frozenset(sys.state_vars())
    h = sys.safety[k].with_scope(scope)
    total = ParamPoly({}, scope)
    for z in range(s.n):
        xv = xvar(sys.x_offset[i] + z)
        dh = h.differentiate(xv)
        if dh.is_zero():
            continue
        dh = dh.compose(mapping_polys)
        drift = (s.f_slf[z].with_scope(scope) + s.f_cpl[z].with_scope(scope)).compose(mapping_polys)
        total = total + ParamPoly.from_poly(dh * drift)
        for j in range(s.r):
            gz = s.g_slf[z, j].with_scope(scope)
            if s.g_cpl is not None:
                gz = gz + s.g_cpl[z, j].with_scope(scope)
            gz = gz.compose(mapping_polys)
            total = total + taus[j].mul_poly(dh * gz)
    return total


def _normalization(sys: InterconnectedSystem, extra_polys=(), input_ids=()):
    """Normalized domain polynomials and the substitution map for the state box."""
    box = {}
    for i in input_ids:
        box.update(sys.input_bounds(i))
    polys = list(sys.safety) + list(extra_polys)
    scaled, _, meta = normalize_to_unit_box(sys, polys, box)
    mapping = {v: Polynomial({Monomial(): mid, Monomial({v: 1}): half}, [v])
               for v, (mid, half) in meta.items()}
    return scaled, mapping, meta


def _state_box_polys_normalized(meta):
    out = []
    for v in sorted(meta):
        if v.ns != "x":
            continue
        p = Polynomial.variable(v)
        out.append((1.0 - p) * (p + 1.0))
    return out


# -- standard per-sub-system synthesis ---------------------------------------------


def synthesize_policy(sys: InterconnectedSystem, rsi: RsiReport, i: int,
                      eta: list[ClassKFunction], alpha: WeightMatrix,
                      policy_degree: int = 1, multiplier_degree: int = 2,
                      shrink=None, options: SdpOptions | None = None) -> PolicyEntry:
    """Certify one protected sub-system's policy against every constraint."""
    if i not in sys.protected:
        raise ValueError(f"sub-system {i} is not protected")
    shrink = shrink or {}
    scaled_h, mapping, meta = _normalization(sys)
    domain = [(h - shrink.get(k, 0.0), multiplier_degree) if shrink.get(k)
              else (h, multiplier_degree) for k, h in enumerate(scaled_h)]
    domain += [(b, multiplier_degree) for b in _state_box_polys_normalized(meta)]

    prog = SosProgram()
    state_vars = sorted(v for v in meta if v.ns == "x")
    taus = _policy_templates(prog, sys, i, policy_degree, state_vars)

    for k in range(sys.K):
        lie = _lie_with_policy(sys, i, k, taus, mapping)
        rhs_const = alpha(i, k) * (rsi.beta_value(k) + rsi.gamma_sum(k, sys.vulnerable))
        # the barrier of a shrunken set {h_k >= c_k} is h_k - c_k, so the
        # class-K margin vanishes on the shrunken boundary
        h_scaled = scaled_h[k] - shrink.get(k, 0.0)
        margin = eta[k].of_poly(h_scaled).scale(alpha(i, k)) + rhs_const
        composite = lie + ParamPoly.from_poly(margin)
        if not composite.terms:
            continue  # constraint does not involve this sub-system and has no demand
        prog.add_sos(composite, domain=domain, label=f"mr_k{k}")

    for j, (lo, hi) in enumerate(sys.subsystems[i].input_box):
        prog.add_sos(taus[j] - lo, domain=domain, label=f"box_lo_{j}")
        prog.add_sos((-taus[j]) + hi, domain=domain, label=f"box_hi_{j}")

    sol = prog.solve(options)
    if sol.status is not SdpStatus.OPTIMAL:
        status = (PolicyStatus.INFEASIBLE
                  if sol.status in (SdpStatus.INFEASIBLE, SdpStatus.UNBOUNDED)
                  else PolicyStatus.ERROR)
        return PolicyEntry(i, status, message=(
            f"synthesis SDP ended with {sol.status.value}; raise the policy or "
            "multiplier degree, adjust the weights, or run the shrink sweep"))

    inv = _inverse_scale_map({v: meta[v] for v in meta if v.ns == "x"})
    policies = []
    for j in range(sys.subsystems[i].r):
        tau_scaled = taus[j].instantiate(sol.params)
        policies.append(tau_scaled.compose(inv))
    return PolicyEntry(i, PolicyStatus.FEASIBLE, policies, sol.certificates)


def run_algorithm1(sys: InterconnectedSystem, eta: list[ClassKFunction] | None = None,
                   alpha: WeightMatrix | None = None, policy_degree: int = 1,
                   multiplier_degree: int = 2, rsi: RsiReport | None = None,
                   rsi_backend: str = "sos", shrink=None,
                   options: SdpOptions | None = None) -> PolicyCertificate:
    """Index computation followed by per-sub-system policy certification.

    Each protected sub-system is solved independently; the first failure
    marks the whole certificate infeasible (remaining entries still solve,
    their feasibility does not depend on the loop order).
    """
    if not sys.protected:
        raise ValueError("no protected sub-systems: synthesis needs a nonempty set")
    eta = eta or [ClassKFunction()] * sys.K
    alpha = alpha or WeightMatrix.uniform(sys.protected, sys.K)
    if rsi is None:
        rsi = compute_report(sys, backend=rsi_backend, with_oracle=False, shrink=shrink)
    cert = PolicyCertificate(PolicyStatus.FEASIBLE, alpha=alpha, eta=list(eta), rsi=rsi,
                             shrink=dict(shrink or {}))
    for i in sorted(sys.protected):
        entry = synthesize_policy(sys, rsi, i, eta, alpha, policy_degree,
                                  multiplier_degree, shrink=shrink, options=options)
        cert.entries[i] = entry
        if entry.status is not PolicyStatus.FEASIBLE:
            cert.status = PolicyStatus.INFEASIBLE
            cert.message = f"sub-system {i}: {entry.message}"
    return cert


# -- local-constraint (translated) synthesis ----------------------------------------


def local_constraint_mode(sys: InterconnectedSystem, k: int,
                          eta: ClassKFunction) -> LocalConstraint:
    """Translate a constraint local to a vulnerable sub-system into direct conditions.

    h^k must depend only on one vulnerable sub-system's states.  The barrier
    condition of h^k is instantiated at every corner of that sub-system's
    input box (the condition is affine in the input, so corners are exact).
    """
    h = sys.safety[k]
    hvars = h.variables()
    owners = {i for i in range(sys.N)
              if hvars & set(sys.state_vars(i))}
    if len(owners) != 1:
        raise NotApplicable(f"h{k} is not local to a single sub-system")
    (i,) = owners
    if i not in sys.vulnerable:
        raise NotApplicable(f"h{k} is local to protected sub-system {i}; "
                            "its index contributions vanish and no translation is needed")
    s = sys.subsystems[i]
    scope = frozenset(sys.state_vars())
    corners = list(itertools.product(*[sorted(b) for b in s.input_box]))
    conditions = []
    for corner in corners:
        flow_terms = Polynomial.zero(scope)
        for z in range(s.n):
            xv = xvar(sys.x_offset[i] + z)
            dh = h.with_scope(scope).differentiate(xv)
            if dh.is_zero():
                continue
            drift = s.f_slf[z].with_scope(scope) + s.f_cpl[z].with_scope(scope)
            gain = Polynomial.zero(scope)
            for j in range(s.r):
                gz = s.g_slf[z, j].with_scope(scope)
                if s.g_cpl is not None:
                    gz = gz + s.g_cpl[z, j].with_scope(scope)
                gain = gain + gz.scale(corner[j])
            flow_terms = flow_terms + dh * (drift + gain)
        conditions.append((corner, flow_terms + eta.of_poly(h.with_scope(scope))))
    return LocalConstraint(k, i, eta, conditions)


def _dedupe_domain(entries):
    """Drop domain polynomials that duplicate an earlier one up to positive scale."""
    kept = []

    def signature(p):
        items = sorted(p.terms.items(), key=lambda kv: kv[0].sort_key())
        if not items:
            return ()
        scale = items[-1][1]
        return tuple((m, round(c / scale, 9)) for m, c in items) if scale > 0 else None

    seen = set()
    for g, deg in entries:
        sig = signature(g)
        if sig is not None and sig in seen:
            continue
        if sig is not None:
            seen.add(sig)
        kept.append((g, deg))
    return kept


def _envelope_rooms(sys: InterconnectedSystem, barrier: Polynomial) -> set[int]:
    """Protected sub-systems whose inputs enter the barrier's flow."""
    out = set()
    scope = frozenset(sys.state_vars())
    b = barrier.with_scope(scope)
    for i in sorted(sys.protected):
        s = sys.subsystems[i]
        for z in range(s.n):
            db = b.differentiate(xvar(sys.x_offset[i] + z))
            if db.is_zero():
                continue
            for j in range(s.r):
                gz = s.g_slf[z, j].with_scope(scope)
                if s.g_cpl is not None:
                    gz = gz + s.g_cpl[z, j].with_scope(scope)
                if not (db * gz).is_zero():
                    out.add(i)
    return out


def synthesize_with_locals(sys: InterconnectedSystem, rsi: RsiReport,
                           locals_: list[LocalConstraint],
                           envelope: list[Polynomial],
                           envelope_eta: ClassKFunction,
                           eta: list[ClassKFunction],
                           alpha: WeightMatrix | None = None,
                           policy_degree: int = 1, multiplier_degree: int = 2,
                           options: SdpOptions | None = None) -> PolicyCertificate:
    """Synthesis with translated constraints and an operating envelope.

    The operating domain is the safe set intersected with the envelope and
    bounding box.  The translated corner conditions involve no protected
    inputs, so they are certified once as a static feasibility program; the
    envelope polynomials are kept invariant by barrier conditions on the
    protected inputs; the remaining constraints get their standard certified
    inequalities.  Sub-systems that share no envelope polynomial solve in
    independent programs.
    """
    if not sys.protected:
        raise ValueError("no protected sub-systems")
    alpha = alpha or WeightMatrix.uniform(sys.protected, sys.K)
    local_ks = {lc.k for lc in locals_}

    extra = list(envelope) + [cond for lc in locals_ for _, cond in lc.corner_conditions]
    scaled_all, mapping, meta = _normalization(sys, extra_polys=extra)
    scaled_h = scaled_all[:sys.K]
    scaled_env = scaled_all[sys.K:sys.K + len(envelope)]
    scaled_local = scaled_all[sys.K + len(envelope):]

    domain = [(h, multiplier_degree) for h in scaled_h]
    domain += [(e, multiplier_degree) for e in scaled_env]
    domain += [(b, multiplier_degree) for b in _state_box_polys_normalized(meta)]
    domain = _dedupe_domain(domain)

    cert = PolicyCertificate(PolicyStatus.FEASIBLE, alpha=alpha, eta=list(eta), rsi=rsi,
                             mode="local", locals=locals_, envelope=list(envelope),
                             envelope_eta=envelope_eta)
    state_vars = sorted(v for v in meta if v.ns == "x")
    inv = _inverse_scale_map({v: meta[v] for v in meta if v.ns == "x"})
    shared_certs: dict[str, SosCertificate] = {}

    # static program: translated corner conditions over the operating domain
    static = SosProgram()
    pos = 0
    env_rooms = {e_idx: _envelope_rooms(sys, e) for e_idx, e in enumerate(envelope)}
    for lc in locals_:
        for corner, _ in lc.corner_conditions:
            static.add_sos(ParamPoly.from_poly(scaled_local[pos]), domain=domain,
                           label=f"local_k{lc.k}_{'_'.join(f'{c:g}' for c in corner)}")
            pos += 1
    if static.constraints:
        sol0 = static.solve(options)
        if sol0.status is not SdpStatus.OPTIMAL:
            status = (PolicyStatus.INFEASIBLE
                      if sol0.status in (SdpStatus.INFEASIBLE, SdpStatus.UNBOUNDED)
                      else PolicyStatus.ERROR)
            cert.status = status
            cert.message = ("translated local constraint cannot hold on the "
                            f"operating domain ({sol0.status.value})")
            return cert
        shared_certs.update(sol0.certificates)

    # group protected sub-systems that share an envelope polynomial
    groups: list[set[int]] = [{i} for i in sorted(sys.protected)]

    def merge(rooms):
        rooms = set(rooms)
        touched = [g for g in groups if g & rooms]
        for g in touched:
            groups.remove(g)
        groups.append(set().union(rooms, *touched) if touched else rooms)

    for e_idx, rooms in env_rooms.items():
        if rooms:
            merge(rooms)

    for group in sorted(groups, key=min):
        prog = SosProgram()
        taus = {i: _policy_templates(prog, sys, i, policy_degree, state_vars)
                for i in sorted(group)}
        n_constraints = 0
        for k in range(sys.K):
            if k in local_ks:
                continue
            for i in sorted(group):
                lie = _lie_with_policy(sys, i, k, taus[i], mapping)
                rhs_const = alpha(i, k) * (rsi.beta_value(k) + rsi.gamma_sum(k, sys.vulnerable))
                margin = eta[k].of_poly(scaled_h[k]).scale(alpha(i, k)) + rhs_const
                composite = lie + ParamPoly.from_poly(margin)
                if not composite.terms:
                    continue
                prog.add_sos(composite, domain=domain, label=f"mr_i{i}_k{k}")
                n_constraints += 1
        for e_idx, (e_orig, e_scaled) in enumerate(zip(envelope, scaled_env)):
            rooms = env_rooms[e_idx]
            if rooms and not rooms <= group:
                continue
            if not rooms and min(group) != min(sys.protected):
                continue  # policy-free envelopes certify once, with the first group
            flow = _barrier_flow(sys, e_orig, taus, mapping) \
                + ParamPoly.from_poly(envelope_eta.of_poly(e_scaled))
            for c_idx, corner_expr in enumerate(_vulnerable_corner_instances(sys, flow)):
                prog.add_sos(corner_expr, domain=domain, label=f"env{e_idx}_c{c_idx}")
                n_constraints += 1
        for i in sorted(group):
            for j, (lo, hi) in enumerate(sys.subsystems[i].input_box):
                prog.add_sos(taus[i][j] - lo, domain=domain, label=f"box_lo_{i}_{j}")
                prog.add_sos((-taus[i][j]) + hi, domain=domain, label=f"box_hi_{i}_{j}")

        sol = prog.solve(options)
        if sol.status is not SdpStatus.OPTIMAL:
            status = (PolicyStatus.INFEASIBLE
                      if sol.status in (SdpStatus.INFEASIBLE, SdpStatus.UNBOUNDED)
                      else PolicyStatus.ERROR)
            cert.status = status
            cert.message = (f"synthesis for sub-systems {sorted(group)} ended with "
                            f"{sol.status.value}")
            for i in sorted(group):
                cert.entries[i] = PolicyEntry(i, status, message=cert.message)
            continue
        for i in sorted(group):
            policies = [taus[i][j].instantiate(sol.params).compose(inv)
                        for j in range(sys.subsystems[i].r)]
            certs = dict(shared_certs)
            certs.update(sol.certificates)
            cert.entries[i] = PolicyEntry(i, PolicyStatus.FEASIBLE, policies, certs)
    return cert


def _barrier_flow(sys: InterconnectedSystem, barrier: Polynomial, taus, mapping) -> ParamPoly:
    """grad(barrier) . F(x, u) with protected inputs replaced by templates.

    Vulnerable inputs stay symbolic; the caller instantiates them at corners.
    """
    scope = frozenset(sys.state_vars()) | frozenset(sys.input_vars())
    total = ParamPoly({}, scope)
    b = barrier.with_scope(scope)
    for i, s in enumerate(sys.subsystems):
        for z in range(s.n):
            xv = xvar(sys.x_offset[i] + z)
            db = b.differentiate(xv)
            if db.is_zero():
                continue
            db = db.compose(mapping)
            drift = (s.f_slf[z].with_scope(scope) + s.f_cpl[z].with_scope(scope)).compose(mapping)
            total = total + ParamPoly.from_poly(db * drift)
            for j in range(s.r):
                gz = s.g_slf[z, j].with_scope(scope)
                if s.g_cpl is not None:
                    gz = gz + s.g_cpl[z, j].with_scope(scope)
                gz = gz.compose(mapping)
                if i in sys.protected:
                    total = total + taus[i][j].mul_poly(db * gz)
                else:
                    uv = Polynomial.variable(uvar(sys.u_offset[i] + j), scope)
                    total = total + ParamPoly.from_poly(db * gz * uv)
    return total


def _vulnerable_corner_instances(sys: InterconnectedSystem, expr: ParamPoly):
    """Instantiate remaining vulnerable input variables at their box corners."""
    uvars = sorted(v for v in expr.variables() if v.ns == "u")
    if not uvars:
        return [expr]
    bounds = {}
    for i in sorted(sys.vulnerable):
        bounds.update(sys.input_bounds(i))
    corners = itertools.product(*[sorted(bounds[v]) for v in uvars])
    out = []
    for corner in corners:
        inst = expr
        for v, val in zip(uvars, corner):
            inst = _parampoly_substitute(inst, v, val)
        out.append(inst)
    return out


def _parampoly_substitute(expr: ParamPoly, v: Var, value: float) -> ParamPoly:
    terms = {}
    for m, (c, lin) in expr.terms.items():
        e = m.degree_of(v)
        if e:
            rest = {w: k for w, k in m.exps if w != v}
            m2 = Monomial(rest)
            scale = value ** e
        else:
            m2, scale = m, 1.0
        c0, l0 = terms.get(m2, (0.0, {}))
        c0 += c * scale
        for kk, vv in lin.items():
            l0[kk] = l0.get(kk, 0.0) + vv * scale
        terms[m2] = (c0, l0)
    return ParamPoly(terms, expr.scope - {v})


# -- runtime min-norm filter ----------------------------------------------------


class QpFilterInfeasible(RuntimeError):
    def __init__(self, message, constraint=None):
        super().__init__(message)
        self.constraint = constraint


def _lie_rows(sys: InterconnectedSystem, i: int, k: int, x: np.ndarray):
    """Affine form c0 + c' u_i of grad_i h^k . F_i at the state x."""
    s = sys.subsystems[i]
    pt = sys.state_point(x)
    c0 = 0.0
    c = np.zeros(s.r)
    h = sys.safety[k].with_scope(frozenset(sys.state_vars()))
    for z in range(s.n):
        xv = xvar(sys.x_offset[i] + z)
        dh = h.differentiate(xv)
        if dh.is_zero():
            continue
        dhv = dh.evaluate({v: pt[v] for v in dh.scope})
        drift = s.f_slf[z].evaluate({v: pt[v] for v in s.f_slf[z].scope}) \
            + s.f_cpl[z].evaluate({v: pt[v] for v in s.f_cpl[z].scope})
        c0 += dhv * drift
        for j in range(s.r):
            gz = s.g_slf[z, j].evaluate({v: pt[v] for v in s.g_slf[z, j].scope})
            if s.g_cpl is not None:
                gz += s.g_cpl[z, j].evaluate({v: pt[v] for v in s.g_cpl[z, j].scope})
            c[j] += dhv * gz
    return c0, c


def qp_filter(sys: InterconnectedSystem, rsi: RsiReport, eta: list[ClassKFunction],
              alpha: WeightMatrix | None, x: np.ndarray,
              alpha_as_variables: bool = False,
              warn_outside: bool = True) -> dict[int, np.ndarray]:
    """Min-norm inputs for the protected sub-systems at one state.

    Solves, per protected i (or jointly when the weights are decision
    variables), min ||u_i||^2 subject to the per-constraint inequality and
    the input box.  Raises QpFilterInfeasible naming the violated constraint
    when no input works at this state.
    """
    x = np.asarray(x, dtype=float)
    hvals = [h.evaluate({v: val for v, val in sys.state_point(x).items() if v in h.scope})
             for h in sys.safety]
    if warn_outside and min(hvals) < -1e-9:
        import warnings
        warnings.warn(f"state outside the safe set (min h = {min(hvals):.3g})", stacklevel=2)

    demand = [rsi.beta_value(k) + rsi.gamma_sum(k, sys.vulnerable) for k in range(sys.K)]

    if not alpha_as_variables:
        alpha = alpha or WeightMatrix.uniform(sys.protected, sys.K)
        out = {}
        for i in sorted(sys.protected):
            s = sys.subsystems[i]
            G, hh = [], []
            for k in range(sys.K):
                c0, c = _lie_rows(sys, i, k, x)
                rhs = alpha(i, k) * (-eta[k](hvals[k]) - demand[k])
                if np.allclose(c, 0.0):
                    if c0 < rhs - 1e-9:
                        raise QpFilterInfeasible(
                            f"constraint {k} unsatisfiable at this state for "
                            f"sub-system {i} (no input authority)", constraint=k)
                    continue
                G.append(c)
                hh.append(rhs - c0)
            for j, (lo, hi) in enumerate(s.input_box):
                e = np.zeros(s.r)
                e[j] = 1.0
                G.append(e.copy())
                hh.append(lo)
                G.append(-e)
                hh.append(-hi)
            sol = solve_qp(QpProblem(P=2 * np.eye(s.r), q=np.zeros(s.r),
                                     G=np.array(G), h=np.array(hh)))
            if sol.status is not QpStatus.OPTIMAL:
                k_bad = _most_violated(sys, i, x, hvals, eta, alpha, demand)
                raise QpFilterInfeasible(
                    f"runtime filter infeasible at x={x.tolist()} "
                    f"(sub-system {i}, constraint {k_bad})", constraint=k_bad)
            out[i] = sol.z
        return out

    # joint QP with the weights as decision variables
    prot = sorted(sys.protected)
    r_tot = sum(sys.subsystems[i].r for i in prot)
    na = len(prot) * sys.K
    n = r_tot + na

    def a_pos(ii, k):
        return r_tot + ii * sys.K + k

    u_off = {}
    pos = 0
    for i in prot:
        u_off[i] = pos
        pos += sys.subsystems[i].r
    P = np.zeros((n, n))
    P[:r_tot, :r_tot] = 2 * np.eye(r_tot)
    G, hh = [], []
    for ii, i in enumerate(prot):
        for k in range(sys.K):
            c0, c = _lie_rows(sys, i, k, x)
            row = np.zeros(n)
            row[u_off[i]:u_off[i] + sys.subsystems[i].r] = c
            row[a_pos(ii, k)] = eta[k](hvals[k]) + demand[k]
            G.append(row)
            hh.append(-c0)
            bound = np.zeros(n)
            bound[a_pos(ii, k)] = 1.0
            G.append(bound.copy())
            hh.append(0.0)
            G.append(-bound)
            hh.append(-1.0)
        for j, (lo, hi) in enumerate(sys.subsystems[i].input_box):
            e = np.zeros(n)
            e[u_off[i] + j] = 1.0
            G.append(e.copy())
            hh.append(lo)
            G.append(-e)
            hh.append(-hi)
    A, b = [], []
    for k in range(sys.K):
        row = np.zeros(n)
        for ii in range(len(prot)):
            row[a_pos(ii, k)] = 1.0
        A.append(row)
        b.append(1.0)
    sol = solve_qp(QpProblem(P=P, q=np.zeros(n), G=np.array(G), h=np.array(hh),
                             A=np.array(A), b=np.array(b)))
    if sol.status is not QpStatus.OPTIMAL:
        raise QpFilterInfeasible(f"joint runtime filter infeasible at x={x.tolist()}")
    return {i: sol.z[u_off[i]:u_off[i] + sys.subsystems[i].r] for i in prot}


def _most_violated(sys, i, x, hvals, eta, alpha, demand):
    worst, kbad = -np.inf, 0
    for k in range(sys.K):
        c0, c = _lie_rows(sys, i, k, x)
        rhs = alpha(i, k) * (-eta[k](hvals[k]) - demand[k])
        best = c0
        s = sys.subsystems[i]
        for corner in itertools.product(*[b for b in s.input_box]):
            best = max(best, c0 + float(np.dot(c, corner)))
        gap = rhs - best
        if gap > worst:
            worst, kbad = gap, k
    return kbad


# -- shrink sweep ------------------------------------------------------------------


@dataclass
class SweepResult:
    k: int
    c_k: float
    iterations: int
    feasible: bool
    shrunk: bool
    cbar: float
    certificate: PolicyCertificate | None = None

    @property
    def status(self) -> str:
        if self.feasible:
            return "Feasible"
        return "NotFeasibleOnAnyShrunkSet"


def ck_sweep(sys: InterconnectedSystem, k: int, epsilon: float,
             eta: list[ClassKFunction] | None = None,
             alpha: WeightMatrix | None = None,
             policy_degree: int = 1, multiplier_degree: int = 2,
             rsi_backend: str = "sos",
             options: SdpOptions | None = None) -> SweepResult:
    """Raise the level c_k of {h_k >= c_k} until synthesis certifies.

    Levels run from 0 in steps of epsilon while strictly below the sampled
    maximum of h_k over the bounding box, so at most ceil(cbar/epsilon)
    iterations happen before exhaustion is reported.
    """
    if epsilon <= 0:
        raise ValueError("sweep step must be positive")
    pts = sys.sampler.grid()
    xv = sys.state_vars()
    h = sys.safety[k]
    cbar = max(h.evaluate({v: val for v, val in zip(xv, p) if v in h.scope}) for p in pts)
    if cbar <= 0:
        raise ValueError(f"h{k} has no positive values over the bounding box")

    c = 0.0
    iterations = 0
    while c < cbar:
        iterations += 1
        shrink = {k: c} if c else None
        try:
            cert = run_algorithm1(sys, eta, alpha, policy_degree, multiplier_degree,
                                  rsi_backend=rsi_backend, shrink=shrink, options=options)
        except Exception:
            cert = None
        if cert is not None and cert.feasible:
            return SweepResult(k, c, iterations, True, c > 0, cbar, cert)
        c += epsilon
    return SweepResult(k, c, iterations, False, True, cbar, None)


# -- grid verification of certificates ------------------------------------------------


def verify_policy(sys: InterconnectedSystem, cert: PolicyCertificate,
                  resolution: int = 11) -> dict:
    """Grid checks on a certified policy: box membership and the certified
    inequalities (standard mode) or domain conditions (local mode)."""
    report = {"ok": True, "checks": []}

    def fail(name, detail):
        report["ok"] = False
        report["checks"].append((name, False, detail))

    def good(name, detail=""):
        report["checks"].append((name, True, detail))

    if cert.mode == "local" and cert.envelope:
        pts = _envelope_grid(sys, cert.envelope, resolution)
    else:
        pts = sys.safe_grid(resolution, shrink=cert.shrink or None)
    xv = sys.state_vars()

    for i, entry in cert.entries.items():
        if entry.status is not PolicyStatus.FEASIBLE:
            fail(f"entry{i}", "not feasible")
            continue
        s = sys.subsystems[i]
        worst_box, worst_channel = np.inf, 0
        for j, (lo, hi) in enumerate(s.input_box):
            tau = entry.policies[j]
            for p in pts:
                val = tau.evaluate({v: q for v, q in zip(xv, p) if v in tau.scope})
                slack = min(val - lo, hi - val)
                if slack < worst_box:
                    worst_box, worst_channel = slack, j
        if worst_box < -BOX_GRID_TOL:
            fail(f"box_membership_{i}",
                 f"channel {worst_channel} violates its bounds (slack {worst_box:.3g})")
        else:
            good(f"box_membership_{i}", f"worst slack {worst_box:.3g}")

    if cert.mode == "standard" and cert.rsi is not None:
        for i, entry in cert.entries.items():
            if entry.status is not PolicyStatus.FEASIBLE:
                continue
            worst = np.inf
            for k in range(sys.K):
                demand = cert.alpha(i, k) * (
                    -cert.rsi.beta_value(k) - cert.rsi.gamma_sum(k, sys.vulnerable))
                for p in pts:
                    pt = dict(zip(xv, p))
                    hv = sys.safety[k].evaluate(
                        {v: pt[v] for v in sys.safety[k].scope})
                    hv -= cert.shrink.get(k, 0.0)
                    u = np.array([tau.evaluate({v: pt[v] for v in tau.scope})
                                  for tau in entry.policies])
                    lhs_c0, lhs_c = _lie_rows(sys, i, k, p)
                    lhs = lhs_c0 + float(lhs_c @ u)
                    slack = lhs - (-cert.alpha(i, k) * cert.eta[k](hv) + demand)
                    worst = min(worst, slack)
            if worst < -MR_GRID_TOL:
                fail(f"certified_inequality_{i}", f"worst slack {worst:.3g}")
            else:
                good(f"certified_inequality_{i}", f"worst slack {worst:.3g}")

    if cert.mode == "local":
        for lc in cert.locals:
            worst = np.inf
            for _, cond in lc.corner_conditions:
                for p in pts:
                    val = cond.evaluate({v: q for v, q in zip(xv, p) if v in cond.scope})
                    worst = min(worst, val)
            if worst < -MR_GRID_TOL:
                fail(f"local_condition_k{lc.k}", f"worst value {worst:.3g}")
            else:
                good(f"local_condition_k{lc.k}", f"worst value {worst:.3g}")

    for label_i, entry in cert.entries.items():
        for label, c in entry.certificates.items():
            if c.residual > 1e-6 or c.min_eigenvalue < -1e-7:
                fail(f"certificate_{label_i}/{label}",
                     f"residual {c.residual:.3g}, min eig {c.min_eigenvalue:.3g}")
    return report


def _envelope_grid(sys, envelope, resolution):
    pts = sys.safe_grid(resolution)
    xv = sys.state_vars()
    keep = []
    for p in pts:
        ok = True
        for e in envelope:
            if e.evaluate({v: q for v, q in zip(xv, p) if v in e.scope}) < -1e-12:
                ok = False
                break
        if ok:
            keep.append(p)
    return np.array(keep) if keep else pts[:0]


def bisect_threshold(is_feasible, lo: float, hi: float, tol: float = 1e-3) -> float:
    """Smallest parameter value at which feasibility is lost, by bisection.

    ``is_feasible(lo)`` must hold and ``is_feasible(hi)`` must fail; the
    returned value is accurate to ``tol`` and the flip must be strict.
    """
    if not is_feasible(lo):
        raise ValueError(f"expected feasibility at the lower end {lo}")
    if is_feasible(hi):
        raise ValueError(f"expected infeasibility at the upper end {hi}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if is_feasible(mid):
            lo = mid
        else:
            hi = mid
    return hi
