"""Resilient-safety indices: worst-case Lie-derivative bounds per sub-system.

For a vulnerable sub-system i and constraint k, the intrinsic index gamma is
a certified lower bound of the self-dynamics Lie derivative of h^k over the
safe set times i's input box; the coupled index beta bounds the summed
coupled-dynamics contribution of all vulnerable sub-systems.  Four
interchangeable backends compute them:

* ``sos``       Gram/multiplier certificates via the SOS compiler (general).
* ``lp``        exact linear program for affine dynamics and linear h.
* ``monotone``  corner evaluation for componentwise-monotone integrands over
                a hyperrectangle safe set.
* ``grid``      brute-force sampling; an upper bound on the true infimum that
                sandwiches the certified lower bounds.

All backends work over the safe set intersected with the user-supplied
bounding box, so their values are mutually comparable.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .optim import LpProblem, LpStatus, SdpOptions, solve_lp
from .poly import Monomial, Polynomial, Var, uvar, xvar
from .sos import SosCertificate, SosInfeasibleError, solve_lower_bound
from .system import InterconnectedSystem

SANDWICH_TOL = 1e-5


class NotApplicable(Exception):
    """A backend's structural preconditions are not met."""


class RsiBackendError(RuntimeError):
    """A backend failed to produce a value (solver failure or infeasibility)."""


@dataclass
class RsiEntry:
    value: float
    backend: str
    certificate: SosCertificate | None = None
    vertex: np.ndarray | None = None
    flagged: str | None = None


@dataclass
class RsiReport:
    """Per-(sub-system, constraint) gamma entries and per-constraint betas."""

    gamma: dict[tuple[int, int], RsiEntry] = field(default_factory=dict)
    beta: dict[int, RsiEntry] = field(default_factory=dict)
    oracle_gamma: dict[tuple[int, int], float] = field(default_factory=dict)
    oracle_beta: dict[int, float] = field(default_factory=dict)

    def gamma_value(self, i: int, k: int) -> float:
        return self.gamma[(i, k)].value

    def beta_value(self, k: int) -> float:
        return self.beta[k].value

    def gamma_sum(self, k: int, vulnerable) -> float:
        return sum(self.gamma[(j, k)].value for j in sorted(vulnerable))

    def all_finite(self) -> bool:
        vals = [e.value for e in self.gamma.values()] + [e.value for e in self.beta.values()]
        return all(np.isfinite(v) for v in vals)

    def reconcile(self):
        """Flag entries whose certified bound exceeds the sampled minimum."""
        for key, entry in self.gamma.items():
            if key in self.oracle_gamma and entry.value > self.oracle_gamma[key] + SANDWICH_TOL:
                entry.flagged = (f"certified bound {entry.value:.6g} exceeds grid minimum "
                                 f"{self.oracle_gamma[key]:.6g}")
        for k, entry in self.beta.items():
            if k in self.oracle_beta and entry.value > self.oracle_beta[k] + SANDWICH_TOL:
                entry.flagged = (f"certified bound {entry.value:.6g} exceeds grid minimum "
                                 f"{self.oracle_beta[k]:.6g}")


# -- shared helpers -------------------------------------------------------------


def _state_box_polys(sys: InterconnectedSystem, needed: set[Var]) -> list[Polynomial]:
    out = []
    for j, (lo, hi) in enumerate(sys.sampler.box):
        v = xvar(j)
        if v in needed:
            p = Polynomial.variable(v)
            out.append((p - lo) * (hi - p))
    return out


def _sos_domain(sys, k, integrand, all_constraints, shrink=None):
    shrink = shrink or {}
    ks = range(sys.K) if all_constraints else range(k + 1)
    hs = [sys.safety[s] - shrink[s] if shrink.get(s) else sys.safety[s] for s in ks]
    needed = set(integrand.variables())
    for h in hs:
        needed |= h.variables()
    return hs + _state_box_polys(sys, needed)


def _trim(p: Polynomial) -> Polynomial:
    return Polynomial(p.terms, p.variables())


# -- SOS backend ----------------------------------------------------------------

# Tighter duality gap than the solver default so the reported bound cannot
# creep above the true infimum by more than the sandwich tolerance.
TIGHT = SdpOptions(abstol=1e-9, reltol=1e-9)


def normalize_to_unit_box(sys: InterconnectedSystem, polys, box):
    """Affine change of variables mapping every bounded axis onto [-1, 1].

    State bounds come from the system's bounding box, input bounds from
    ``box``.  Monomials of well-scaled variables keep O(1) magnitudes, which
    is what keeps the Gram matrices of the compiled SDPs well conditioned.
    Returns the transformed polynomials, the transformed input box, and the
    per-variable (center, halfwidth) map.
    """
    needed = set(box)
    for p in polys:
        needed |= p.variables()
    mapping, meta = {}, {}
    for v in sorted(needed):
        lo, hi = sys.sampler.box[v.idx] if v.ns == "x" else box[v]
        mid, half = (lo + hi) / 2.0, (hi - lo) / 2.0
        meta[v] = (mid, half)
        mapping[v] = Polynomial({Monomial(): mid, Monomial({v: 1}): half}, [v])
    scaled = [p.compose(mapping) for p in polys]
    return scaled, {v: (-1.0, 1.0) for v in box}, meta


def _bound_with_fallback(sys, integrand, domain, box, degree, options):
    (integrand, *domain), box, _ = normalize_to_unit_box(sys, [integrand] + domain, box)
    if options is not None:
        return solve_lower_bound(integrand, domain, box, degree, options)
    try:
        return solve_lower_bound(integrand, domain, box, degree, TIGHT)
    except SosInfeasibleError:
        return solve_lower_bound(integrand, domain, box, degree, SdpOptions())


def gamma_sos(sys: InterconnectedSystem, i: int, k: int, degree: int = 2,
              all_constraints: bool = False, shrink=None,
              options: SdpOptions | None = None) -> tuple[float, SosCertificate]:
    """Certified lower bound of the self-dynamics Lie derivative (intrinsic index)."""
    if i not in sys.vulnerable:
        raise ValueError(f"sub-system {i} is not in the vulnerable set")
    integrand = _trim(sys.lie_self(i, k))
    if integrand.is_zero():
        return 0.0, None
    domain = _sos_domain(sys, k, integrand, all_constraints, shrink)
    box = {v: b for v, b in sys.input_bounds(i).items() if v in integrand.variables()}
    try:
        return _bound_with_fallback(sys, integrand, domain, box, degree, options)
    except SosInfeasibleError as exc:
        raise RsiBackendError(
            f"gamma({i},{k}) SOS program failed ({exc.status.value}); "
            "try a higher multiplier degree") from exc


def beta_sos(sys: InterconnectedSystem, k: int, degree: int = 2,
             all_constraints: bool = False, shrink=None,
             options: SdpOptions | None = None) -> tuple[float, SosCertificate]:
    """Certified lower bound of the vulnerable coupled-dynamics sum (coupled index)."""
    integrand = _trim(sys.lie_coupled_sum(k, sys.vulnerable))
    if integrand.is_zero():
        return 0.0, None
    domain = _sos_domain(sys, k, integrand, all_constraints, shrink)
    box = {}
    for i in sorted(sys.vulnerable):
        for v, b in sys.input_bounds(i).items():
            if v in integrand.variables():
                box[v] = b
    try:
        return _bound_with_fallback(sys, integrand, domain, box, degree, options)
    except SosInfeasibleError as exc:
        raise RsiBackendError(
            f"beta({k}) SOS program failed ({exc.status.value}); "
            "try a higher multiplier degree") from exc


# -- LP backend (affine dynamics, linear constraints) ----------------------------


def _linear_coeffs(p: Polynomial, variables: list[Var]):
    """Split an affine polynomial into (coefficient vector, constant)."""
    if p.degree() > 1:
        raise NotApplicable("integrand is not affine")
    c = np.zeros(len(variables))
    const = p.coefficient(Monomial())
    pos = {v: idx for idx, v in enumerate(variables)}
    for m, coef in p.terms.items():
        if m == Monomial():
            continue
        (v, e), = m.exps
        if v not in pos:
            raise NotApplicable(f"unexpected variable {v} in affine integrand")
        c[pos[v]] = coef
    return c, const


def _require_lti(sys: InterconnectedSystem, k: int):
    for s in sys.subsystems:
        for z in range(s.n):
            if s.f_slf[z].degree() > 1 or s.f_cpl[z].degree() > 1:
                raise NotApplicable("dynamics are not affine")
            for j in range(s.r):
                if s.g_slf[z, j].degree() > 0:
                    raise NotApplicable("input matrix is not constant")
                if s.g_cpl is not None and s.g_cpl[z, j].degree() > 0:
                    raise NotApplicable("input matrix is not constant")
    for h in sys.safety:
        if h.degree() > 1 or abs(h.coefficient(Monomial())) > 1e-12:
            raise NotApplicable("safety functions must be half-planes a'x >= 0")


def _lp_rows(sys: InterconnectedSystem, variables, input_ids, half_planes):
    """Constraint rows A z >= b over z = [states..., selected inputs...]."""
    rows, rhs = [], []
    nvars = len(variables)
    pos = {v: idx for idx, v in enumerate(variables)}
    for h in sys.safety:
        c, const = _linear_coeffs(h.with_scope(set(sys.state_vars())), sys.state_vars())
        row = np.zeros(nvars)
        for idx, v in enumerate(sys.state_vars()):
            row[pos[v]] = c[idx]
        rows.append(row)
        rhs.append(-const)
    for j, (lo, hi) in enumerate(sys.sampler.box):
        row = np.zeros(nvars)
        row[pos[xvar(j)]] = 1.0
        rows.append(row.copy())
        rhs.append(lo)
        rows.append(-row)
        rhs.append(-hi)
    for i in sorted(input_ids):
        for v, (lo, hi) in sys.input_bounds(i).items():
            row = np.zeros(nvars)
            row[pos[v]] = 1.0
            rows.append(row.copy())
            rhs.append(lo)
            rows.append(-row)
            rhs.append(-hi)
        if half_planes:
            for w in half_planes.get(i, []):
                row = np.zeros(nvars)
                for j, v in enumerate(sys.input_vars(i)):
                    row[pos[v]] = w[j]
                rows.append(row)
                rhs.append(0.0)
    return np.array(rows), np.array(rhs)


def _lp_minimize(sys, integrand, input_ids, half_planes):
    variables = sys.state_vars() + [v for i in sorted(input_ids) for v in sys.input_vars(i)]
    c, const = _linear_coeffs(integrand.with_scope(set(variables)), variables)
    A, b = _lp_rows(sys, variables, input_ids, half_planes)
    sol = solve_lp(LpProblem(c=c, A=A, b=b))
    if sol.status is not LpStatus.OPTIMAL:
        raise RsiBackendError(f"LP backend failed with status {sol.status.value}")
    return sol.optimum + const, sol


def gamma_lp(sys: InterconnectedSystem, i: int, k: int, half_planes=None):
    """Exact intrinsic index by linear programming (affine systems, linear h)."""
    _require_lti(sys, k)
    integrand = _trim(sys.lie_self(i, k))
    if integrand.is_zero():
        return 0.0, None
    value, sol = _lp_minimize(sys, integrand, [i], half_planes)
    return value, sol


def beta_lp(sys: InterconnectedSystem, k: int, half_planes=None):
    _require_lti(sys, k)
    integrand = _trim(sys.lie_coupled_sum(k, sys.vulnerable))
    if integrand.is_zero():
        return 0.0, None
    value, sol = _lp_minimize(sys, integrand, sorted(sys.vulnerable), half_planes)
    return value, sol


# -- monotone backend -------------------------------------------------------------


def monotone_box_minimum(p: Polynomial, box: dict[Var, tuple[float, float]],
                         samples: int = 11):
    """Minimum of a componentwise-monotone function over a box.

    Each partial derivative must keep one sign over the box; the sign is read
    symbolically for constant partials and sampled on a grid otherwise.  The
    minimizing corner takes the lower end where the function is nondecreasing
    and the upper end where it is nonincreasing.
    """
    corner = {}
    for v in sorted(p.variables()):
        if v not in box:
            raise NotApplicable(f"no bounds for variable {v}")
        partial = _trim(p.differentiate(v))
        if partial.is_zero():
            corner[v] = box[v][0]
            continue
        if partial.degree() == 0:
            sign = np.sign(partial.coefficient(Monomial()))
        else:
            pvars = sorted(partial.variables())
            axes = [np.linspace(*box[w], samples) for w in pvars]
            vals = np.array([partial.evaluate(dict(zip(pvars, pt)))
                             for pt in itertools.product(*axes)])
            if (vals >= -1e-9).all():
                sign = 1.0
            elif (vals <= 1e-9).all():
                sign = -1.0
            else:
                raise NotApplicable(f"partial derivative in {v} changes sign over the box")
        corner[v] = box[v][0] if sign >= 0 else box[v][1]
    # variables of the box not appearing in p do not affect the value
    value = p.evaluate({**{v: lohi[0] for v, lohi in box.items()}, **corner})
    return value, corner


def _monotone_box(sys: InterconnectedSystem, input_ids) -> dict[Var, tuple[float, float]]:
    box = {xvar(j): b for j, b in enumerate(sys.sampler.box)}
    for i in sorted(input_ids):
        box.update(sys.input_bounds(i))
    return box


def _require_box_safe_set(sys: InterconnectedSystem):
    """The corner lemma needs the safe set to coincide with the bounding box."""
    pts = sys.sampler.grid(5)
    xv = sys.state_vars()
    for h in sys.safety:
        vals = [h.evaluate({v: val for v, val in zip(xv, p) if v in h.scope} | {
            v: 0.0 for v in h.scope if v not in xv}) for p in pts]
        if min(vals) < -1e-9:
            raise NotApplicable("safe set is not the bounding hyperrectangle")


def gamma_monotone(sys: InterconnectedSystem, i: int, k: int):
    _require_box_safe_set(sys)
    integrand = _trim(sys.lie_self(i, k))
    if integrand.is_zero():
        return 0.0
    value, _ = monotone_box_minimum(integrand, _monotone_box(sys, [i]))
    return value


def beta_monotone(sys: InterconnectedSystem, k: int):
    _require_box_safe_set(sys)
    integrand = _trim(sys.lie_coupled_sum(k, sys.vulnerable))
    if integrand.is_zero():
        return 0.0
    value, _ = monotone_box_minimum(integrand, _monotone_box(sys, sorted(sys.vulnerable)))
    return value


# -- grid oracle ------------------------------------------------------------------


def _input_grid(bounds: list[tuple[float, float]], interior: int = 3):
    """Box corners plus a coarse interior grid, lexicographically ordered.

    Integrands are affine in each input, so extrema live at corners; the
    interior points only guard against modeling mistakes.
    """
    axes = []
    for lo, hi in bounds:
        pts = sorted(set(np.linspace(lo, hi, max(2, interior)).tolist()) | {lo, hi})
        axes.append(pts)
    return [np.array(pt) for pt in itertools.product(*axes)]


def grid_oracle(sys: InterconnectedSystem, target: tuple, resolution: int = 11,
                shrink=None):
    """Sampled minimum of an index integrand; upper bound on the true infimum.

    ``target`` is ("gamma", i, k) or ("beta", k).  Ties break toward the
    lexicographically smallest grid point.
    """
    if target[0] == "gamma":
        _, i, k = target
        integrand = _trim(sys.lie_self(i, k))
        input_ids = [i]
    elif target[0] == "beta":
        _, k = target
        integrand = _trim(sys.lie_coupled_sum(k, sys.vulnerable))
        input_ids = sorted(sys.vulnerable)
    else:
        raise ValueError(f"unknown oracle target {target!r}")

    pts = sys.safe_grid(resolution, shrink=shrink)
    if len(pts) == 0:
        raise RsiBackendError(
            "no grid point lies inside the safe set; increase the resolution")
    used_inputs = [v for v in integrand.variables() if v.ns == "u"]
    bounds = []
    for i in input_ids:
        for v, b in sys.input_bounds(i).items():
            if v in used_inputs:
                bounds.append((v, b))
    ugrid = _input_grid([b for _, b in bounds]) if bounds else [np.zeros(0)]

    xv = sys.state_vars()
    best = (np.inf, None, None)
    for p in pts:
        base = {v: val for v, val in zip(xv, p)}
        for uu in ugrid:
            point = dict(base)
            for (v, _), val in zip(bounds, uu):
                point[v] = val
            val = integrand.evaluate({v: point[v] for v in integrand.scope})
            if val < best[0] - 1e-15:
                best = (val, p.copy(), uu.copy())
    return best


# -- report assembly ---------------------------------------------------------------


BACKENDS = ("sos", "lp", "monotone", "grid", "auto")


def compute_report(sys: InterconnectedSystem, backend: str = "sos", degree: int = 2,
                   with_oracle: bool = True, resolution: int = 11,
                   shrink=None, options: SdpOptions | None = None) -> RsiReport:
    """Gamma for every (vulnerable i, k) and beta for every k, plus oracle bounds.

    ``shrink`` raises safety levels to {h_k >= c_k}; only the sos and grid
    backends support it.
    """
    if backend not in BACKENDS:
        raise ValueError(f"unknown backend {backend!r}")
    if shrink and backend in ("lp", "monotone"):
        raise NotApplicable(f"the {backend} backend does not support shrunken safe sets")
    report = RsiReport()

    def one_gamma(i, k):
        if backend == "grid":
            val, _, _ = grid_oracle(sys, ("gamma", i, k), resolution, shrink=shrink)
            return RsiEntry(val, "grid")
        if backend == "lp":
            val, sol = gamma_lp(sys, i, k)
            return RsiEntry(val, "lp", vertex=None if sol is None else sol.z)
        if backend == "monotone":
            return RsiEntry(gamma_monotone(sys, i, k), "monotone")
        if backend == "sos":
            val, cert = gamma_sos(sys, i, k, degree, shrink=shrink, options=options)
            return RsiEntry(val, "sos", certificate=cert)
        for candidate in ("monotone", "lp", "sos"):
            try:
                entry = compute_single(sys, candidate, ("gamma", i, k), degree, options)
                return entry
            except NotApplicable:
                continue
        raise RsiBackendError(f"no backend applicable for gamma({i},{k})")

    def one_beta(k):
        if backend == "grid":
            val, _, _ = grid_oracle(sys, ("beta", k), resolution, shrink=shrink)
            return RsiEntry(val, "grid")
        if backend == "lp":
            val, sol = beta_lp(sys, k)
            return RsiEntry(val, "lp", vertex=None if sol is None else sol.z)
        if backend == "monotone":
            return RsiEntry(beta_monotone(sys, k), "monotone")
        if backend == "sos":
            val, cert = beta_sos(sys, k, degree, shrink=shrink, options=options)
            return RsiEntry(val, "sos", certificate=cert)
        for candidate in ("monotone", "lp", "sos"):
            try:
                return compute_single(sys, candidate, ("beta", k), degree, options)
            except NotApplicable:
                continue
        raise RsiBackendError(f"no backend applicable for beta({k})")

    for k in range(sys.K):
        for i in sorted(sys.vulnerable):
            report.gamma[(i, k)] = one_gamma(i, k)
        report.beta[k] = one_beta(k)

    if with_oracle and backend != "grid":
        for k in range(sys.K):
            for i in sorted(sys.vulnerable):
                val, _, _ = grid_oracle(sys, ("gamma", i, k), resolution, shrink=shrink)
                report.oracle_gamma[(i, k)] = val
            val, _, _ = grid_oracle(sys, ("beta", k), resolution, shrink=shrink)
            report.oracle_beta[k] = val
        report.reconcile()
    return report


def compute_single(sys, backend, target, degree=2, options=None) -> RsiEntry:
    """One entry through one named backend (used by the auto cascade)."""
    if target[0] == "gamma":
        _, i, k = target
        if backend == "monotone":
            return RsiEntry(gamma_monotone(sys, i, k), "monotone")
        if backend == "lp":
            val, sol = gamma_lp(sys, i, k)
            return RsiEntry(val, "lp", vertex=None if sol is None else sol.z)
        val, cert = gamma_sos(sys, i, k, degree, options=options)
        return RsiEntry(val, "sos", certificate=cert)
    _, k = target
    if backend == "monotone":
        return RsiEntry(beta_monotone(sys, k), "monotone")
    if backend == "lp":
        val, sol = beta_lp(sys, k)
        return RsiEntry(val, "lp", vertex=None if sol is None else sol.z)
    val, cert = beta_sos(sys, k, degree, options=options)
    return RsiEntry(val, "sos", certificate=cert)
