"""Sum-of-squares constraint compilation and certificate checking.

The central object is :class:`SosProgram`: a set of constraints of the form

    expr(z; params)  -  sum_g  sigma_g(z) * g(z)   is SOS,

where ``expr`` is a polynomial whose coefficients may depend affinely on
named scalar parameters (a lower bound gamma, policy coefficients, ...), the
``g`` are fixed domain polynomials (safety functions, box constraints), and
every ``sigma_g`` is an unknown SOS multiplier of bounded degree.  Each SOS
polynomial is parameterized by a Gram matrix over a monomial basis; matching
coefficients monomial by monomial yields linear equality constraints, so the
whole program compiles into one block-diagonal :class:`SdpProblem`.

Gram bases are pruned with the Newton-polytope test: a basis monomial m is
kept only if 2m lies in the convex hull of the candidate support.  This is
sound because the support of the matched composite is contained in the
candidate support regardless of parameter values.

Certificates are verified independently of the solve path: the Gram products
are expanded back into polynomials and compared coefficient-wise against the
instantiated composite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .optim import LinFunc, SdpOptions, SdpProblem, SdpSolution, SdpStatus, solve_sdp
from .poly import ONE, Monomial, Polynomial, Var, monomial_basis

ACCEPT_RESIDUAL = 1e-6
GRAM_EIG_FLOOR = -1e-7


class ParamPoly:
    """Polynomial whose coefficients are affine in named scalar parameters."""

    __slots__ = ("terms", "scope")

    def __init__(self, terms, scope):
        # terms: {Monomial: (const, {param: coef})}
        clean = {}
        for m, (c0, lin) in terms.items():
            lin = {k: float(v) for k, v in lin.items() if abs(v) > 1e-15}
            c0 = float(c0)
            if abs(c0) > 1e-15 or lin:
                clean[m] = (c0, lin)
        self.terms = clean
        self.scope = frozenset(scope)

    @staticmethod
    def from_poly(p: Polynomial) -> "ParamPoly":
        return ParamPoly({m: (c, {}) for m, c in p.terms.items()}, p.scope)

    @staticmethod
    def parameter(name: str, scope=()) -> "ParamPoly":
        return ParamPoly({ONE: (0.0, {name: 1.0})}, scope)

    @staticmethod
    def template(prefix: str, basis, scope) -> tuple["ParamPoly", list[str]]:
        """Unknown polynomial sum_k param_k * basis_k with fresh parameter names."""
        terms = {}
        names = []
        for k, m in enumerate(basis):
            name = f"{prefix}[{k}]"
            names.append(name)
            terms[m] = (0.0, {name: 1.0})
        return ParamPoly(terms, scope), names

    def parameters(self) -> set[str]:
        out = set()
        for _, lin in self.terms.values():
            out |= lin.keys()
        return out

    def __add__(self, other):
        if isinstance(other, Polynomial):
            other = ParamPoly.from_poly(other)
        if isinstance(other, (int, float)):
            other = ParamPoly({ONE: (float(other), {})}, self.scope)
        out = {m: (c, dict(l)) for m, (c, l) in self.terms.items()}
        for m, (c, lin) in other.terms.items():
            c0, l0 = out.get(m, (0.0, {}))
            for k, v in lin.items():
                l0[k] = l0.get(k, 0.0) + v
            out[m] = (c0 + c, l0)
        return ParamPoly(out, self.scope | other.scope)

    __radd__ = __add__

    def __neg__(self):
        return ParamPoly({m: (-c, {k: -v for k, v in lin.items()})
                          for m, (c, lin) in self.terms.items()}, self.scope)

    def __sub__(self, other):
        if isinstance(other, (int, float, Polynomial)):
            return self + (-other if isinstance(other, Polynomial) else -float(other))
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def mul_poly(self, p: Polynomial) -> "ParamPoly":
        out = {}
        for m, (c, lin) in self.terms.items():
            for mp, cp in p.terms.items():
                mm = m * mp
                c0, l0 = out.get(mm, (0.0, {}))
                c0 += c * cp
                for k, v in lin.items():
                    l0[k] = l0.get(k, 0.0) + v * cp
                out[mm] = (c0, l0)
        return ParamPoly(out, self.scope | p.scope)

    def scale(self, a: float) -> "ParamPoly":
        return ParamPoly({m: (a * c, {k: a * v for k, v in lin.items()})
                          for m, (c, lin) in self.terms.items()}, self.scope)

    def instantiate(self, values: dict[str, float]) -> Polynomial:
        terms = {}
        for m, (c, lin) in self.terms.items():
            val = c + sum(values[k] * v for k, v in lin.items())
            terms[m] = val
        return Polynomial(terms, self.scope)

    def support(self) -> set[Monomial]:
        return set(self.terms)

    def variables(self):
        out = set()
        for m in self.terms:
            out |= m.variables()
        return out


@dataclass
class SosCertificate:
    """Gram-matrix witness for one SOS constraint.

    ``target`` records the instantiated composite the certificate matches, so
    a stored certificate can be re-verified without re-deriving the program.
    """

    label: str
    basis: list[Monomial]
    gram: np.ndarray
    multipliers: list[tuple[str, Polynomial, list[Monomial], np.ndarray]]
    residual: float = np.inf
    min_eigenvalue: float = -np.inf
    target: Polynomial | None = None

    def sos_part(self, scope) -> Polynomial:
        return _gram_poly(self.basis, self.gram, scope)

    def reconstruction(self, scope) -> Polynomial:
        """sigma_0 + sum_g sigma_g * g, expanded symbolically."""
        total = self.sos_part(scope)
        for _, g, basis, Q in self.multipliers:
            total = total + _gram_poly(basis, Q, scope) * g.with_scope(scope)
        return total


@dataclass
class NotSos:
    reason: str

    def __bool__(self):
        return False


def _gram_poly(basis, Q, scope) -> Polynomial:
    terms: dict[Monomial, float] = {}
    n = len(basis)
    for a in range(n):
        for b in range(a, n):
            m = basis[a] * basis[b]
            coef = Q[a, b] if a == b else 2.0 * Q[a, b]
            terms[m] = terms.get(m, 0.0) + coef
    return Polynomial(terms, scope)


def _hull_prune(candidates, support_vectors, variables):
    """Keep candidate monomials m with 2m inside conv(support)."""
    if not support_vectors:
        return [ONE] if ONE in candidates else list(candidates[:1])
    S = np.array(sorted(support_vectors))
    kept = []
    for m in candidates:
        target = 2 * np.array(m.exponent_vector(variables))
        # quick reject: componentwise and total-degree bounding box of the hull
        if (target < S.min(axis=0) - 1e-9).any() or (target > S.max(axis=0) + 1e-9).any():
            continue
        if not (S.sum(axis=1).min() - 1e-9 <= target.sum() <= S.sum(axis=1).max() + 1e-9):
            continue
        if len(S) == 1:
            if np.array_equal(S[0], target):
                kept.append(m)
            continue
        # membership LP: exists lambda >= 0, sum lambda = 1, S' lambda = target
        A_eq = np.vstack([S.T, np.ones(len(S))])
        b_eq = np.concatenate([target, [1.0]])
        res = linprog(np.zeros(len(S)), A_eq=A_eq, b_eq=b_eq,
                      bounds=[(0, None)] * len(S), method="highs")
        if res.status == 0:
            kept.append(m)
    return kept


@dataclass
class _Constraint:
    label: str
    expr: ParamPoly
    domain: list[tuple[str, Polynomial, list[Monomial]]]
    basis: list[Monomial]


@dataclass
class SosSolution:
    status: SdpStatus
    params: dict[str, float] = field(default_factory=dict)
    certificates: dict[str, SosCertificate] = field(default_factory=dict)
    objective: float = np.nan
    sdp: SdpSolution | None = None

    @property
    def ok(self) -> bool:
        return self.status is SdpStatus.OPTIMAL


class SosProgram:
    """A collection of SOS constraints compiled jointly into one SDP."""

    def __init__(self):
        self.params: list[str] = []
        self.constraints: list[_Constraint] = []
        self._objective: dict[str, float] = {}

    def add_param(self, name: str) -> str:
        if name in self.params:
            raise ValueError(f"duplicate parameter {name!r}")
        self.params.append(name)
        return name

    def minimize(self, coefs: dict[str, float]):
        self._objective = dict(coefs)

    def maximize(self, coefs: dict[str, float]):
        self._objective = {k: -v for k, v in coefs.items()}

    def add_sos(self, expr, domain=(), label=None, basis=None) -> str:
        """Require expr - sum_g sigma_g * g to be SOS.

        ``domain`` entries are (g, sigma_degree) or (g, sigma_degree,
        sigma_variables); each sigma_g is an unknown SOS multiplier whose
        degree is at most sigma_degree (odd degrees round up, since a Gram
        parameterization only produces even degrees).
        """
        if isinstance(expr, Polynomial):
            expr = ParamPoly.from_poly(expr)
        label = label or f"sos{len(self.constraints)}"
        for p in expr.parameters():
            if p not in self.params:
                raise ValueError(f"expression uses undeclared parameter {p!r}")

        variables = set(expr.variables())
        dom_entries = []
        for entry in domain:
            g, deg = entry[0], entry[1]
            gvars = entry[2] if len(entry) > 2 else None
            variables |= g.variables()
            dom_entries.append((g, deg, gvars))
        variables = sorted(variables)

        # candidate support: expr plus every possible sigma_g * g product
        support = {m.exponent_vector(variables) for m in expr.support()}
        dom_final = []
        for k, (g, deg, gvars) in enumerate(dom_entries):
            gvars = sorted(set(gvars) if gvars is not None else variables)
            half = (deg + 1) // 2
            gbasis = monomial_basis(gvars, half)
            for a in gbasis:
                for b in gbasis:
                    for mg in g.terms:
                        support.add((a * b * mg).exponent_vector(variables))
            dom_final.append((f"{label}/g{k}", g, gbasis))

        if basis is None:
            maxdeg = max((sum(v) for v in support), default=0)
            cand = monomial_basis(variables, (maxdeg + 1) // 2)
            basis = _hull_prune(cand, support, variables)
        if not basis:
            basis = [ONE]
        self.constraints.append(_Constraint(label, expr, dom_final, basis))
        return label

    # -- compilation ---------------------------------------------------------

    def compile(self) -> SdpProblem:
        block_dims = []
        block_of = {}  # (constraint label, part) -> block index
        for con in self.constraints:
            block_of[(con.label, "main")] = len(block_dims)
            block_dims.append(len(con.basis))
            for glabel, _, gbasis in con.domain:
                block_of[(con.label, glabel)] = len(block_dims)
                block_dims.append(len(gbasis))

        constraints = []
        for con in self.constraints:
            rows: dict[Monomial, tuple[dict, dict, float]] = {}

            def row(m):
                if m not in rows:
                    rows[m] = ({}, {}, 0.0)
                return rows[m]

            # main Gram expansion
            bmain = block_of[(con.label, "main")]
            for a in range(len(con.basis)):
                for b in range(a, len(con.basis)):
                    m = con.basis[a] * con.basis[b]
                    blocks, _, _ = row(m)
                    key = (bmain, a, b)
                    blocks[key] = blocks.get(key, 0.0) + (1.0 if a == b else 2.0)
            # multiplier expansions, weighted by the domain polynomial
            for glabel, g, gbasis in con.domain:
                bidx = block_of[(con.label, glabel)]
                for a in range(len(gbasis)):
                    for b in range(a, len(gbasis)):
                        mm = gbasis[a] * gbasis[b]
                        w = 1.0 if a == b else 2.0
                        for mg, cg in g.terms.items():
                            m = mm * mg
                            blocks, _, _ = row(m)
                            key = (bidx, a, b)
                            blocks[key] = blocks.get(key, 0.0) + w * cg
            # expression: Gram side + multipliers - params == const
            for m, (c0, lin) in con.expr.terms.items():
                blocks, scal, _ = row(m)
                for k, v in lin.items():
                    scal[k] = scal.get(k, 0.0) - v
                blocks_, scal_, _ = rows[m]
                rows[m] = (blocks_, scal_, c0)

            for m in sorted(rows, key=Monomial.sort_key):
                blocks, scal, rhs = rows[m]
                constraints.append((LinFunc(blocks=blocks, scalars=scal), rhs))

        objective_scalars = dict(self._objective)
        if not objective_scalars:
            # pure feasibility: minimize total Gram trace to regularize
            blocks = {}
            for con in self.constraints:
                bmain = block_of[(con.label, "main")]
                for a in range(len(con.basis)):
                    blocks[(bmain, a, a)] = 1.0
            objective = LinFunc(blocks=blocks)
        else:
            objective = LinFunc(scalars=objective_scalars)

        self._block_of = block_of
        return SdpProblem(tuple(block_dims), tuple(self.params), objective, tuple(constraints))

    def solve(self, options: SdpOptions | None = None) -> SosSolution:
        problem = self.compile()
        sol = solve_sdp(problem, options)
        if sol.status is not SdpStatus.OPTIMAL:
            return SosSolution(sol.status, sdp=sol)
        params = dict(sol.scalar_values)
        certs = {}
        for con in self.constraints:
            Q = sol.blocks[self._block_of[(con.label, "main")]]
            mults = []
            for glabel, g, gbasis in con.domain:
                mults.append((glabel, g, gbasis, sol.blocks[self._block_of[(con.label, glabel)]]))
            target = con.expr.instantiate(params)
            cert = SosCertificate(con.label, list(con.basis), Q, mults, target=target)
            report = verify_certificate(cert, target)
            cert.residual = report["residual"]
            cert.min_eigenvalue = report["min_eig"]
            certs[con.label] = cert
        return SosSolution(SdpStatus.OPTIMAL, params, certs, sol.objective, sol)


def verify_certificate(cert: SosCertificate, composite: Polynomial) -> dict:
    """Independent re-check: expand the Gram products and compare coefficients.

    Always returns a report {ok, residual, min_eig}; never raises.
    """
    scope = set(composite.scope)
    for m in cert.basis:
        scope |= m.variables()
    for _, g, gbasis, _ in cert.multipliers:
        scope |= g.scope
        for m in gbasis:
            scope |= m.variables()
    recon = cert.reconstruction(scope)
    target = composite.with_scope(scope)
    diff = target - recon
    residual = max((abs(c) for c in diff.terms.values()), default=0.0)
    eigs = [float(np.linalg.eigvalsh(cert.gram)[0])] if cert.gram.size else [0.0]
    for _, _, _, Q in cert.multipliers:
        if Q.size:
            eigs.append(float(np.linalg.eigvalsh(Q)[0]))
    min_eig = min(eigs)
    ok = residual <= ACCEPT_RESIDUAL and min_eig >= GRAM_EIG_FLOOR
    return {"ok": ok, "residual": residual, "min_eig": min_eig}


# -- top-level operations ------------------------------------------------------


def sos_decompose(p: Polynomial, options: SdpOptions | None = None):
    """Certify p as a sum of squares, or report NotSos.

    The default basis is every monomial of degree <= deg(p)/2 in p's
    variables, pruned by the Newton polytope of p.
    """
    if p.degree() % 2 == 1:
        return NotSos("odd degree polynomial cannot be a sum of squares")
    prog = SosProgram()
    prog.add_sos(p, label="p")
    sol = prog.solve(options)
    if sol.status in (SdpStatus.INFEASIBLE, SdpStatus.UNBOUNDED):
        return NotSos("feasibility SDP is infeasible at tolerance")
    if sol.status is not SdpStatus.OPTIMAL:
        return NotSos(f"solver failure: {sol.status.value}")
    cert = sol.certificates["p"]
    if cert.residual > ACCEPT_RESIDUAL or cert.min_eigenvalue < GRAM_EIG_FLOOR:
        return NotSos(f"certificate rejected (residual {cert.residual:.2e})")
    return cert


def _box_domain_entries(box: dict[Var, tuple[float, float]], degree: int):
    """Per-channel (u - lo) and (hi - u) domain polynomials for an input box."""
    entries = []
    for v in sorted(box):
        lo, hi = box[v]
        if not lo < hi:
            raise ValueError(f"degenerate input bounds for {v}: [{lo}, {hi}]")
        uv = Polynomial.variable(v)
        entries.append((uv - lo, degree))
        entries.append(((-uv) + hi, degree))
    return entries


def compile_lower_bound(expr: Polynomial,
                        domain_polys: list[Polynomial],
                        box: dict[Var, tuple[float, float]] | None = None,
                        multiplier_degree: int = 2) -> tuple[SdpProblem, SosProgram]:
    """Compile the certified-lower-bound program for expr over a semialgebraic set.

    Maximizes gamma subject to

        expr - gamma - sum_s p_s * dom_s
             - sum_j [w_j * (u_j - lo_j) + v_j * (hi_j - u_j)]   is SOS

    with all multipliers SOS of the requested degree.  Domain polynomials
    must involve state variables only; the box covers input channels.
    """
    if multiplier_degree % 2 == 1:
        import warnings
        warnings.warn(f"multiplier degree {multiplier_degree} rounded up to even", stacklevel=2)
        multiplier_degree += 1
    for g in domain_polys:
        if any(v.ns != "x" for v in g.variables()):
            raise ValueError("domain polynomials must involve state variables only")
    prog = SosProgram()
    prog.add_param("gamma")
    scope = expr.scope | {v for g in domain_polys for v in g.scope}
    if box:
        scope = scope | set(box)
    domain = [(g, multiplier_degree) for g in domain_polys]
    if box:
        domain += _box_domain_entries(box, multiplier_degree)
    composite = ParamPoly.from_poly(expr.with_scope(scope)) - ParamPoly.parameter("gamma", scope)
    prog.add_sos(composite, domain=domain, label="bound")
    prog.maximize({"gamma": 1.0})
    return prog.compile(), prog


def solve_lower_bound(expr, domain_polys, box=None, multiplier_degree=2,
                      options: SdpOptions | None = None):
    """Maximized certified lower bound; returns (gamma, certificate) or raises."""
    _, prog = compile_lower_bound(expr, domain_polys, box, multiplier_degree)
    sol = prog.solve(options)
    if sol.status is not SdpStatus.OPTIMAL:
        raise SosInfeasibleError(
            f"lower-bound program failed with status {sol.status.value}; "
            "try increasing the multiplier degree", sol.status)
    cert = sol.certificates["bound"]
    return sol.params["gamma"], cert


class SosInfeasibleError(RuntimeError):
    def __init__(self, message, status):
        super().__init__(message)
        self.status = status


def motzkin() -> Polynomial:
    """The classical nonnegative polynomial with no SOS decomposition."""
    x, y = Var("x", 0), Var("x", 1)
    scope = [x, y]
    X = Polynomial.variable(x, scope)
    Y = Polynomial.variable(y, scope)
    return X ** 4 * Y ** 2 + X ** 2 * Y ** 4 - 3.0 * (X ** 2 * Y ** 2) + 1.0
