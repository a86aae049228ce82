"""Resilient-safety index backends: SOS, LP, monotone, grid oracle."""

import numpy as np
import pytest

from resilsafe.casestudy import (
    closed_form_lti_indices,
    lti_synchronization,
    three_rooms,
)
from resilsafe.poly import Polynomial, PolyMatrix, PolyVector, uvar, xvar
from resilsafe.rsi import (
    NotApplicable,
    RsiEntry,
    RsiReport,
    beta_lp,
    beta_monotone,
    beta_sos,
    compute_report,
    gamma_lp,
    gamma_monotone,
    gamma_sos,
    grid_oracle,
    monotone_box_minimum,
)
from resilsafe.system import InterconnectedSystem, SafetyDomainSampler, SubsystemModel


@pytest.fixture(scope="module")
def rooms1():
    return three_rooms(1).system


@pytest.fixture(scope="module")
def lti():
    A = np.array([[-2.0, 1.0, 1.0], [1.5, -3.0, 1.5], [0.5, 0.5, -1.0]])
    return lti_synchronization(A, [1.0, 0.5, 1.5], [1.0, 0.5, 2.0], protected={0, 1})


def affine_chain(h_coeffs=(1.0, 1.0), box=((-1.0, 1.0), (-1.0, 1.0))):
    """Two affine sub-systems with one linear safety function."""
    subs = []
    for i in range(2):
        xi = Polynomial.variable(xvar(i))
        other = Polynomial.variable(xvar(1 - i), [xvar(0), xvar(1)])
        subs.append(SubsystemModel(
            name=f"s{i}", n=1, r=1,
            f_slf=PolyVector([-1.0 * xi + 0.5]),
            g_slf=PolyMatrix([[Polynomial.constant(1.0, [xvar(i)])]]),
            f_cpl=PolyVector([0.3 * other]),
            g_cpl=None,
            input_box=((-1.0, 1.0),)))
    scope = [xvar(0), xvar(1)]
    h = Polynomial.zero(scope)
    for c, v in zip(h_coeffs, scope):
        h = h + c * Polynomial.variable(v, scope)
    return InterconnectedSystem(
        subsystems=tuple(subs), protected=frozenset({0}), vulnerable=frozenset({1}),
        safety=(h,), sampler=SafetyDomainSampler(box=box, resolution=11))


class TestGridOracle:
    def test_constant_integrand(self):
        sys = affine_chain()
        # beta integrand for vulnerable {1} is 0.3 * (dh/dx1) * x0 -> not constant;
        # use a 1-D system with constant self term instead
        x0 = xvar(0)
        x = Polynomial.variable(x0)
        sub = SubsystemModel(
            name="c", n=1, r=1,
            f_slf=PolyVector([Polynomial.constant(4.0, [x0])]),
            g_slf=PolyMatrix([[Polynomial.zero([x0])]]),
            f_cpl=PolyVector([Polynomial.zero([x0])]), g_cpl=None,
            input_box=((-1.0, 1.0),))
        sys1 = InterconnectedSystem(
            subsystems=(sub,), protected=frozenset(), vulnerable=frozenset({0}),
            safety=(x + 1.0,), sampler=SafetyDomainSampler(box=((-1.0, 1.0),)))
        val, _, _ = grid_oracle(sys1, ("gamma", 0, 0))
        assert val == pytest.approx(4.0)

    def test_one_dimensional_linear(self):
        # integrand x over C = [-1, 1]: minimum -1 at x = -1
        x0 = xvar(0)
        x = Polynomial.variable(x0)
        sub = SubsystemModel(
            name="lin", n=1, r=1,
            f_slf=PolyVector([Polynomial.constant(1.0, [x0])]),
            g_slf=PolyMatrix([[Polynomial.zero([x0])]]),
            f_cpl=PolyVector([Polynomial.zero([x0])]), g_cpl=None,
            input_box=((-1.0, 1.0),))
        sys1 = InterconnectedSystem(
            subsystems=(sub,), protected=frozenset(), vulnerable=frozenset({0}),
            safety=(1.0 - x * x,), sampler=SafetyDomainSampler(box=((-1.0, 1.0),)))
        # dh/dx * f_slf = -2x * 1
        val, argx, _ = grid_oracle(sys1, ("gamma", 0, 0))
        assert val == pytest.approx(-2.0)
        assert argx[0] == pytest.approx(1.0)

    def test_case_study_oracle_value(self, rooms1):
        val, _, _ = grid_oracle(rooms1, ("gamma", 0, 0), resolution=21)
        assert val == pytest.approx(-12.0, abs=1e-6)


class TestSosBackend:
    def test_case_study_gamma_sandwich(self, rooms1):
        val, cert = gamma_sos(rooms1, 0, 0)
        oracle, _, _ = grid_oracle(rooms1, ("gamma", 0, 0), resolution=21)
        assert val <= oracle + 1e-5
        assert cert.residual <= 1e-6
        assert cert.min_eigenvalue >= -1e-7
        assert val == pytest.approx(oracle, abs=0.1)  # the relaxation is tight here

    def test_case_study_beta_sandwich(self, rooms1):
        val, cert = beta_sos(rooms1, 0)
        oracle, _, _ = grid_oracle(rooms1, ("beta", 0), resolution=21)
        assert val <= oracle + 1e-5
        assert cert.residual <= 1e-6

    def test_zero_integrand_exact(self, lti):
        # constraint gradient is dense, so instead build h ignoring the node
        sys = lti.system
        x0, x1, x2 = (xvar(i) for i in range(3))
        scope = [x0, x1, x2]
        h = 1.0 - Polynomial.variable(x0, scope) ** 2
        sys2 = InterconnectedSystem(
            subsystems=sys.subsystems, protected=sys.protected,
            vulnerable=sys.vulnerable, safety=(h,), sampler=sys.sampler)
        val, cert = gamma_sos(sys2, 2, 0)
        assert val == 0.0 and cert is None

    def test_lti_closed_form_bound(self):
        # single vulnerable node with c=1, a=-2, b=1: closed form -0.25
        A = np.array([[-1.0, 0.5, 0.5], [0.5, -1.0, 0.5], [1.0, 1.0, -2.0]])
        doc = lti_synchronization(A, [1.0, 1.0, 1.0], [1.0, 1.0, 1.0], protected={0, 1})
        sys = doc.system
        val, cert = gamma_sos(sys, 2, 0)
        assert val >= -0.25 - 1e-4
        oracle, _, _ = grid_oracle(sys, ("gamma", 2, 0), resolution=21)
        assert oracle >= -0.25 - 1e-9  # the closed form is a valid bound
        assert val <= oracle + 1e-5

    def test_lti_beta_sandwich(self, lti):
        val, _ = beta_sos(lti.system, 0)
        oracle, _, _ = grid_oracle(lti.system, ("beta", 0), resolution=21)
        assert val <= oracle + 1e-5


class TestLpBackend:
    def test_not_applicable_on_nonlinear(self, rooms1):
        with pytest.raises(NotApplicable):
            gamma_lp(rooms1, 0, 0)

    def test_matches_grid_oracle(self):
        sys = affine_chain()
        val, sol = gamma_lp(sys, 1, 0)
        oracle, _, _ = grid_oracle(sys, ("gamma", 1, 0), resolution=201)
        assert val == pytest.approx(oracle, abs=1e-8)
        assert sol.is_vertex

    def test_beta_matches_grid(self):
        sys = affine_chain(h_coeffs=(0.7, 1.3))
        val, sol = beta_lp(sys, 0)
        oracle, _, _ = grid_oracle(sys, ("beta", 0), resolution=201)
        assert val == pytest.approx(oracle, abs=1e-8)

    def test_lti_halfplane_variant(self):
        # synchronization dynamics with the ellipsoid replaced by a half-plane
        A = np.array([[-2.0, 1.0, 1.0], [1.5, -3.0, 1.5], [0.5, 0.5, -2.0]])
        scope = [xvar(i) for i in range(3)]
        subs = []
        for i in range(3):
            xi = Polynomial.variable(xvar(i))
            cpl = Polynomial.zero(scope)
            for j in range(3):
                if j != i:
                    cpl = cpl + A[i, j] * Polynomial.variable(xvar(j), scope)
            b_ii = 1.0 if i == 2 else 0.5
            subs.append(SubsystemModel(
                name=f"n{i}", n=1, r=1,
                f_slf=PolyVector([A[i, i] * xi]),
                g_slf=PolyMatrix([[Polynomial.constant(b_ii, [xvar(i)])]]),
                f_cpl=PolyVector([cpl]), g_cpl=None, input_box=((-1.0, 1.0),)))
        h = Polynomial.zero(scope)
        for v in scope:
            h = h + Polynomial.variable(v, scope)
        sys = InterconnectedSystem(
            subsystems=tuple(subs), protected=frozenset({0, 1}), vulnerable=frozenset({2}),
            safety=(h,), sampler=SafetyDomainSampler(box=((-1.0, 1.0),) * 3, resolution=11))
        val, sol = gamma_lp(sys, 2, 0)
        oracle, _, _ = grid_oracle(sys, ("gamma", 2, 0), resolution=51)
        assert val == pytest.approx(oracle, abs=1e-6)
        assert sol.is_vertex


class TestMonotoneBackend:
    def test_linear_toy(self):
        scope = [xvar(0), uvar(0)]
        p = Polynomial.variable(xvar(0), scope) + Polynomial.variable(uvar(0), scope)
        val, corner = monotone_box_minimum(p, {xvar(0): (0.0, 1.0), uvar(0): (0.0, 1.0)})
        assert val == pytest.approx(0.0)
        assert corner == {xvar(0): 0.0, uvar(0): 0.0}

    def test_product_toy(self):
        scope = [xvar(0), uvar(0)]
        p = Polynomial.variable(xvar(0), scope) * Polynomial.variable(uvar(0), scope)
        val, _ = monotone_box_minimum(p, {xvar(0): (1.0, 2.0), uvar(0): (1.0, 2.0)})
        assert val == pytest.approx(1.0)

    def test_sign_change_rejected(self):
        scope = [xvar(0)]
        p = Polynomial.variable(xvar(0), scope) ** 2
        with pytest.raises(NotApplicable, match="changes sign"):
            monotone_box_minimum(p, {xvar(0): (-1.0, 1.0)})

    def test_corner_below_grid(self):
        rng = np.random.default_rng(41)
        for _ in range(10):
            # random increasing-coefficient polynomial over a positive box
            scope = [xvar(0), xvar(1)]
            terms = {}
            from resilsafe.poly import Monomial, monomial_basis
            for m in monomial_basis(scope, 3):
                terms[m] = rng.uniform(0, 2)  # nonneg coefficients: monotone on x >= 0
            p = Polynomial(terms, scope)
            box = {xvar(0): (0.5, 2.0), xvar(1): (0.5, 2.0)}
            val, _ = monotone_box_minimum(p, box)
            g = np.linspace(0.5, 2.0, 21)
            grid_min = min(p.evaluate({xvar(0): a, xvar(1): b}) for a in g for b in g)
            assert val <= grid_min + 1e-9

    def test_system_level_monotone(self):
        # box safe set, increasing dynamics
        x0 = xvar(0)
        x = Polynomial.variable(x0)
        sub = SubsystemModel(
            name="m", n=1, r=1,
            f_slf=PolyVector([0.5 * x + 1.0]),
            g_slf=PolyMatrix([[Polynomial.constant(1.0, [x0])]]),
            f_cpl=PolyVector([Polynomial.zero([x0])]), g_cpl=None,
            input_box=((0.0, 1.0),))
        sys = InterconnectedSystem(
            subsystems=(sub,), protected=frozenset(), vulnerable=frozenset({0}),
            safety=(x - 1.0,),  # h = x - 1 >= 0 on box [1, 2]
            sampler=SafetyDomainSampler(box=((1.0, 2.0),)))
        val = gamma_monotone(sys, 0, 0)
        oracle, _, _ = grid_oracle(sys, ("gamma", 0, 0), resolution=21)
        assert val == pytest.approx(oracle, abs=1e-9)


class TestClosedFormProperty:
    def test_stated_bounds_hold_on_grid(self, lti):
        # gamma_i = -b^2 c / (2|a|) and beta = -(c_max/c_min) sum |a_ii| are
        # valid lower bounds of the integrands over a dense grid of C x U
        sys = lti.system
        gammas, beta = closed_form_lti_indices(lti)
        pts = sys.safe_grid(21)
        xv = sys.state_vars()
        for i, gamma_i in gammas.items():
            integrand = sys.lie_self(i, 0)
            integrand = integrand.with_scope(integrand.variables())
            us = np.linspace(-1.0, 1.0, 21)
            for p in pts:
                base = dict(zip(xv, p))
                for uval in us:
                    point = {**base, uvar(i): uval}
                    val = integrand.evaluate({v: point[v] for v in integrand.scope})
                    assert val >= gamma_i - 1e-6
        coupled = sys.lie_coupled_sum(0, sys.vulnerable)
        coupled = coupled.with_scope(coupled.variables())
        for p in pts:
            val = coupled.evaluate({v: dict(zip(xv, p))[v] for v in coupled.scope})
            assert val >= beta - 1e-6


class TestReport:
    def test_case_study_report(self, rooms1):
        report = compute_report(rooms1, backend="sos", with_oracle=True)
        assert report.all_finite()
        entry = report.gamma[(0, 0)]
        assert entry.backend == "sos"
        assert entry.value <= report.oracle_gamma[(0, 0)] + 1e-5
        assert report.beta[0].value <= report.oracle_beta[0] + 1e-5
        assert entry.flagged is None

    def test_auto_prefers_cheap_backend(self):
        sys = affine_chain()
        report = compute_report(sys, backend="auto", with_oracle=False)
        assert report.gamma[(1, 0)].backend in ("monotone", "lp")

    def test_reconcile_flags_disagreement(self):
        report = RsiReport()
        report.gamma[(0, 0)] = RsiEntry(1.0, "sos")
        report.oracle_gamma[(0, 0)] = 0.5
        report.reconcile()
        assert report.gamma[(0, 0)].flagged is not None
