"""SOS decomposition, lower-bound compilation, and certificate verification."""

import numpy as np
import pytest

from resilsafe.optim import SdpStatus
from resilsafe.poly import Polynomial, Var, monomial_basis, xvar, uvar
from resilsafe.sos import (
    NotSos,
    SosProgram,
    compile_lower_bound,
    motzkin,
    solve_lower_bound,
    sos_decompose,
    verify_certificate,
)

X0, X1 = xvar(0), xvar(1)
U0 = uvar(0)


def poly(v, scope):
    return Polynomial.variable(v, scope)


class TestDecompose:
    def test_perfect_square(self):
        scope = [X0, X1]
        p = (poly(X0, scope) + poly(X1, scope)) ** 2
        cert = sos_decompose(p)
        assert not isinstance(cert, NotSos)
        assert [str(m) for m in cert.basis] == ["x0", "x1"]
        assert cert.gram == pytest.approx(np.array([[1.0, 1.0], [1.0, 1.0]]), abs=1e-6)
        assert cert.residual <= 1e-6

    def test_negative_somewhere(self):
        scope = [X0]
        p = 1.0 - poly(X0, scope) ** 2  # negative at x=2
        assert isinstance(sos_decompose(p), NotSos)

    def test_motzkin_not_sos(self):
        out = sos_decompose(motzkin())
        assert isinstance(out, NotSos)

    def test_odd_degree_immediate(self):
        p = poly(X0, [X0]) ** 3
        out = sos_decompose(p)
        assert isinstance(out, NotSos)
        assert "odd" in out.reason

    def test_random_sums_of_squares_accepted(self):
        rng = np.random.default_rng(23)
        scope = [X0, X1]
        basis = monomial_basis(scope, 2)
        for _ in range(10):
            q = Polynomial.zero(scope)
            for _ in range(3):
                coeffs = rng.uniform(-1, 1, len(basis))
                s = Polynomial({m: c for m, c in zip(basis, coeffs)}, scope)
                q = q + s * s
            cert = sos_decompose(q)
            assert not isinstance(cert, NotSos)
            report = verify_certificate(cert, q)
            assert report["ok"]


class TestLowerBound:
    def test_unconstrained_complete_the_square(self):
        # x^2 - 2x + 3 = (x-1)^2 + 2  ->  gamma = 2
        scope = [X0]
        x = poly(X0, scope)
        gamma, cert = solve_lower_bound(x * x - 2.0 * x + 3.0, [])
        assert gamma == pytest.approx(2.0, abs=1e-5)
        assert cert.residual <= 1e-6

    def test_square_over_interval(self):
        # min of x^2 over {1 - x^2 >= 0} is 0, multiplier degree 0
        scope = [X0]
        x = poly(X0, scope)
        dom = 1.0 - x * x
        gamma, _ = solve_lower_bound(x * x, [dom], multiplier_degree=0)
        assert gamma == pytest.approx(0.0, abs=1e-6)

    def test_linear_over_interval_grid_oracle(self):
        # independent grid oracle over [-1, 1]
        scope = [X0]
        x = poly(X0, scope)
        grid = np.linspace(-1.0, 1.0, 2001)
        oracle = min(float(g) for g in grid)
        gamma, cert = solve_lower_bound(x, [1.0 - x * x], multiplier_degree=2)
        assert oracle == pytest.approx(-1.0)
        assert gamma == pytest.approx(oracle, abs=1e-5)
        assert gamma <= oracle + 1e-5

    def test_with_input_box(self):
        # min of x*u over x in {1-x^2>=0}, u in [0, 2]: grid oracle
        scope = [X0, U0]
        x, u = poly(X0, scope), poly(U0, scope)
        expr = x.with_scope(scope) * u
        xs = np.linspace(-1, 1, 201)
        us = np.linspace(0, 2, 201)
        oracle = min(a * b for a in xs for b in us)
        gamma, cert = solve_lower_bound(
            expr, [1.0 - poly(X0, [X0]) ** 2], box={U0: (0.0, 2.0)})
        assert gamma <= oracle + 1e-5
        assert gamma == pytest.approx(-2.0, abs=1e-4)

    def test_soundness_on_grid(self):
        # accepted bound must hold over a dense grid on the domain x box
        rng = np.random.default_rng(29)
        scope = [X0, U0]
        for _ in range(5):
            coeffs = rng.uniform(-2, 2, 5)
            x, u = poly(X0, scope), poly(U0, scope)
            expr = (coeffs[0] + coeffs[1] * x + coeffs[2] * u
                    + coeffs[3] * x * u + coeffs[4] * x * x)
            dom = 1.0 - poly(X0, [X0]) ** 2
            gamma, cert = solve_lower_bound(expr, [dom], box={U0: (-1.0, 1.0)})
            pts = np.linspace(-1, 1, 21)
            vals = [expr.evaluate({X0: a, U0: b}) for a in pts for b in pts]
            assert min(vals) >= gamma - 1e-5

    def test_degree_monotonicity(self):
        scope = [X0]
        x = poly(X0, scope)
        expr = x * x * x  # odd integrand over [-1, 1], min -1
        dom = [1.0 - x * x]
        g2, _ = solve_lower_bound(expr, dom, multiplier_degree=2)
        g4, _ = solve_lower_bound(expr, dom, multiplier_degree=4)
        assert g4 >= g2 - 1e-6

    def test_odd_multiplier_degree_rounds_up(self):
        scope = [X0]
        x = poly(X0, scope)
        with pytest.warns(UserWarning, match="rounded up"):
            compile_lower_bound(x * x, [1.0 - x * x], multiplier_degree=1)

    def test_domain_poly_with_input_rejected(self):
        scope = [X0, U0]
        bad = poly(U0, scope) * poly(X0, scope)
        with pytest.raises(ValueError, match="state variables only"):
            compile_lower_bound(poly(X0, [X0]), [bad])


class TestVerify:
    def test_round_trip_ok(self):
        scope = [X0, X1]
        p = (poly(X0, scope) + poly(X1, scope)) ** 2
        cert = sos_decompose(p)
        report = verify_certificate(cert, p)
        assert report["ok"] and report["residual"] <= 1e-9

    def test_perturbed_gram_detected(self):
        scope = [X0, X1]
        p = (poly(X0, scope) + poly(X1, scope)) ** 2
        cert = sos_decompose(p)
        cert.gram = cert.gram.copy()
        cert.gram[0, 0] += 1e-3
        report = verify_certificate(cert, p)
        assert not report["ok"]
        assert report["residual"] == pytest.approx(1e-3, rel=0.2)

    def test_feasibility_program_round_trip(self):
        # compile -> solve -> verify yields ok for every certificate
        scope = [X0]
        x = poly(X0, scope)
        prog = SosProgram()
        prog.add_sos(x * x + 2.0, label="a")
        prog.add_sos((x - 1.0) ** 2, label="b")
        sol = prog.solve()
        assert sol.status is SdpStatus.OPTIMAL
        for label, cert in sol.certificates.items():
            assert cert.residual <= 1e-6
            assert cert.min_eigenvalue >= -1e-7
