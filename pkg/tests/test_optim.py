"""Conic solver tests: SDP, QP, LP, and the SDPA export."""

import numpy as np
import pytest

from resilsafe.optim import (
    LinFunc,
    LpProblem,
    LpStatus,
    QpProblem,
    QpStatus,
    SdpProblem,
    SdpStatus,
    cross_check_vertex_optimum,
    enumerate_vertices,
    export_sdpa,
    read_sdpa,
    solve_lp,
    solve_qp,
    solve_sdp,
)


class TestSdp:
    def test_psd_correlation_bound(self):
        # maximize t s.t. [[1, t], [t, 1]] >= 0  ->  t = 1
        prob = SdpProblem(
            block_dims=(2,),
            scalars=("t",),
            objective=LinFunc(scalars={"t": -1.0}),
            constraints=(
                (LinFunc(blocks={(0, 0, 0): 1.0}), 1.0),
                (LinFunc(blocks={(0, 1, 1): 1.0}), 1.0),
                (LinFunc(blocks={(0, 0, 1): 1.0}, scalars={"t": -1.0}), 0.0),
            ),
        )
        sol = solve_sdp(prob)
        assert sol.status is SdpStatus.OPTIMAL
        assert sol.scalar_values["t"] == pytest.approx(1.0, abs=1e-5)

    def test_min_trace_rank_one(self):
        # minimize trace(X), X >= 0, X_00 = 1  ->  objective 1, X = e0 e0'
        prob = SdpProblem(
            block_dims=(2,),
            scalars=(),
            objective=LinFunc(blocks={(0, 0, 0): 1.0, (0, 1, 1): 1.0}),
            constraints=((LinFunc(blocks={(0, 0, 0): 1.0}), 1.0),),
        )
        sol = solve_sdp(prob)
        assert sol.status is SdpStatus.OPTIMAL
        assert sol.objective == pytest.approx(1.0, abs=1e-6)
        X = sol.blocks[0]
        assert X[0, 0] == pytest.approx(1.0, abs=1e-6)
        assert abs(X[1, 1]) < 1e-6

    def test_infeasible_detected(self):
        # X >= 0 with X_00 = -1 is infeasible
        prob = SdpProblem(
            block_dims=(1,),
            scalars=(),
            objective=LinFunc(blocks={(0, 0, 0): 1.0}),
            constraints=((LinFunc(blocks={(0, 0, 0): 1.0}), -1.0),),
        )
        sol = solve_sdp(prob)
        assert sol.status is SdpStatus.INFEASIBLE

    def test_dependent_rows_dropped(self):
        prob = SdpProblem(
            block_dims=(1,),
            scalars=(),
            objective=LinFunc(blocks={(0, 0, 0): 1.0}),
            constraints=(
                (LinFunc(blocks={(0, 0, 0): 1.0}), 2.0),
                (LinFunc(blocks={(0, 0, 0): 2.0}), 4.0),  # same row, scaled
            ),
        )
        with pytest.warns(UserWarning, match="dependent"):
            sol = solve_sdp(prob)
        assert sol.status is SdpStatus.OPTIMAL
        assert sol.objective == pytest.approx(2.0, abs=1e-6)

    def test_weak_duality(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            d = 3
            C = rng.uniform(-1, 1, (d, d))
            C = (C + C.T) / 2
            obj = LinFunc(blocks={(0, i, j): (C[i, j] if i == j else 2 * C[i, j])
                                  for i in range(d) for j in range(i, d)})
            cons = ((LinFunc(blocks={(0, i, i): 1.0 for i in range(d)}), 1.0),)
            sol = solve_sdp(SdpProblem((d,), (), obj, cons))
            assert sol.status is SdpStatus.OPTIMAL
            assert sol.objective >= sol.dual_objective - 1e-6

    def test_optimal_residuals_within_tolerance(self):
        prob = SdpProblem(
            block_dims=(2,),
            scalars=("t",),
            objective=LinFunc(scalars={"t": -1.0}),
            constraints=(
                (LinFunc(blocks={(0, 0, 0): 1.0}), 1.0),
                (LinFunc(blocks={(0, 1, 1): 1.0}), 1.0),
                (LinFunc(blocks={(0, 0, 1): 1.0}, scalars={"t": -1.0}), 0.0),
            ),
        )
        sol = solve_sdp(prob)
        assert sol.primal_residual <= 1e-7
        assert sol.min_eigenvalue >= -1e-7


class TestSdpaExport:
    def _toy(self):
        return SdpProblem(
            block_dims=(2,),
            scalars=("g",),
            objective=LinFunc(scalars={"g": -1.0}),
            constraints=(
                (LinFunc(blocks={(0, 0, 0): 1.0, (0, 0, 1): 0.5}, scalars={"g": 1.0}), 1.0),
                (LinFunc(blocks={(0, 1, 1): 1.0}), 2.0),
            ),
        )

    def test_round_trip_structural(self, tmp_path):
        path = tmp_path / "toy.dat-s"
        prob = self._toy()
        export_sdpa(prob, path)
        back = read_sdpa(path)
        # scalar became two 1x1 blocks
        assert back.block_dims == (2, 1, 1)
        assert len(back.constraints) == 2
        # exporting the parsed problem again reproduces the file byte for byte
        path2 = tmp_path / "toy2.dat-s"
        export_sdpa(back, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_constraintless_rejected(self, tmp_path):
        prob = SdpProblem((1,), (), LinFunc(blocks={(0, 0, 0): 1.0}), ())
        with pytest.raises(ValueError, match="constraintless"):
            export_sdpa(prob, tmp_path / "bad.dat-s")

    def test_free_scalar_becomes_block_pair(self, tmp_path):
        path = tmp_path / "toy.dat-s"
        export_sdpa(self._toy(), path)
        lines = path.read_text().splitlines()
        assert lines[1] == "3"          # one matrix block + the v+/v- pair
        assert lines[2] == "2 1 1"
        # objective touches the pair with opposite signs
        obj_entries = [l for l in lines if l.startswith("0 ")]
        signs = sorted(float(l.split()[4]) for l in obj_entries)
        assert signs == [-1.0, 1.0]

    def test_deterministic_bytes(self, tmp_path):
        p1, p2 = tmp_path / "a.dat-s", tmp_path / "b.dat-s"
        export_sdpa(self._toy(), p1)
        export_sdpa(self._toy(), p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestQp:
    def test_halfspace_projection(self):
        # min u^2 s.t. u >= 1  ->  u = 1
        sol = solve_qp(QpProblem(P=[[2.0]], q=[0.0], G=[[1.0]], h=[1.0]))
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(1.0, abs=1e-9)
        assert sol.active_set == (0,)

    def test_inactive_constraint(self):
        # min u^2 s.t. u >= -1  ->  u = 0
        sol = solve_qp(QpProblem(P=[[2.0]], q=[0.0], G=[[1.0]], h=[-1.0]))
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z[0] == pytest.approx(0.0, abs=1e-9)

    def test_symmetric_split(self):
        # min u1^2 + u2^2 s.t. u1 + u2 >= 2  ->  (1, 1)
        sol = solve_qp(QpProblem(P=2 * np.eye(2), q=np.zeros(2), G=[[1.0, 1.0]], h=[2.0]))
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z == pytest.approx(np.array([1.0, 1.0]), abs=1e-9)

    def test_infeasible(self):
        prob = QpProblem(P=2 * np.eye(1), q=[0.0], G=[[1.0], [-1.0]], h=[1.0, 0.0])
        sol = solve_qp(prob)
        assert sol.status is QpStatus.INFEASIBLE

    def test_kkt_residual_bound_random(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            n, m = 3, 5
            M = rng.uniform(-1, 1, (n, n))
            P = M @ M.T + np.eye(n)
            q = rng.uniform(-1, 1, n)
            G = rng.uniform(-1, 1, (m, n))
            h = rng.uniform(-1.5, -0.5, m)  # z=0 strictly feasible
            sol = solve_qp(QpProblem(P=P, q=q, G=G, h=h))
            assert sol.status is QpStatus.OPTIMAL
            assert sol.kkt_residual <= 1e-8
            assert (G @ sol.z - h >= -1e-8).all()

    def test_min_norm_beats_random_feasible(self):
        rng = np.random.default_rng(13)
        G = np.array([[1.0, 0.5], [0.3, 1.0]])
        h = np.array([1.0, 0.5])
        sol = solve_qp(QpProblem(P=2 * np.eye(2), q=np.zeros(2), G=G, h=h))
        assert sol.status is QpStatus.OPTIMAL
        norm = np.linalg.norm(sol.z)
        for _ in range(1000):
            cand = sol.z + rng.normal(0, 0.5, 2)
            if (G @ cand >= h).all():
                assert norm <= np.linalg.norm(cand) + 1e-8

    def test_equality_constrained(self):
        sol = solve_qp(QpProblem(P=2 * np.eye(2), q=np.zeros(2),
                                 G=np.zeros((0, 2)), h=np.zeros(0),
                                 A=[[1.0, -1.0]], b=[1.0]))
        assert sol.status is QpStatus.OPTIMAL
        assert sol.z == pytest.approx(np.array([0.5, -0.5]), abs=1e-9)


class TestLp:
    def test_unit_interval(self):
        # min x over 0 <= x <= 1  ->  0 at vertex x=0
        p = LpProblem(c=[1.0], A=[[1.0], [-1.0]], b=[0.0, -1.0])
        sol = solve_lp(p)
        assert sol.status is LpStatus.OPTIMAL
        assert sol.optimum == pytest.approx(0.0, abs=1e-9)
        assert sol.is_vertex

    def test_unit_box_corner(self):
        # min -x-y over the unit box  ->  -2 at (1,1)
        p = LpProblem(c=[-1.0, -1.0],
                      A=[[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                      b=[0.0, -1.0, 0.0, -1.0])
        sol = solve_lp(p)
        assert sol.status is LpStatus.OPTIMAL
        assert sol.optimum == pytest.approx(-2.0, abs=1e-9)
        assert sol.z == pytest.approx(np.array([1.0, 1.0]), abs=1e-9)
        assert sol.is_vertex

    def test_infeasible_unbounded(self):
        assert solve_lp(LpProblem(c=[1.0], A=[[1.0], [-1.0]], b=[1.0, 0.0])).status is LpStatus.INFEASIBLE
        assert solve_lp(LpProblem(c=[1.0], A=[[-1.0]], b=[-1.0])).status is LpStatus.UNBOUNDED

    def test_vertex_enumeration_cross_check(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            n = int(rng.integers(2, 5))
            c = rng.uniform(-1, 1, n)
            rows, rhs = [], []
            for k in range(n):  # box
                e = np.zeros(n)
                e[k] = 1.0
                rows += [e, -e]
                rhs += [rng.uniform(-2, -1), rng.uniform(-2, -1)]
            extra = rng.uniform(-1, 1, (2, n))
            rows += list(extra)
            rhs += list(extra @ np.zeros(n) - rng.uniform(1, 2, 2))  # keep 0 feasible
            p = LpProblem(c=c, A=np.array(rows), b=np.array(rhs))
            sol = solve_lp(p)
            assert sol.status is LpStatus.OPTIMAL
            vopt, vert = cross_check_vertex_optimum(p)
            assert sol.optimum == pytest.approx(vopt, abs=1e-6)
            assert sol.is_vertex

    def test_grid_oracle_agreement(self):
        # min over a box compared against a dense grid
        rng = np.random.default_rng(19)
        for _ in range(5):
            c = rng.uniform(-1, 1, 2)
            lo, hi = np.array([-1.0, -1.0]), np.array([1.0, 1.0])
            p = LpProblem(c=c,
                          A=[[1, 0], [-1, 0], [0, 1], [0, -1]],
                          b=[lo[0], -hi[0], lo[1], -hi[1]])
            sol = solve_lp(p)
            g = np.linspace(-1, 1, 201)
            grid_min = min(c[0] * a + c[1] * b2 for a in g for b2 in g)
            assert sol.optimum == pytest.approx(grid_min, abs=1e-6)

    def test_enumeration_guard(self):
        n = 13
        with pytest.raises(ValueError, match="12"):
            enumerate_vertices(LpProblem(c=np.zeros(n), A=np.eye(n), b=np.zeros(n)))
