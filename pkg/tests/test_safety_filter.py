import numpy as np
import pytest

from adcbf.safety_filter import (
    AffineBarrier,
    BarrierCandidate,
    ConstraintRow,
    QpInfeasibleError,
    QpProblem,
    build_adcbf_rows,
    build_nominal_rows,
    build_robust_rows,
    qp_solve,
)
from _oracles import qp_enumeration_oracle, qp_grid_oracle, stack_with_box


def acc_barrier(gamma_gain=10.0):
    # gap/speed barrier: B = -D + 1.8 v
    return AffineBarrier([[-1.0, 1.8]], [0.0], gamma_gain=gamma_gain)


class TestAdcbfRows:
    def test_zero_margin_reduces_to_certainty_equivalent(self):
        rng = np.random.default_rng(0)
        barrier = AffineBarrier([[1.0, 1.0], [1.0, -1.0]], [-2.0, -2.0], gamma_gain=10.0)
        x = rng.normal(size=2)
        phi = rng.normal(size=2)
        phi_prime = rng.normal(size=(2, 7))
        g = np.eye(2)
        rows = build_adcbf_rows(x, barrier, phi, phi_prime, g, chi=0.0, c_1=0.0)
        nom = build_nominal_rows(x, barrier, phi, g)
        for r, n in zip(rows, nom):
            assert r.a == pytest.approx(n.a)
            assert r.b == pytest.approx(n.b)

    def test_orthogonal_regressor_gives_zero_margin(self):
        barrier = AffineBarrier([[1.0, 0.0]], [0.0], gamma_gain=1.0)
        phi_prime = np.vstack([np.zeros(5), np.ones(5)])  # row 0 of grad picks zero rows
        x = np.array([0.3, -0.4])
        rows_small = build_adcbf_rows(x, barrier, np.zeros(2), phi_prime, np.eye(2), 0.0, 0.0)
        rows_big = build_adcbf_rows(x, barrier, np.zeros(2), phi_prime, np.eye(2), 100.0, 0.0)
        assert rows_small[0].b == pytest.approx(rows_big[0].b)

    def test_acc_row_matches_hand_expansion(self):
        # scalar expansion of the gap/speed constraint with lifted drift estimate
        m, v_lead, gamma_gain = 100.0, 10.0, 10.0
        D, v = 42.0, 14.0
        phi_v = -1.7  # network's speed-drift estimate
        chi, c_1 = 0.6, 0.05
        p = 9
        rng = np.random.default_rng(1)
        phi_prime_v = rng.normal(size=(1, p))
        barrier = acc_barrier(gamma_gain)
        phi_full = np.array([v_lead - v, phi_v])
        phi_prime_full = np.vstack([np.zeros((1, p)), phi_prime_v])
        g = np.array([[0.0], [1.0 / m]])
        (row,) = build_adcbf_rows([D, v], barrier, phi_full, phi_prime_full, g, chi, c_1)
        B = -D + 1.8 * v
        margin = 1.8 * np.linalg.norm(phi_prime_v) * (chi + c_1)
        b_hand = -gamma_gain * B + (v_lead - v) - 1.8 * phi_v - margin
        assert row.a == pytest.approx([1.8 / m])
        assert row.b == pytest.approx(b_hand)

    def test_margin_monotone_in_chi(self):
        barrier = acc_barrier()
        rng = np.random.default_rng(2)
        phi_full = rng.normal(size=2)
        phi_prime = rng.normal(size=(2, 11))
        g = np.array([[0.0], [0.01]])
        x = np.array([30.0, 12.0])
        bs = [
            build_adcbf_rows(x, barrier, phi_full, phi_prime, g, chi, 0.05)[0].b
            for chi in (0.0, 0.4, 1.1, 3.0)
        ]
        assert all(b2 <= b1 for b1, b2 in zip(bs, bs[1:]))


class TestRobustNominalRows:
    def test_zero_bound_equals_nominal(self):
        rng = np.random.default_rng(3)
        barrier = AffineBarrier([[1.0, 1.0], [-1.0, 1.0]], [-2.0, -2.0], gamma_gain=10.0)
        x = rng.normal(size=2)
        f_model = rng.normal(size=2)
        rob = build_robust_rows(x, barrier, f_model, 0.0, np.eye(2))
        nom = build_nominal_rows(x, barrier, f_model, np.eye(2))
        for r, n in zip(rob, nom):
            assert r.a == pytest.approx(n.a)
            assert r.b == pytest.approx(n.b)
            assert r.tag == "robust" and n.tag == "nominal"

    def test_acc_robust_matches_hand_expansion(self):
        # disturbance enters the speed channel only: margin is 1.8 * delta_bar
        m, v_lead, gamma_gain, delta_bar = 100.0, 10.0, 10.0, 30.0
        D, v = 55.0, 16.0
        F_r = 0.1 + 5.0 * v + 0.25 * v * v
        f_model = np.array([v_lead - v, -F_r / m])
        g = np.array([[0.0], [1.0 / m]])
        (row,) = build_robust_rows(
            [D, v], acc_barrier(gamma_gain), f_model, delta_bar, g, channel=np.array([[0.0], [1.0]])
        )
        B = -D + 1.8 * v
        b_hand = -gamma_gain * B + (v_lead - v) + 1.8 * F_r / m - 1.8 * delta_bar
        assert row.b == pytest.approx(b_hand)
        assert row.a == pytest.approx([1.8 / m])

    def test_margin_shrinks_feasible_interval(self):
        x = np.array([55.0, 16.0])
        f_model = np.array([-6.0, -0.65])
        g = np.array([[0.0], [1.0 / 100.0]])
        (rob,) = build_robust_rows(x, acc_barrier(), f_model, 30.0, g, np.array([[0.0], [1.0]]))
        (nom,) = build_nominal_rows(x, acc_barrier(), f_model, g)
        # a > 0, so the inequality is u <= b/a: smaller b means a smaller interval
        assert rob.b < nom.b

    def test_empty_barrier_gives_no_rows(self):
        barrier = BarrierCandidate(
            0, lambda x: np.zeros(0), lambda x: np.zeros((0, 2)), gamma_gain=1.0
        )
        assert build_nominal_rows([0.0, 0.0], barrier, np.zeros(2), np.eye(2)) == []


class TestQpSolve:
    def test_halfline_clamp(self):
        sol = qp_solve(QpProblem(np.array([0.0]), [ConstraintRow([1.0], -1.0)]))
        assert sol.u_star == pytest.approx([-1.0])
        assert sol.active_set == (0,)

    def test_halfspace_projection(self):
        # closed form: u_nom - a (a.u_nom - b)/|a|^2
        sol = qp_solve(QpProblem(np.array([1.0, 1.0]), [ConstraintRow([1.0, 1.0], 0.0)]))
        assert sol.u_star == pytest.approx([0.0, 0.0], abs=1e-12)

    def test_feasible_nominal_returned_exactly(self):
        u_nom = np.array([0.37, -1.24])
        rows = [ConstraintRow([1.0, 0.0], 5.0), ConstraintRow([0.0, -1.0], 9.0)]
        sol = qp_solve(QpProblem(u_nom, rows))
        assert np.array_equal(sol.u_star, u_nom)
        assert sol.active_set == ()
        assert sol.kkt_residual == 0.0

    def test_infeasible_raises_with_certificate(self):
        rows = [ConstraintRow([1.0], -1.0), ConstraintRow([-1.0], -1.0)]
        with pytest.raises(QpInfeasibleError) as exc:
            qp_solve(QpProblem(np.array([0.0]), rows))
        err = exc.value
        assert err.violation == pytest.approx(1.0, abs=1e-6)
        assert abs(err.u_best[0]) < 1e-6

    def test_complementary_slackness_and_kkt(self):
        rng = np.random.default_rng(4)
        for _ in range(300):
            m = int(rng.integers(1, 4))
            d = int(rng.integers(1, 7))
            A = rng.normal(size=(m, d))
            anchor = rng.uniform(-1, 1, size=m)
            b = A.T @ anchor + rng.uniform(0.05, 1.0, size=d)
            u_nom = rng.uniform(-1.8, 1.8, size=m)
            rows = [ConstraintRow(A[:, i], b[i]) for i in range(d)]
            sol = qp_solve(QpProblem(u_nom, rows, lb=-2 * np.ones(m), ub=2 * np.ones(m)))
            assert sol.kkt_residual < 1e-9
            A_full, b_full = stack_with_box(A, b, 2.0)
            slack = b_full - A_full.T @ sol.u_star
            for j, lam in sol.multipliers.items():
                assert abs(lam * slack[j]) < 1e-9

    def test_matches_grid_then_enumeration_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(800):
            m = int(rng.integers(1, 4))
            d = int(rng.integers(1, 7))
            A = rng.normal(size=(m, d))
            anchor = rng.uniform(-1, 1, size=m)
            b = A.T @ anchor + rng.uniform(0.05, 1.0, size=d)
            u_nom = rng.uniform(-1.8, 1.8, size=m)
            rows = [ConstraintRow(A[:, i], b[i]) for i in range(d)]
            sol = qp_solve(QpProblem(u_nom, rows, lb=-2 * np.ones(m), ub=2 * np.ones(m)))
            A_full, b_full = stack_with_box(A, b, 2.0)
            coarse = qp_grid_oracle(A_full, b_full, u_nom)
            if coarse is not None:
                # any feasible grid point is an upper bound on the optimum
                obj_coarse = float(np.sum((coarse - u_nom) ** 2))
                assert float(np.sum((sol.u_star - u_nom) ** 2)) <= obj_coarse + 1e-9
            exact = qp_enumeration_oracle(A_full, b_full, u_nom)
            assert np.max(np.abs(sol.u_star - exact)) < 1e-4
            obj = float(np.sum((sol.u_star - u_nom) ** 2))
            obj_ref = float(np.sum((exact - u_nom) ** 2))
            assert abs(obj - obj_ref) < 1e-6

    def test_box_only(self):
        sol = qp_solve(QpProblem(np.array([3.0, -5.0]), [], lb=-np.ones(2), ub=np.ones(2)))
        assert sol.u_star == pytest.approx([1.0, -1.0])

    def test_committed_oracle_fixtures(self):
        # frozen instances with oracle solutions, stable across platforms
        import json
        import pathlib

        path = pathlib.Path(__file__).parent / "fixtures" / "qp_oracle_cases.json"
        for case in json.loads(path.read_text())["cases"]:
            A = np.asarray(case["A"])
            b = np.asarray(case["b"])
            u_nom = np.asarray(case["u_nom"])
            m = u_nom.size
            rows = [ConstraintRow(A[:, i], b[i]) for i in range(A.shape[1])]
            sol = qp_solve(
                QpProblem(u_nom, rows, lb=-case["box"] * np.ones(m), ub=case["box"] * np.ones(m))
            )
            assert sol.u_star == pytest.approx(np.asarray(case["u_star"]), abs=1e-9)
