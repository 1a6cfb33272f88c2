import math

import numpy as np
import pytest

from adcbf.intermittent import (
    DwellTimeError,
    LossConstants,
    PredictorState,
    build_no_feedback_rows,
    k_u_offset,
    max_dwell_time,
    predictor_step,
    xtilde_envelope,
)
from adcbf.nn import DnnArchitecture, WeightVector, forward
from adcbf.safety_filter import AffineBarrier


def diamond(gamma_gain=10.0):
    G = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    return AffineBarrier(G, [-2.0, -2.0, -2.0, -2.0], gamma_gain=gamma_gain)


def small_net(rng=None, std=0.4):
    arch = DnnArchitecture(2, 2, (4,), ("tanh",), (True, True))
    rng = rng or np.random.default_rng(0)
    return WeightVector.random_normal(arch, rng, std)


class TestPredictor:
    def test_zero_dynamics_constant(self):
        arch = DnnArchitecture(2, 2, (3,), ("tanh",), (False, False))
        st = PredictorState.seed([0.4, -0.2], WeightVector.zeros(arch), 0.0)
        for _ in range(100):
            st = predictor_step(st, np.zeros(2), lambda X: np.eye(2), 0.01)
        assert st.X_hat == pytest.approx([0.4, -0.2], abs=1e-15)

    def test_perfect_model_twin_simulation(self):
        # plant drift IS the frozen network: same integrator, so the open-loop
        # prediction reproduces the state to integration accuracy
        theta = small_net()
        arch = theta.arch

        def drift(x):
            return forward(arch, theta, x)

        g = lambda X: np.eye(2)  # noqa: E731
        dt = 0.005
        x = np.array([0.1, -0.3])
        st = PredictorState.seed(x, theta, 0.0)
        rng = np.random.default_rng(1)
        for k in range(400):
            u = 0.3 * np.array([math.sin(0.7 * k * dt), math.cos(1.3 * k * dt)])
            # plant step (classical Runge-Kutta, same as the predictor)
            f = lambda xx: drift(xx) + u  # noqa: E731
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            st = predictor_step(st, u, g, dt)
        assert st.X_hat == pytest.approx(x, abs=1e-12)

    def test_seed_resets_exactly(self):
        theta = small_net()
        st = PredictorState.seed([1.0, 2.0], theta, 3.5)
        assert np.array_equal(st.X_hat, [1.0, 2.0])
        assert st.t_loss_start == 3.5


class TestEnvelope:
    def test_zero_at_onset(self):
        lc = LossConstants(L_U=1.0, Delta_U=0.5, rho=0.0, B_bar=1.0, u_bar=1.0)
        assert xtilde_envelope(4.0, lc, 4.0) == 0.0

    def test_zero_mismatch_zero_envelope(self):
        lc = LossConstants(L_U=1.0, Delta_U=0.0, rho=0.0, B_bar=1.0, u_bar=1.0)
        for t in (0.0, 0.5, 3.0):
            assert xtilde_envelope(t, lc, 0.0) == 0.0

    def test_unit_case(self):
        # lambda = 1, delta = 1 requires 2 L + Delta = 1 and 2 Delta = 1
        lc = LossConstants(L_U=0.25, Delta_U=0.5, rho=0.0, B_bar=1.0, u_bar=1.0)
        assert lc.lambda_U == pytest.approx(1.0)
        assert lc.delta_U == pytest.approx(1.0)
        assert xtilde_envelope(math.log(2.0), lc, 0.0) == pytest.approx(1.0, abs=1e-15)

    def test_strictly_increasing(self):
        lc = LossConstants(L_U=1.5, Delta_U=0.3, rho=0.0, B_bar=1.0, u_bar=1.0)
        ts = np.linspace(0.0, 1.0, 200)
        vals = [xtilde_envelope(t, lc, 0.0) for t in ts]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestNoFeedbackRows:
    def test_zero_mismatch_at_onset_reduces_to_certainty_equivalent(self):
        theta = small_net()
        lc = LossConstants(L_U=1.0, Delta_U=0.0, rho=0.0, B_bar=math.sqrt(2), u_bar=10.0)
        X = np.array([0.2, 0.1])
        rows = build_no_feedback_rows(X, diamond(), theta, lambda x: np.eye(2), lc, 0.0, 0.0)
        phi = forward(theta.arch, theta, X)
        barrier = diamond()
        B, G = barrier.value(X), barrier.grad(X)
        for i, r in enumerate(rows):
            assert r.a == pytest.approx(G[i])
            assert r.b == pytest.approx(-10.0 * B[i] - float(G[i] @ phi))
            assert r.tag == "no-feedback"

    def test_affine_barrier_margins(self):
        # rho = 0: the row carries the gradient-inflation margin plus the
        # envelope set-shrink of the barrier value; the input-norm term is gone
        theta = small_net()
        lc = LossConstants(L_U=1.0, Delta_U=0.3, rho=0.0, B_bar=math.sqrt(2), u_bar=10.0)
        X = np.array([0.0, 0.0])
        t = 0.4
        rows = build_no_feedback_rows(X, diamond(), theta, lambda x: np.eye(2), lc, t, 0.0)
        env = xtilde_envelope(t, lc, 0.0)
        phi = forward(theta.arch, theta, X)
        barrier = diamond()
        B, G = barrier.value(X), barrier.grad(X)
        for i, r in enumerate(rows):
            expect = (
                -10.0 * (B[i] + math.sqrt(2.0) * env)
                - float(G[i] @ phi)
                - math.sqrt(2.0) * (lc.L_U * env + lc.Delta_U)
            )
            assert r.b == pytest.approx(expect)

    def test_rows_dominate_exact_constraint_on_grid(self):
        # curved-barrier case (rho > 0): the affine rows must be at least as
        # conservative as the exact expression everywhere in the input box
        rng = np.random.default_rng(3)
        theta = small_net(rng)
        u_box = 2.0
        lc = LossConstants(L_U=1.2, Delta_U=0.25, rho=0.7, B_bar=2.0, u_bar=math.sqrt(2) * u_box)
        barrier = AffineBarrier([[0.6, 1.1], [-1.0, 0.2]], [-1.5, -1.0], gamma_gain=5.0)
        X = np.array([0.3, -0.2])
        t, t0 = 0.7, 0.2
        rows = build_no_feedback_rows(X, barrier, theta, lambda x: np.eye(2), lc, t, t0)
        env = xtilde_envelope(t, lc, t0)
        phi = forward(theta.arch, theta, X)
        G, gam = barrier.grad(X), barrier.gamma(X)
        grid = np.linspace(-u_box, u_box, 21)
        for i, r in enumerate(rows):
            for u1 in grid:
                for u2 in grid:
                    u = np.array([u1, u2])
                    exact = (
                        env * lc.rho * (lc.L_U * env + lc.Delta_U + np.linalg.norm(phi + u))
                        + np.linalg.norm(G[i]) * (lc.L_U * env + lc.Delta_U)
                        + float(G[i] @ (phi + u))
                        + gam[i]
                    )
                    affine = float(r.a @ u) - r.b
                    assert affine >= exact - 1e-9


class TestDwellTime:
    def test_spec_instance_direct_evaluation(self):
        # L=1, Delta=0.5: lambda = 2.5, delta = 0.4; headroom 6 over 6 L B
        lc = LossConstants(L_U=1.0, Delta_U=0.5, rho=0.0, B_bar=1.0, u_bar=1.0)
        C_bar = 6.0 + 6.0 * 1.0 * 0.5 + 2.0
        dwell = max_dwell_time(lc, C_bar, K_U=2.0)
        direct = (1.0 / 2.5) * math.log((1.0 / 0.4) * ((6.0 / 6.0) ** 2 + 1.0))
        assert dwell == pytest.approx(direct, abs=1e-12)
        assert dwell == pytest.approx(0.4 * math.log(5.0), abs=1e-12)

    def test_no_headroom_is_an_error(self):
        lc = LossConstants(L_U=1.0, Delta_U=0.5, rho=0.0, B_bar=1.0, u_bar=1.0)
        K_U = 2.0
        with pytest.raises(DwellTimeError):
            max_dwell_time(lc, 6.0 * 1.0 * 0.5 + K_U, K_U)

    def test_vanishing_mismatch_gives_unbounded_dwell(self):
        lc = LossConstants(L_U=1.0, Delta_U=0.0, rho=0.0, B_bar=1.0, u_bar=1.0)
        assert max_dwell_time(lc, 10.0, 1.0) == math.inf
        small = LossConstants(L_U=1.0, Delta_U=1e-9, rho=0.0, B_bar=1.0, u_bar=1.0)
        assert max_dwell_time(small, 10.0, 1.0) > 8.0

    def test_k_u_offset(self):
        lc = LossConstants(L_U=1.0, Delta_U=0.5, rho=0.0, B_bar=2.0, u_bar=3.0)
        assert k_u_offset(lc, phi_norm=1.5, g_norm=0.5) == pytest.approx(
            4.0 * 2.0 * 1.5 + 4.0 * 2.0 * 0.5 * 3.0
        )

    def test_outages_within_dwell_time_keep_qp_feasible(self):
        # reduced-scale version of the 50-trial claim: outages no longer than
        # the zero-headroom dwell time never empty the constraint set
        from adcbf.harness import SimConfig, simulate
        from adcbf.scenarios import NonPolyScenario

        scenario = NonPolyScenario()
        lc = scenario.loss_constants(t_onset=5.0)
        dwell_floor = math.log(1.0 / lc.delta_U) / lc.lambda_U  # headroom -> 0 limit
        length = min(0.9, 0.95 * dwell_floor)
        assert length > 0.5
        for trial in range(10):
            rng = np.random.default_rng(300 + trial)
            start = float(rng.uniform(3.0, 8.0))
            rec, s = simulate(
                scenario,
                SimConfig(
                    method="adcbf",
                    seed=300 + trial,
                    duration=10.0,
                    loss_windows=((start, start + length),),
                ),
            )
            assert not s.aborted
            assert all(r.qp_feasible for r in rec if not r.feedback)
