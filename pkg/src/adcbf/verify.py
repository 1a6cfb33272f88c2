"""Built-in invariant suite backing the ``verify`` command.

Each check pits an implementation against an independent computation:
finite differences for the network Jacobian, exhaustive face enumeration for
the QP, a long randomized soak for the gain matrix, bisection inversion for
the dwell-time formula, and a short closed-loop run for the prediction-error
envelope.  ``mutate`` deliberately corrupts one component so the suite's
ability to catch regressions can itself be demonstrated.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from adcbf.harness import SimConfig, simulate
from adcbf.identifier import (
    AdaptationState,
    GainConfig,
    adapt_step,
    chi_theta,
    derive_bound_constants,
)
from adcbf.intermittent import LossConstants, max_dwell_time
from adcbf.nn import DnnArchitecture, WeightVector, forward, jacobian_weights
from adcbf.safety_filter import ConstraintRow, QpProblem, qp_solve
from adcbf.scenarios import NonPolyScenario


def _random_arch(rng) -> DnnArchitecture:
    k = int(rng.integers(0, 4))
    widths = tuple(int(rng.integers(2, 7)) for _ in range(k))
    tags = tuple(rng.choice(["tanh", "swish"]) for _ in range(k))
    shorts = tuple(bool(rng.integers(0, 2)) for _ in range(k + 1))
    return DnnArchitecture(
        int(rng.integers(1, 5)), int(rng.integers(1, 4)), widths, tags, shorts
    )


def check_jacobian_fd(mutate: str | None = None, nets: int = 20):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(nets):
        arch = _random_arch(rng)
        theta = WeightVector.random_normal(arch, rng, 1.0)
        sigma = rng.normal(size=arch.input_dim)
        jac = jacobian_weights(arch, theta, sigma)
        if mutate == "jacobian":
            jac = jac.copy()
            jac[0, 0] += 1e-3
        h = 1e-6
        fd = np.empty_like(jac)
        base = theta.theta
        for i in range(arch.param_count):
            tp = base.copy()
            tp[i] += h
            tm = base.copy()
            tm[i] -= h
            fd[:, i] = (forward(arch, tp, sigma) - forward(arch, tm, sigma)) / (2 * h)
        worst = max(worst, float(np.max(np.abs(jac - fd)) / max(1.0, np.max(np.abs(jac)))))
    ok = worst < 1e-5
    return "jacobian-vs-finite-difference", ok, f"max relative deviation {worst:.3e} over {nets} nets"


def qp_enumeration_oracle(A: np.ndarray, b: np.ndarray, u_nom: np.ndarray, tol: float = 1e-9):
    """Exact minimum-deviation solution by enumerating candidate active faces."""
    m, d = A.shape
    if d == 0 or np.all(A.T @ u_nom <= b + tol):
        return u_nom.copy()
    best, best_obj = None, math.inf
    for size in range(1, m + 1):
        for S in itertools.combinations(range(d), size):
            As = A[:, S]
            try:
                lam = np.linalg.solve(As.T @ As, As.T @ u_nom - b[list(S)])
            except np.linalg.LinAlgError:
                continue
            if np.any(lam < -tol):
                continue
            u = u_nom - As @ lam
            if np.all(A.T @ u <= b + 1e-7 * np.maximum(1.0, np.abs(b))):
                obj = float(np.sum((u - u_nom) ** 2))
                if obj < best_obj:
                    best, best_obj = u, obj
    return best


def random_qp_instance(rng):
    m = int(rng.integers(1, 4))
    d = int(rng.integers(1, 7))
    A = rng.normal(size=(m, d))
    anchor = rng.uniform(-1.0, 1.0, size=m)
    b = A.T @ anchor + rng.uniform(0.05, 1.0, size=d)
    u_nom = rng.uniform(-1.8, 1.8, size=m)
    return A, b, u_nom


def check_qp_oracle(instances: int = 400):
    rng = np.random.default_rng(7)
    worst_u = worst_kkt = 0.0
    for _ in range(instances):
        A, b, u_nom = random_qp_instance(rng)
        m = u_nom.size
        rows = [ConstraintRow(A[:, i], b[i]) for i in range(A.shape[1])]
        sol = qp_solve(QpProblem(u_nom, rows, lb=-2 * np.ones(m), ub=2 * np.ones(m)))
        eye = np.eye(m)
        A_full = np.concatenate([A, eye, -eye], axis=1)
        b_full = np.concatenate([b, 2 * np.ones(m), 2 * np.ones(m)])
        u_ref = qp_enumeration_oracle(A_full, b_full, u_nom)
        worst_u = max(worst_u, float(np.max(np.abs(sol.u_star - u_ref))))
        worst_kkt = max(worst_kkt, sol.kkt_residual)
    ok = worst_u < 1e-6 and worst_kkt < 1e-9
    return (
        "qp-vs-enumeration-oracle",
        ok,
        f"max |u - u_ref| {worst_u:.3e}, max KKT residual {worst_kkt:.3e} over {instances} instances",
    )


def check_gamma_soak(steps: int = 20000, p: int = 16):
    rng = np.random.default_rng(11)
    gains = GainConfig(
        k_x=5, k_f=10, k_theta=0.001, alpha=50, beta_0=2, kappa_0=3, gamma_init_scale=2
    )
    state = AdaptationState(np.zeros(p), gains.gamma_init_scale * np.eye(p), gains.gamma_init_scale)
    dt = 0.005
    worst_hi, worst_lo = -math.inf, math.inf
    for k in range(steps):
        phi_prime = rng.normal(size=(2, p)) * (1.0 if k % 97 else 10.0)
        f_hat = rng.normal(size=2)
        state = adapt_step(state, np.zeros(2), phi_prime, f_hat, dt, gains, proj_radius=50.0)
        if k % 100 == 0 or k == steps - 1:
            evals = np.linalg.eigvalsh(state.gamma)
            worst_hi = max(worst_hi, float(evals[-1]))
            worst_lo = min(worst_lo, float(evals[0]))
    ok = worst_hi <= gains.kappa_0 + 1e-9 and worst_lo > 0.0
    return (
        "gain-matrix-soak",
        ok,
        f"eigenvalues stayed in ({worst_lo:.3e}, {worst_hi:.9f}] over {steps} steps (cap {gains.kappa_0})",
    )


def check_chi_monotone():
    gains = GainConfig(k_x=5, k_f=10, k_theta=0.2, alpha=50, beta_0=2, kappa_0=3, gamma_init_scale=5)
    bc = derive_bound_constants(
        gains, f_bar=1.0, f_dot_bar=0.2, c_1=0.05, c_2=0.05, theta_bar=0.5, Xi=3.0, beta_1=0.9,
        kappa_1=1.0,
    )
    ts = np.linspace(0.0, 400.0, 4001)
    vals = np.array([chi_theta(t, bc) for t in ts])
    limit = math.sqrt(bc.lambda_2 * bc.C / (bc.lambda_1 * bc.lambda_3))
    ok = bool(
        np.all(np.diff(vals) <= 1e-12)
        and np.all(vals <= bc.Xi + 1e-12)
        and abs(vals[-1] - min(bc.Xi, limit)) < 1e-6
    )
    return (
        "chi-envelope-monotone",
        ok,
        f"non-increasing, capped at {bc.Xi}, limit {vals[-1]:.4f} (ultimate bound {limit:.4f})",
    )


def check_envelope_domination():
    scenario = NonPolyScenario()
    cfg = SimConfig(method="adcbf", seed=0, duration=6.0, loss_windows=((2.0, 3.0),))
    records, summary = simulate(scenario, cfg)
    worst = -math.inf
    count = 0
    for r in records:
        if r.x_pred is not None:
            gap = float(np.linalg.norm(r.x_true - r.x_pred)) - r.envelope
            worst = max(worst, gap)
            count += 1
    ok = count > 0 and worst <= 0.0 and not summary.aborted
    return (
        "prediction-envelope-domination",
        ok,
        f"max (error - envelope) = {worst:.3e} over {count} loss steps",
    )


def check_dwell_time():
    cases = [
        LossConstants(L_U=1.0, Delta_U=0.5, rho=0.0, B_bar=1.0, u_bar=2.0),
        LossConstants(L_U=1.5, Delta_U=0.3, rho=0.1, B_bar=math.sqrt(2.0), u_bar=70.0),
        LossConstants(L_U=0.4, Delta_U=0.05, rho=0.0, B_bar=2.0, u_bar=5.0),
    ]
    worst = 0.0
    for lc, headroom in zip(cases, (6.0, 11.0, 2.5)):
        C_bar = headroom + 6.0 * lc.B_bar * lc.Delta_U + 1.25
        dwell = max_dwell_time(lc, C_bar, 1.25)
        # Independent spot evaluation, written out term by term.
        lam = 2.0 * lc.L_U + lc.Delta_U
        delta = 2.0 * lc.Delta_U / lam
        target = headroom / (6.0 * lc.L_U * lc.B_bar)
        direct = (math.log(target * target + 1.0) - math.log(delta)) / lam
        worst = max(worst, abs(dwell - direct))
    ok = worst < 1e-12
    return "dwell-time-formula", ok, f"max |formula - direct evaluation| = {worst:.3e} s"


def run_all(mutate: str | None = None):
    return [
        check_jacobian_fd(mutate=mutate),
        check_qp_oracle(),
        check_gamma_soak(),
        check_chi_monotone(),
        check_envelope_domination(),
        check_dwell_time(),
    ]
