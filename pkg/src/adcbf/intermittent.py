"""Open-loop prediction and constraint hardening while feedback is denied.

When measurements drop out, the last identified model propagates a state
prediction forward and the safety constraints are rebuilt around it with an
exponentially growing bound on the prediction error.  A dwell-time formula
gives the longest outage the hardened constraint can tolerate for a chosen
feasibility budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from adcbf.nn import WeightVector, forward
from adcbf.safety_filter import BarrierCandidate, ConstraintRow


class DwellTimeError(ValueError):
    """No positive feedback-denial duration satisfies the budget."""


@dataclass(frozen=True)
class LossConstants:
    """Growth and mismatch constants governing the prediction-error envelope.

    ``L_U`` is the Lipschitz rate of the frozen model plus input map,
    ``Delta_U`` the frozen-model mismatch bound, ``rho`` the Lipschitz
    constant of the barrier gradient (zero for affine barriers), ``B_bar``
    a global bound on the gradient norm, and ``u_bar`` a cap on the input
    norm used to keep the hardened rows affine.
    """

    L_U: float
    Delta_U: float
    rho: float
    B_bar: float
    u_bar: float

    def __post_init__(self):
        for name in ("L_U", "Delta_U", "rho", "B_bar", "u_bar"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss constant {name} must be non-negative")

    @property
    def lambda_U(self) -> float:
        return 2.0 * self.L_U + self.Delta_U

    @property
    def delta_U(self) -> float:
        lam = self.lambda_U
        return 0.0 if lam == 0.0 else 2.0 * self.Delta_U / lam


@dataclass(frozen=True, eq=False)
class PredictorState:
    """Open-loop state prediction seeded at the last available measurement."""

    X_hat: np.ndarray
    theta_frozen: WeightVector
    t_loss_start: float

    @classmethod
    def seed(cls, x_meas, theta: WeightVector, t: float) -> "PredictorState":
        return cls(np.asarray(x_meas, dtype=float).reshape(-1).copy(), theta, float(t))


def predictor_step(
    state: PredictorState,
    u,
    g_eval,
    dt: float,
    drift_eval=None,
) -> PredictorState:
    """Advance the prediction one interval with the input held constant.

    Integrates ``Xdot = model(X) + g(X) u`` with the same fixed-step scheme
    the plant uses (classical Runge-Kutta).  ``drift_eval`` overrides the
    frozen-network drift when the identified model only covers part of the
    state equation.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    if drift_eval is None:
        arch = state.theta_frozen.arch
        drift_eval = lambda X: forward(arch, state.theta_frozen, X)  # noqa: E731

    def rhs(X):
        return drift_eval(X) + np.atleast_2d(np.asarray(g_eval(X), dtype=float)) @ u

    X = state.X_hat
    k1 = rhs(X)
    k2 = rhs(X + 0.5 * dt * k1)
    k3 = rhs(X + 0.5 * dt * k2)
    k4 = rhs(X + dt * k3)
    X_new = X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(X_new)):
        raise RuntimeError("open-loop prediction diverged")
    return replace(state, X_hat=X_new)


def xtilde_envelope(t: float, lc: LossConstants, t_loss_start: float) -> float:
    """Bound on the prediction error after ``t - t_loss_start`` without feedback."""
    dt = t - t_loss_start
    if dt < 0:
        raise ValueError("t must not precede the loss onset")
    if lc.delta_U == 0.0:
        return 0.0
    return math.sqrt(lc.delta_U * (math.expm1(lc.lambda_U * dt)))


def build_no_feedback_rows(
    X_hat,
    barrier: BarrierCandidate,
    theta_frozen: WeightVector,
    g_eval,
    lc: LossConstants,
    t: float,
    t_loss_start: float,
    drift_eval=None,
) -> list[ConstraintRow]:
    """Constraint rows hardened by the prediction-error envelope.

    All input-independent terms move to the offset; the one term that couples
    the envelope to the input norm is replaced by its constant upper bound
    ``|model| + |g| u_bar`` so the rows stay affine.  On top of the
    derivative margins, the barrier value itself is tightened by
    ``|grad B_i| * envelope`` before the decay gain is applied: the predicted
    state is then held inside a set shrunk by the worst-case prediction
    error, so the true state stays safe whenever the envelope dominates.
    Both adjustments only ever make the rows more conservative than the
    exact hardened constraint.
    """
    X_hat = np.asarray(X_hat, dtype=float).reshape(-1)
    if drift_eval is None:
        arch = theta_frozen.arch
        drift_eval = lambda X: forward(arch, theta_frozen, X)  # noqa: E731
    phi = np.asarray(drift_eval(X_hat), dtype=float).reshape(-1)
    g = np.atleast_2d(np.asarray(g_eval(X_hat), dtype=float))
    env = xtilde_envelope(t, lc, t_loss_start)
    inflation = lc.L_U * env + lc.Delta_U
    grads = barrier.grad(X_hat)
    gammas = barrier.gamma(X_hat)
    speed_bound = float(np.linalg.norm(phi)) + float(np.linalg.norm(g, 2)) * lc.u_bar
    rows = []
    for i in range(barrier.dim):
        gi = grads[i]
        grad_norm = float(np.linalg.norm(gi))
        b = (
            -gammas[i]
            - barrier.gamma_gain * grad_norm * env
            - float(gi @ phi)
            - grad_norm * inflation
            - env * lc.rho * (inflation + speed_bound)
        )
        rows.append(ConstraintRow(g.T @ gi, b, tag="no-feedback"))
    return rows


def k_u_offset(lc: LossConstants, phi_norm: float, g_norm: float) -> float:
    """Input- and model-magnitude contribution to the dwell-time budget."""
    return 4.0 * lc.B_bar * phi_norm + 4.0 * lc.B_bar * g_norm * lc.u_bar


def max_dwell_time(lc: LossConstants, C_bar: float, K_U: float) -> float:
    """Longest feedback outage for which the hardened constraint stays within budget.

    ``C_bar`` is the acceptable offset between the hardened and the exact
    constraint; ``K_U`` the magnitude offset from :func:`k_u_offset`.
    """
    headroom = C_bar - 6.0 * lc.B_bar * lc.Delta_U - K_U
    if headroom <= 0:
        raise DwellTimeError(
            "no safe dwell time: budget does not cover the mismatch and magnitude offsets"
        )
    denom = 6.0 * lc.L_U * lc.B_bar
    if lc.delta_U == 0.0 or denom == 0.0:
        return math.inf
    ratio = (headroom / denom) ** 2 + 1.0
    return (1.0 / lc.lambda_U) * math.log(ratio / lc.delta_U)
