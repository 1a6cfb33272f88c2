"""Online identification: derivative estimator, gain update, error envelope.

The drift of the plant is reconstructed by a high-gain estimator whose
implementable form only ever integrates the measurable state mismatch, and
the network weights follow a least-squares law whose time-varying gain matrix
carries a bounded-gain forgetting factor.  From user-supplied problem bounds
the module also derives the constants of a computable, monotonically
shrinking envelope on the weight estimation error; the safety filter consumes
that envelope as its robustness margin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from adcbf.nn import WeightVector


class GainConditionError(ValueError):
    """A gain inequality required for the error envelope does not hold."""


class AdaptationFault(RuntimeError):
    """Numerical failure of an identifier step (usually dt too large)."""


@dataclass(frozen=True)
class GainConfig:
    """Estimator and adaptation gains.

    All gains are strictly positive except the leakage ``k_theta``, which may
    be zero (leakage disabled).
    """

    k_x: float
    k_f: float
    k_theta: float
    alpha: float
    beta_0: float
    kappa_0: float
    gamma_init_scale: float

    def __post_init__(self):
        for name in ("k_x", "k_f", "alpha", "beta_0", "kappa_0", "gamma_init_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"gain {name} must be strictly positive")
        if self.k_theta < 0:
            raise ValueError("gain k_theta must be non-negative")

    @property
    def gamma_floor(self) -> float:
        """Eigenvalue floor used when clipping the adaptation gain."""
        return 1e-6 * self.gamma_init_scale


@dataclass(frozen=True)
class BoundConstants:
    """Constants of the weight-error envelope and the gain conditions."""

    lambda_1: float
    lambda_2: float
    lambda_3: float
    C: float
    Xi: float
    theta_bar: float
    f_bar: float
    f_dot_bar: float
    c_1: float
    c_2: float
    kappa_1: float
    beta_1: float
    Z: float
    epsilon_bar: float = 0.0


def derive_bound_constants(
    gains: GainConfig,
    *,
    f_bar: float,
    f_dot_bar: float,
    c_1: float,
    c_2: float,
    theta_bar: float,
    Xi: float,
    beta_1: float = 0.0,
    kappa_1: float | None = None,
    epsilon_bar: float = 0.0,
) -> BoundConstants:
    """Assemble envelope constants, rejecting gain sets with no decay rate.

    The three candidate rates come from the state estimator, the derivative
    estimator, and the forgetting/leakage pair; the envelope decays at the
    smallest of them, which must be positive.
    """
    if kappa_1 is None:
        kappa_1 = gains.gamma_floor
    if kappa_1 <= 0:
        raise GainConditionError("kappa_1 must be strictly positive")
    lambda_1 = min(0.5, 1.0 / (2.0 * gains.kappa_0))
    lambda_2 = max(0.5, 1.0 / (2.0 * kappa_1))
    terms = {
        "k_x": gains.k_x,
        "k_f - f_dot_bar/2 - c_2/2": gains.k_f - f_dot_bar / 2.0 - c_2 / 2.0,
        "beta_1/(2 kappa_0) + k_theta/2 - c_2": beta_1 / (2.0 * gains.kappa_0)
        + gains.k_theta / 2.0
        - c_2,
    }
    name, lambda_3 = min(terms.items(), key=lambda kv: kv[1])
    if lambda_3 <= 0:
        raise GainConditionError(
            f"decay rate is non-positive: violated term {name!r} = {lambda_3:.6g}"
        )
    C = (f_dot_bar + c_2 * c_1**2 + gains.k_theta * theta_bar**2) / 2.0
    Z = math.sqrt(Xi**2 + 4.0 * f_bar**2)
    return BoundConstants(
        lambda_1=lambda_1,
        lambda_2=lambda_2,
        lambda_3=lambda_3,
        C=C,
        Xi=Xi,
        theta_bar=theta_bar,
        f_bar=f_bar,
        f_dot_bar=f_dot_bar,
        c_1=c_1,
        c_2=c_2,
        kappa_1=kappa_1,
        beta_1=beta_1,
        Z=Z,
        epsilon_bar=epsilon_bar,
    )


def chi_theta(t: float, bc: BoundConstants) -> float:
    """Computable envelope on the weight estimation error at time ``t``.

    Decays exponentially from the initial-error level toward the ultimate
    bound, clamped above by the convexity radius ``Xi``.
    """
    if bc.lambda_3 <= 0:
        raise GainConditionError("chi_theta requires lambda_3 > 0")
    decay = math.exp(-bc.lambda_3 / bc.lambda_2 * t)
    inner = (bc.lambda_2 / bc.lambda_1) * bc.Z**2 * decay + (
        bc.lambda_2 * bc.C / (bc.lambda_1 * bc.lambda_3)
    ) * (1.0 - decay)
    return min(bc.Xi, math.sqrt(max(inner, 0.0)))


# ---------------------------------------------------------------------------
# State-derivative estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorState:
    """State of the high-gain derivative estimator.

    ``f_hat`` is reconstructed from the measurable mismatch alone:
    ``f_hat = f_base + k_f * xtilde - f_hat_anchor + integral_accumulator``,
    where the anchor is ``k_f * xtilde`` at the last reset (zero whenever the
    estimate is re-seeded from a fresh measurement).
    """

    x_hat: np.ndarray
    f_hat: np.ndarray
    integral_accumulator: np.ndarray
    f_hat_anchor: np.ndarray
    xtilde: np.ndarray
    f_base: np.ndarray

    @classmethod
    def initialize(cls, x0, f_hat0=None) -> "EstimatorState":
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        f0 = np.zeros_like(x0) if f_hat0 is None else np.asarray(f_hat0, dtype=float).reshape(-1)
        zero = np.zeros_like(x0)
        return cls(x0.copy(), f0.copy(), zero.copy(), zero.copy(), zero.copy(), f0.copy())

    def reset(self, x_meas) -> "EstimatorState":
        """Re-seed on feedback restoration: mismatch becomes exactly zero."""
        x_meas = np.asarray(x_meas, dtype=float).reshape(-1)
        zero = np.zeros_like(x_meas)
        return EstimatorState(
            x_hat=x_meas.copy(),
            f_hat=self.f_hat.copy(),
            integral_accumulator=zero.copy(),
            f_hat_anchor=zero.copy(),
            xtilde=zero.copy(),
            f_base=self.f_hat.copy(),
        )


def estimator_step(
    state: EstimatorState,
    x,
    u,
    g_of_x,
    dt: float,
    gains: GainConfig,
    step: int | None = None,
) -> EstimatorState:
    """Advance the estimator one interval and assimilate the new measurement.

    The internal state is propagated with the previously applied input (held
    over the interval), then the incoming measurement updates the mismatch,
    the trapezoidal accumulator, and the reconstructed drift estimate.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    u = np.asarray(u, dtype=float).reshape(-1)
    g_of_x = np.atleast_2d(np.asarray(g_of_x, dtype=float))
    if dt <= 0:
        raise ValueError("dt must be positive")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        where = "" if step is None else f" at step {step}"
        raise AdaptationFault(f"non-finite estimator input{where}")
    x_hat = state.x_hat + dt * (state.f_hat + g_of_x @ u + gains.k_x * state.xtilde)
    if not np.all(np.isfinite(x_hat)):
        where = "" if step is None else f" at step {step}"
        raise AdaptationFault(f"estimator state diverged{where}")
    xtilde = x - x_hat
    acc = state.integral_accumulator + dt * (gains.k_f * gains.k_x + 1.0) * 0.5 * (
        state.xtilde + xtilde
    )
    f_hat = state.f_base + gains.k_f * xtilde - state.f_hat_anchor + acc
    return EstimatorState(
        x_hat=x_hat,
        f_hat=f_hat,
        integral_accumulator=acc,
        f_hat_anchor=state.f_hat_anchor,
        xtilde=xtilde,
        f_base=state.f_base,
    )


# ---------------------------------------------------------------------------
# Least-squares weight adaptation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AdaptationState:
    """Weight estimate plus the symmetric positive-definite gain matrix.

    ``theta_hat`` is normally a :class:`WeightVector`; a bare vector is also
    accepted for reduced-order uses of the adaptation law.
    """

    theta_hat: WeightVector | np.ndarray
    gamma: np.ndarray = field(repr=False)
    gamma_norm: float = 0.0

    @property
    def theta(self) -> np.ndarray:
        if isinstance(self.theta_hat, WeightVector):
            return self.theta_hat.theta
        return np.asarray(self.theta_hat, dtype=float).reshape(-1)

    def _with_theta(self, theta_new: np.ndarray, gamma, norm) -> "AdaptationState":
        if isinstance(self.theta_hat, WeightVector):
            th = replace(self.theta_hat, theta=theta_new)
        else:
            th = theta_new
        return AdaptationState(theta_hat=th, gamma=gamma, gamma_norm=norm)

    @classmethod
    def initialize(cls, theta0: WeightVector, gains: GainConfig) -> "AdaptationState":
        p = theta0.theta.size if isinstance(theta0, WeightVector) else np.asarray(theta0).size
        scale = min(gains.gamma_init_scale, gains.kappa_0)
        return cls(theta0, scale * np.eye(p), gamma_norm=scale)


def forgetting_factor(gamma_norm: float, gains: GainConfig) -> float:
    """Bounded-gain forgetting factor, clamped into [0, beta_0]."""
    beta = gains.beta_0 * (1.0 - gamma_norm / gains.kappa_0)
    return float(min(max(beta, 0.0), gains.beta_0))


def _spectral_norm(G: np.ndarray, iters: int = 8) -> float:
    v = G[:, int(np.argmax(np.diag(G)))].copy()
    nv = np.linalg.norm(v)
    if nv == 0.0:
        return 0.0
    v /= nv
    for _ in range(iters):
        w = G @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
    return float(v @ (G @ v))


def ball_projection(theta: np.ndarray, mu: np.ndarray, radius: float, width: float = 0.05) -> np.ndarray:
    """Smooth projection keeping the weight estimate inside a ball.

    Leaves the drive untouched strictly inside the ball or when it points
    inward; near the boundary the radially outward component is faded out.
    """
    nt2 = float(theta @ theta)
    inner = (radius * (1.0 - width)) ** 2
    radial = float(theta @ mu)
    if nt2 <= inner or radial <= 0.0:
        return mu
    c = min(1.0, (nt2 - inner) / (radius**2 - inner))
    return mu - c * (radial / nt2) * theta


def adapt_step(
    state: AdaptationState,
    phi: np.ndarray,
    phi_prime: np.ndarray,
    f_hat: np.ndarray,
    dt: float,
    gains: GainConfig,
    proj_radius: float | None = None,
    eig_clip: bool = True,
) -> AdaptationState:
    """One discrete step of the least-squares adaptation law.

    The gain matrix is advanced through its inverse (rank-n update, so
    positive definiteness is preserved by construction), then the forgetting
    factor rescales it toward the norm cap.  With ``eig_clip`` the spectrum
    is clipped into ``[floor, kappa_0]`` exactly; otherwise a cheap spectral
    estimate enforces only the cap, which callers may amortize across steps.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    theta = state.theta
    G = state.gamma
    phi = np.asarray(phi, dtype=float).reshape(-1)
    phi_prime = np.atleast_2d(np.asarray(phi_prime, dtype=float))
    f_hat = np.asarray(f_hat, dtype=float).reshape(-1)

    beta = forgetting_factor(state.gamma_norm, gains)
    # Inverse-gain Euler step via a rank-n solve: Ginv <- Ginv + dt R'R.
    W = G @ phi_prime.T
    S = np.eye(phi_prime.shape[0]) / dt + phi_prime @ W
    G_new = G - W @ np.linalg.solve(S, W.T)
    G_new = G_new / (1.0 - dt * beta)
    G_new = 0.5 * (G_new + G_new.T)

    floor = gains.gamma_floor
    if eig_clip:
        evals, evecs = np.linalg.eigh(G_new)
        if evals[0] < -1e-8 * gains.kappa_0:
            raise AdaptationFault(
                f"adaptation gain lost positive definiteness (min eig {evals[0]:.3e}); reduce dt"
            )
        clipped = np.clip(evals, floor, gains.kappa_0)
        if clipped[0] != evals[0] or clipped[-1] != evals[-1]:
            G_new = (evecs * clipped) @ evecs.T
            G_new = 0.5 * (G_new + G_new.T)
        norm = float(np.clip(evals[-1], floor, gains.kappa_0))
    else:
        norm = _spectral_norm(G_new)
        if not math.isfinite(norm):
            raise AdaptationFault("adaptation gain diverged; reduce dt")
        if norm > gains.kappa_0:
            G_new = G_new * (gains.kappa_0 / norm)
            norm = gains.kappa_0

    err = f_hat - phi
    drive = G_new @ (-gains.k_theta * theta + gains.alpha * (phi_prime.T @ err))
    if proj_radius is not None:
        drive = ball_projection(theta, drive, proj_radius)
    theta_new = theta + dt * drive
    if proj_radius is not None:
        nt = float(np.linalg.norm(theta_new))
        if nt > proj_radius:
            theta_new = theta_new * (proj_radius / nt)
    if not np.all(np.isfinite(theta_new)):
        raise AdaptationFault("weight estimate diverged; reduce dt or gains")
    return state._with_theta(theta_new, G_new, norm)


class ExcitationMonitor:
    """Windowed excitation integral of the regressor.

    Accumulates ``sum dt * R' R`` over a sliding window; the minimum
    eigenvalue of the accumulated matrix measures how well excited the
    weight space currently is (a strictly positive floor justifies a
    persistent forgetting rate).
    """

    def __init__(self, p: int, window_steps: int):
        self._acc = np.zeros((p, p))
        self._window = int(window_steps)
        self._chunks: list[np.ndarray] = []

    def push(self, phi_prime: np.ndarray, dt: float) -> None:
        chunk = math.sqrt(dt) * np.atleast_2d(np.asarray(phi_prime, dtype=float))
        self._acc += chunk.T @ chunk
        self._chunks.append(chunk)
        if len(self._chunks) > self._window:
            old = self._chunks.pop(0)
            self._acc -= old.T @ old

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self._acc + self._acc.T))[0])
