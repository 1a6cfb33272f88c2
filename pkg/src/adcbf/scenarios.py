"""Concrete plants, barriers, nominal controllers, and noise models.

Two benchmark problems are provided: a cruise-control plant whose rolling
resistance and injected disturbance are unknown to the controller, and a
planar non-polynomial plant tracked around reference trajectories inside a
diamond-shaped safe set, with scheduled feedback dropouts.  Every constant
has a config-file key; the dataclass defaults are the benchmark values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from adcbf.identifier import BoundConstants, GainConfig, derive_bound_constants
from adcbf.intermittent import LossConstants
from adcbf.nn import DnnArchitecture, WeightVector, forward
from adcbf.safety_filter import AffineBarrier


@dataclass(frozen=True)
class Plant:
    """True dynamics ``xdot = f(x) + g(x) u``; ``f`` is hidden from controllers."""

    n: int
    m: int
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ReferenceTrajectory:
    """Desired position and velocity as functions of time."""

    tag: str
    position: Callable[[float], np.ndarray]
    velocity: Callable[[float], np.ndarray]


def make_reference(tag: str, constant_point=(0.0, 0.0)) -> ReferenceTrajectory:
    if tag == "spiral1":
        return ReferenceTrajectory(
            tag,
            lambda t: 0.1 * t * np.array([math.sin(t), math.cos(t)]),
            lambda t: np.array(
                [0.1 * math.sin(t) + 0.1 * t * math.cos(t), 0.1 * math.cos(t) - 0.1 * t * math.sin(t)]
            ),
        )
    if tag == "spiral2":
        return ReferenceTrajectory(
            tag,
            lambda t: 0.075 * t * np.array([math.sin(t), math.cos(t)]),
            lambda t: np.array(
                [
                    0.075 * math.sin(t) + 0.075 * t * math.cos(t),
                    0.075 * math.cos(t) - 0.075 * t * math.sin(t),
                ]
            ),
        )
    if tag == "figure8":
        return ReferenceTrajectory(
            tag,
            lambda t: np.array([2.0 * math.sin(t), 2.0 * math.sin(t) * math.cos(t)]),
            lambda t: np.array([2.0 * math.cos(t), 2.0 * math.cos(2.0 * t)]),
        )
    if tag == "constant":
        point = np.asarray(constant_point, dtype=float)
        return ReferenceTrajectory(tag, lambda t: point.copy(), lambda t: np.zeros_like(point))
    raise ValueError(f"unknown reference trajectory {tag!r}")


class NoiseModel:
    """Additive Gaussian measurement noise at a fixed signal-to-noise ratio.

    The per-coordinate noise variance tracks the running mean square of the
    clean signal seen so far, so the ratio holds without knowing the signal
    power in advance.  A fixed ``sigma`` bypasses the running estimate.
    Sampling with the same seed and clean sequence is bit-reproducible.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        snr_db: float | None = 50.0,
        sigma: float | None = None,
        coords: np.ndarray | None = None,
    ):
        self.rng = rng
        self.snr_db = snr_db
        self.sigma = sigma
        self.coords = coords
        self._count = 0
        self._sumsq = None

    @property
    def enabled(self) -> bool:
        if self.sigma is not None:
            return self.sigma > 0.0
        return self.snr_db is not None and math.isfinite(self.snr_db)

    def sample(self, x_clean: np.ndarray) -> np.ndarray:
        x_clean = np.asarray(x_clean, dtype=float).reshape(-1)
        if self._sumsq is None:
            self._sumsq = np.zeros_like(x_clean)
        self._sumsq += x_clean**2
        self._count += 1
        draw = self.rng.standard_normal(x_clean.size)
        if not self.enabled:
            return x_clean.copy()
        if self.sigma is not None:
            std = np.full_like(x_clean, self.sigma)
        else:
            power = self._sumsq / self._count
            std = np.sqrt(power * 10.0 ** (-self.snr_db / 10.0))
        noise = std * draw
        if self.coords is not None:
            mask = np.zeros_like(x_clean)
            mask[self.coords] = 1.0
            noise = noise * mask
        return x_clean + noise


def _parse_coords(selector: str, n: int):
    if selector == "all":
        return None
    return np.array([int(tok) for tok in selector.split(",") if tok.strip() != ""], dtype=int)


# ---------------------------------------------------------------------------
# Adaptive cruise control
# ---------------------------------------------------------------------------


@dataclass
class AccScenario:
    """Follower vehicle holding a time-headway distance behind a lead car.

    State is ``[D, v]`` (gap and follower speed).  The gap dynamics are
    known; the speed drift (rolling resistance over mass, plus a sinusoidal
    disturbance) is what the network identifies online.
    """

    mass: float = 100.0
    f_0: float = 0.1
    f_1: float = 5.0
    f_2: float = 0.25
    dist_amp: float = 30.0
    dist_freq: float = 0.1
    v_lead: float = 10.0
    v_d: float = 20.0
    v_init: float = 16.0
    D_init: float = 60.0
    headway: float = 1.8
    gamma_gain: float = 10.0
    k_1: float = 10.0
    hidden_widths: tuple[int, ...] = (6, 6)
    activation: str = "tanh"
    weight_std: float = 3.0
    alpha: float = 50.0
    k_theta: float = 0.001
    beta_0: float = 2.0
    kappa_0: float = 3.0
    gamma_init_scale: float = 5.0
    k_x: float = 5.0
    k_f: float = 10.0
    delta_bar: float = 75.0
    Xi: float = 0.75
    c_1: float = 0.05
    c_2: float = 20.0
    f_bar: float = 35.0
    f_dot_bar: float = 125.0
    theta_bar: float = 45.0
    beta_1: float = 0.0
    dt_default: float = 0.005
    duration_default: float = 20.0
    snr_db: float = math.inf
    noise_coords: str = "all"

    name = "acc"
    n = 2
    m = 1
    methods = ("adcbf", "robust", "nominal")
    loss_windows_default: tuple = ()
    rms_window_default = None

    def rolling_resistance(self, v: float) -> float:
        return self.f_0 + self.f_1 * v + self.f_2 * v * v

    def disturbance(self, v: float) -> float:
        return self.dist_amp * math.sin(self.dist_freq * v)

    def speed_drift(self, v: float) -> float:
        """Unknown part of the speed equation (what the network learns)."""
        return -self.rolling_resistance(v) / self.mass + self.disturbance(v)

    def make_plant(self) -> Plant:
        def f(x):
            return np.array([self.v_lead - x[1], self.speed_drift(x[1])])

        def g(x):
            return np.array([[0.0], [1.0 / self.mass]])

        return Plant(2, 1, f, g)

    def make_barrier(self) -> AffineBarrier:
        return AffineBarrier([[-1.0, self.headway]], [0.0], gamma_gain=self.gamma_gain)

    def make_arch(self) -> DnnArchitecture:
        k = len(self.hidden_widths)
        return DnnArchitecture(
            input_dim=1,
            output_dim=1,
            hidden_widths=tuple(self.hidden_widths),
            activations=(self.activation,) * k,
            shortcuts=(True,) * (k + 1),
        )

    def make_gains(self) -> GainConfig:
        return GainConfig(
            k_x=self.k_x,
            k_f=self.k_f,
            k_theta=self.k_theta,
            alpha=self.alpha,
            beta_0=self.beta_0,
            kappa_0=self.kappa_0,
            gamma_init_scale=self.gamma_init_scale,
        )

    def bound_constants(self) -> BoundConstants:
        return derive_bound_constants(
            self.make_gains(),
            f_bar=self.f_bar,
            f_dot_bar=self.f_dot_bar,
            c_1=self.c_1,
            c_2=self.c_2,
            theta_bar=self.theta_bar,
            Xi=self.Xi,
            beta_1=self.beta_1,
        )

    @property
    def proj_radius(self) -> float:
        return self.theta_bar + self.Xi

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([self.D_init, self.v_init])

    def initial_weights(self, rng: np.random.Generator) -> WeightVector:
        return WeightVector.random_normal(self.make_arch(), rng, self.weight_std)

    def make_noise(self, rng: np.random.Generator) -> NoiseModel:
        return NoiseModel(rng, snr_db=self.snr_db, coords=_parse_coords(self.noise_coords, 2))

    # Identifier runs on the speed subsystem only; the gap dynamics are known.
    def ident_select(self, x: np.ndarray) -> np.ndarray:
        return np.array([x[1]])

    def ident_g(self, x: np.ndarray) -> np.ndarray:
        return np.array([[1.0 / self.mass]])

    def lift_drift(self, x: np.ndarray, phi_val: np.ndarray) -> np.ndarray:
        return np.array([self.v_lead - x[1], float(phi_val[0])])

    def lift_jacobian(self, phi_prime: np.ndarray) -> np.ndarray:
        return np.vstack([np.zeros((1, phi_prime.shape[1])), phi_prime])

    def model_drift(self, x: np.ndarray) -> np.ndarray:
        return np.array([self.v_lead - x[1], -self.rolling_resistance(x[1]) / self.mass])

    def robust_channel(self) -> np.ndarray:
        return np.array([[0.0], [1.0]])

    def pred_drift(self, theta_frozen: WeightVector):
        arch = theta_frozen.arch

        def drift(X):
            return np.array([self.v_lead - X[1], float(forward(arch, theta_frozen, [X[1]])[0])])

        return drift

    def u_nominal(self, method: str, t: float, x: np.ndarray, phi_val) -> np.ndarray:
        v = x[1]
        track = -self.mass * self.k_1 * (v - self.v_d)
        if method in ("adcbf", "adcbf-no-prediction"):
            return np.array([-float(phi_val[0]) + track])
        if method == "nominal":
            return np.array([self.rolling_resistance(v) + track])
        if method == "robust":
            return np.array([self.rolling_resistance(v) - self.mass * self.delta_bar + track])
        raise ValueError(f"unknown method {method!r}")

    def tracking_error(self, t: float, x: np.ndarray) -> float:
        return abs(x[1] - self.v_d)

    def loss_constants(self, t_onset: float | None = None) -> LossConstants | None:
        return None

    def input_box(self):
        return None


# ---------------------------------------------------------------------------
# Non-polynomial planar plant with a diamond safe set
# ---------------------------------------------------------------------------


@dataclass
class NonPolyScenario:
    """Planar plant with trigonometric/hyperbolic drift, fully actuated.

    The controller tracks a reference trajectory inside the diamond
    ``|x1| + |x2| <= 2`` while the drift is identified online; scheduled
    windows of lost feedback exercise the open-loop prediction mode.
    """

    k_e: float = 10.0
    gamma_gain: float = 10.0
    hidden_widths: tuple[int, ...] = (5, 5, 5)
    activation: str = "tanh"
    weight_std: float = 0.5
    alpha: float = 50.0
    k_theta: float = 0.001
    beta_0: float = 2.0
    kappa_0: float = 10.0
    gamma_init_scale: float = 5.0
    k_x: float = 10.0
    k_f: float = 5.0
    snr_db: float = 50.0
    noise_coords: str = "all"
    x0_half_width: float = 0.2
    trajectory: str = "spiral1"
    constant_point: tuple[float, float] = (0.0, 0.0)
    loss_windows: tuple = ((10.0, 11.0), (15.0, 16.0))
    L_U: float = 1.15
    Delta_U: float = 0.12
    Delta_U_warmup: float = 2.5
    warmup_time: float = 1.0
    rho: float = 0.0
    u_abs_max: float = 50.0
    delta_bar: float = 2.5
    Xi: float = 0.3
    c_1: float = 0.05
    c_2: float = 10.0
    f_bar: float = 2.5
    f_dot_bar: float = 50.0
    theta_bar: float = 12.0
    beta_1: float = 0.0
    safe_halfwidth: float = 2.0
    dt_default: float = 0.005
    duration_default: float = 20.0

    name = "nonpoly"
    n = 2
    m = 2
    methods = ("adcbf", "adcbf-no-prediction", "robust", "nominal")
    rms_window_default = (0.0, 14.0)

    @property
    def loss_windows_default(self):
        return tuple(tuple(w) for w in self.loss_windows)

    def reference(self) -> ReferenceTrajectory:
        return make_reference(self.trajectory, self.constant_point)

    def make_plant(self) -> Plant:
        def f(x):
            x1, x2 = x
            sech = 1.0 / math.cosh(x2)
            return np.array(
                [x2 * math.sin(x1) * math.tanh(x2) ** 2, x1 * x2 * math.cos(x2) * sech]
            )

        def g(x):
            return np.eye(2)

        return Plant(2, 2, f, g)

    def make_barrier(self) -> AffineBarrier:
        c = self.safe_halfwidth
        G = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        return AffineBarrier(G, [-c, -c, -c, -c], gamma_gain=self.gamma_gain)

    def make_arch(self) -> DnnArchitecture:
        k = len(self.hidden_widths)
        return DnnArchitecture(
            input_dim=2,
            output_dim=2,
            hidden_widths=tuple(self.hidden_widths),
            activations=(self.activation,) * k,
            shortcuts=(True,) * (k + 1),
        )

    def make_gains(self) -> GainConfig:
        return GainConfig(
            k_x=self.k_x,
            k_f=self.k_f,
            k_theta=self.k_theta,
            alpha=self.alpha,
            beta_0=self.beta_0,
            kappa_0=self.kappa_0,
            gamma_init_scale=self.gamma_init_scale,
        )

    def bound_constants(self) -> BoundConstants:
        return derive_bound_constants(
            self.make_gains(),
            f_bar=self.f_bar,
            f_dot_bar=self.f_dot_bar,
            c_1=self.c_1,
            c_2=self.c_2,
            theta_bar=self.theta_bar,
            Xi=self.Xi,
            beta_1=self.beta_1,
        )

    @property
    def proj_radius(self) -> float:
        return self.theta_bar + self.Xi

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-self.x0_half_width, self.x0_half_width, size=2)

    def initial_weights(self, rng: np.random.Generator) -> WeightVector:
        return WeightVector.random_normal(self.make_arch(), rng, self.weight_std)

    def make_noise(self, rng: np.random.Generator) -> NoiseModel:
        return NoiseModel(rng, snr_db=self.snr_db, coords=_parse_coords(self.noise_coords, 2))

    def ident_select(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float).copy()

    def ident_g(self, x: np.ndarray) -> np.ndarray:
        return np.eye(2)

    def lift_drift(self, x: np.ndarray, phi_val: np.ndarray) -> np.ndarray:
        return np.asarray(phi_val, dtype=float).reshape(2)

    def lift_jacobian(self, phi_prime: np.ndarray) -> np.ndarray:
        return phi_prime

    def model_drift(self, x: np.ndarray) -> np.ndarray:
        return np.zeros(2)

    def robust_channel(self) -> np.ndarray:
        return np.eye(2)

    def pred_drift(self, theta_frozen: WeightVector):
        arch = theta_frozen.arch
        return lambda X: forward(arch, theta_frozen, X)

    def u_nominal(self, method: str, t: float, x: np.ndarray, phi_val) -> np.ndarray:
        ref = self.reference()
        xd, xd_dot = ref.position(t), ref.velocity(t)
        track = xd_dot - self.k_e * (np.asarray(x, dtype=float) - xd)
        if method in ("adcbf", "adcbf-no-prediction"):
            return track - np.asarray(phi_val, dtype=float).reshape(2)
        if method in ("nominal", "robust"):
            return track
        raise ValueError(f"unknown method {method!r}")

    def tracking_error(self, t: float, x: np.ndarray) -> float:
        return float(np.linalg.norm(np.asarray(x, dtype=float) - self.reference().position(t)))

    def loss_constants(self, t_onset: float | None = None) -> LossConstants:
        """Envelope constants; outages before the identifier has converged get
        the conservative warm-up mismatch bound."""
        delta = self.Delta_U
        if t_onset is not None and t_onset < self.warmup_time:
            delta = max(delta, self.Delta_U_warmup)
        return LossConstants(
            L_U=self.L_U,
            Delta_U=delta,
            rho=self.rho,
            B_bar=math.sqrt(2.0),
            u_bar=math.sqrt(2.0) * self.u_abs_max,
        )

    def freeze_weights(self, t_onset: float, theta_hat: WeightVector) -> WeightVector:
        """Weights to hold through an outage.

        Before the identifier has converged the adapted weights are not
        trustworthy; the zero network (drift treated as unknown-but-bounded,
        covered by the warm-up mismatch bound) is the best certified model.
        """
        if t_onset < self.warmup_time:
            return WeightVector.zeros(theta_hat.arch)
        return theta_hat

    def input_box(self):
        return (-self.u_abs_max * np.ones(2), self.u_abs_max * np.ones(2))


SCENARIOS = {"acc": AccScenario, "nonpoly": NonPolyScenario}


def make_scenario(name: str, **overrides):
    try:
        ctor = SCENARIOS[name]
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIOS)}") from None
    return ctor(**overrides)
