"""Fixed-step closed-loop simulation, metrics, Monte Carlo sweeps, trace IO.

One record is written per controller step.  The loop is strictly
deterministic for a given scenario, config, and seed: random draws happen in
a fixed order and measurement noise is drawn (and discarded) even while
feedback is denied so the stream stays aligned across loss schedules.
"""

from __future__ import annotations

import concurrent.futures
import dataclasses
import math
import time
from dataclasses import dataclass

import numpy as np

from adcbf.identifier import (
    AdaptationFault,
    AdaptationState,
    EstimatorState,
    GainConditionError,
    adapt_step,
    chi_theta,
    estimator_step,
    forgetting_factor,
)
from adcbf.intermittent import PredictorState, build_no_feedback_rows, predictor_step, xtilde_envelope
from adcbf.nn import WeightVector, forward_with_jacobian
from adcbf.safety_filter import (
    QpInfeasibleError,
    QpProblem,
    build_adcbf_rows,
    build_nominal_rows,
    build_robust_rows,
    qp_solve,
)

METHODS = ("adcbf", "robust", "nominal", "adcbf-no-prediction")
DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class SimConfig:
    """Per-run simulation settings; ``None`` fields take scenario defaults."""

    method: str = "adcbf"
    dt: float | None = None
    duration: float | None = None
    seed: int = 0
    loss_windows: tuple | None = None
    integrator: str = "rk4"
    clip_interval: int = 25
    excitation_window: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.integrator not in ("rk4", "euler"):
            raise ValueError("integrator must be 'rk4' or 'euler'")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.duration is not None and self.duration < 0:
            raise ValueError("duration must be non-negative")
        if self.clip_interval < 1:
            raise ValueError("clip_interval must be at least 1")


@dataclass
class TraceRecord:
    """Everything logged at one controller step (state is pre-step)."""

    t: float
    x_true: np.ndarray
    x_measured: np.ndarray | None
    u_applied: np.ndarray
    B: np.ndarray
    max_B: float
    chi_theta: float
    gamma_norm: float
    beta: float
    ident_residual: float
    feedback: bool
    qp_active: tuple[int, ...]
    qp_feasible: bool
    envelope: float
    x_pred: np.ndarray | None
    tracking_error: float
    pe_mineig: float = math.nan
    qp_kkt: float = math.nan
    qp_slack: np.ndarray | None = None


@dataclass
class RunSummary:
    """Headline metrics of one run."""

    max_B: float = 0.0
    steady_state_B: float = 0.0
    time_outside_s: float = 0.0
    rms_tracking_error: float = 0.0
    infeasibility_events: int = 0
    runtime_s: float = 0.0
    aborted: bool = False
    abort_step: int | None = None
    gain_condition_ok: bool = True
    steps: int = 0
    final_weights: list[float] | None = None


def euler_step(f, x, dt):
    return x + dt * f(x)


def rk4_step(f, x, dt):
    k1 = f(x)
    k2 = f(x + 0.5 * dt * k1)
    k3 = f(x + 0.5 * dt * k2)
    k4 = f(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _loss_mask(windows, dt: float, n_steps: int) -> np.ndarray:
    """Mark the steps falling inside any loss window (index-based, no float drift)."""
    mask = np.zeros(n_steps, dtype=bool)
    prev_end = -math.inf
    for start, end in windows:
        if not (0.0 <= start < end):
            raise ValueError(f"invalid loss window ({start}, {end})")
        if start < prev_end:
            raise ValueError("loss windows must be sorted and disjoint")
        prev_end = end
        k0 = int(round(start / dt))
        k1 = int(round(end / dt))
        mask[max(k0, 0) : min(k1, n_steps)] = True
    return mask


def simulate(scenario, cfg: SimConfig, poison_loss_measurements: bool = False):
    """Run one closed-loop simulation; returns (trace records, summary).

    ``poison_loss_measurements`` corrupts the (unused) measurement variable
    during loss windows; traces must be unaffected, which the test suite
    exercises to prove no feedback leaks into the controller while denied.
    """
    t_wall = time.perf_counter()
    dt = cfg.dt if cfg.dt is not None else scenario.dt_default
    duration = cfg.duration if cfg.duration is not None else scenario.duration_default
    method = cfg.method
    if method not in scenario.methods:
        raise ValueError(f"scenario {scenario.name!r} does not support method {method!r}")
    n_steps = int(round(duration / dt))
    if n_steps == 0:
        return [], RunSummary(runtime_s=time.perf_counter() - t_wall)

    windows = cfg.loss_windows if cfg.loss_windows is not None else scenario.loss_windows_default
    for start, end in windows:
        if end > duration + 1e-9:
            raise ValueError("loss windows must lie within the run duration")
    loss_steps = _loss_mask(windows, dt, n_steps)
    needs_dnn = method in ("adcbf", "adcbf-no-prediction")
    lc = scenario.loss_constants() if len(windows) else None
    if len(windows) and method == "adcbf" and lc is None:
        raise ValueError("scenario provides no loss constants but loss windows are configured")

    rng = np.random.default_rng(cfg.seed)
    plant = scenario.make_plant()
    barrier = scenario.make_barrier()
    x = np.asarray(scenario.initial_state(rng), dtype=float)
    noise = scenario.make_noise(rng)
    box = scenario.input_box()
    lb, ub = (box if box is not None else (None, None))
    integ = rk4_step if cfg.integrator == "rk4" else euler_step

    arch = gains = adapt = est = None
    monitor = None
    if needs_dnn:
        arch = scenario.make_arch()
        gains = scenario.make_gains()
        adapt = AdaptationState.initialize(scenario.initial_weights(rng), gains)
        if cfg.excitation_window is not None:
            from adcbf.identifier import ExcitationMonitor

            monitor = ExcitationMonitor(arch.param_count, int(round(cfg.excitation_window / dt)))

    gain_ok = True
    try:
        bc = scenario.bound_constants()
        chi_fn = lambda t: chi_theta(t, bc)  # noqa: E731
    except GainConditionError:
        # Envelope constants give no decay rate: fall back to the constant cap.
        gain_ok = False
        chi_fn = lambda t: scenario.Xi  # noqa: E731

    records: list[TraceRecord] = []
    u_prev = np.zeros(scenario.m)
    g_id_prev = None
    last_meas = None
    stale_meas = None
    pred: PredictorState | None = None
    theta_frozen: WeightVector | None = None
    frozen_rows = None
    prev_rows = None
    t_loss_start = 0.0
    infeas = 0
    aborted = False
    abort_step = None

    old_err = np.seterr(over="ignore", invalid="ignore")
    for k in range(n_steps):
        t = k * dt
        fb = not loss_steps[k]
        was_loss = k > 0 and bool(loss_steps[k - 1])
        try:
            # (1) measure, or predict while feedback is denied
            x_meas_candidate = noise.sample(x) if noise is not None else x.copy()
            if poison_loss_measurements and not fb:
                x_meas_candidate = np.full_like(x, 1e12)
            if fb:
                x_meas = x_meas_candidate
                last_meas = x_meas
            else:
                x_meas = None
                if not was_loss:  # loss onset: freeze and seed
                    stale_meas = last_meas if last_meas is not None else x.copy()
                    t_loss_start = (k - 1) * dt if k > 0 else 0.0
                    frozen_rows = prev_rows
                    if needs_dnn:
                        theta_frozen = WeightVector(arch, adapt.theta_hat.theta.copy())
                    if method == "adcbf":
                        lc = scenario.loss_constants(t_onset=t)
                        if hasattr(scenario, "freeze_weights"):
                            theta_frozen = scenario.freeze_weights(t, theta_frozen)
                        pred = PredictorState.seed(stale_meas, theta_frozen, t_loss_start)
                if method == "adcbf":
                    pred = predictor_step(
                        pred, u_prev, plant.g, dt, drift_eval=scenario.pred_drift(theta_frozen)
                    )

            # (2) identifier (frozen during loss)
            if needs_dnn:
                if k == 0:
                    est = EstimatorState.initialize(scenario.ident_select(x_meas))
                elif fb:
                    if was_loss:
                        est = est.reset(scenario.ident_select(x_meas))
                    else:
                        est = estimator_step(
                            est, scenario.ident_select(x_meas), u_prev, g_id_prev, dt, gains, step=k
                        )
                    sig = scenario.ident_select(x_meas)
                    phi_ad, phi_p_ad = forward_with_jacobian(arch, adapt.theta_hat, sig)
                    adapt = adapt_step(
                        adapt,
                        phi_ad,
                        phi_p_ad,
                        est.f_hat,
                        dt,
                        gains,
                        proj_radius=scenario.proj_radius,
                        eig_clip=(k % cfg.clip_interval == 0),
                    )
                    if monitor is not None:
                        monitor.push(phi_p_ad, dt)

            # (3) parameter-error envelope
            chi = float(chi_fn(t))

            # (4) constraint rows and nominal input at the control-point state
            if fb:
                x_ctrl = x_meas
            elif method == "adcbf":
                x_ctrl = pred.X_hat
            else:
                x_ctrl = stale_meas
            phi_c = None
            if needs_dnn:
                th = adapt.theta_hat if fb else theta_frozen
                phi_c, phi_p_c = forward_with_jacobian(arch, th, scenario.ident_select(x_ctrl))
            if fb:
                if needs_dnn:
                    rows = build_adcbf_rows(
                        x_ctrl,
                        barrier,
                        scenario.lift_drift(x_ctrl, phi_c),
                        scenario.lift_jacobian(phi_p_c),
                        plant.g(x_ctrl),
                        chi,
                        scenario.c_1,
                    )
                elif method == "robust":
                    rows = build_robust_rows(
                        x_ctrl,
                        barrier,
                        scenario.model_drift(x_ctrl),
                        scenario.delta_bar,
                        plant.g(x_ctrl),
                        scenario.robust_channel(),
                    )
                else:
                    rows = build_nominal_rows(
                        x_ctrl, barrier, scenario.model_drift(x_ctrl), plant.g(x_ctrl)
                    )
            else:
                if method == "adcbf":
                    rows = build_no_feedback_rows(
                        pred.X_hat,
                        barrier,
                        theta_frozen,
                        plant.g,
                        lc,
                        t,
                        t_loss_start,
                        drift_eval=scenario.pred_drift(theta_frozen),
                    )
                elif frozen_rows is not None:
                    rows = frozen_rows
                else:  # loss from the very first step: no earlier rows to hold
                    rows = build_nominal_rows(
                        x_ctrl, barrier, scenario.model_drift(x_ctrl), plant.g(x_ctrl)
                    )
            prev_rows = rows

            # (5) minimum-deviation QP from the nominal input
            u_nom = scenario.u_nominal(method, t, x_ctrl, phi_c)
            try:
                sol = qp_solve(QpProblem(u_nom, rows, lb=lb, ub=ub))
                u, active, feasible, kkt = sol.u_star, sol.active_set, True, sol.kkt_residual
            except QpInfeasibleError as exc:
                u, active, feasible, kkt = exc.u_best, (), False, math.nan
                infeas += 1
            slack = np.array([r.b - float(r.a @ u) for r in rows])

            # (7) record the pre-step state with the input about to be applied
            B_true = barrier.value(x)
            if needs_dnn:
                resid = float(np.linalg.norm(est.f_hat - phi_c))
                beta = forgetting_factor(adapt.gamma_norm, gains)
                gamma_norm = adapt.gamma_norm
            else:
                resid = math.nan
                beta = math.nan
                gamma_norm = math.nan
            in_pred = (not fb) and method == "adcbf"
            records.append(
                TraceRecord(
                    t=t,
                    x_true=x.copy(),
                    x_measured=None if x_meas is None else x_meas.copy(),
                    u_applied=np.asarray(u, dtype=float).copy(),
                    B=B_true,
                    max_B=float(np.max(B_true)),
                    chi_theta=chi,
                    gamma_norm=gamma_norm,
                    beta=beta,
                    ident_residual=resid,
                    feedback=fb,
                    qp_active=tuple(active),
                    qp_feasible=feasible,
                    envelope=xtilde_envelope(t, lc, t_loss_start) if in_pred else math.nan,
                    x_pred=pred.X_hat.copy() if in_pred else None,
                    tracking_error=float(scenario.tracking_error(t, x)),
                    pe_mineig=monitor.min_eigenvalue() if monitor is not None and fb else math.nan,
                    qp_kkt=kkt,
                    qp_slack=slack,
                )
            )

            # (6) plant integrates one step with the input held constant
            u_arr = np.asarray(u, dtype=float)
            x = integ(lambda xx: plant.f(xx) + plant.g(xx) @ u_arr, x, dt)
            if not np.all(np.isfinite(x)) or float(np.linalg.norm(x)) > DIVERGENCE_LIMIT:
                aborted = True
                abort_step = k
                break
            u_prev = u_arr
            g_id_prev = scenario.ident_g(x_ctrl)
        except (AdaptationFault, RuntimeError):
            aborted = True
            abort_step = k
            break
    np.seterr(**old_err)

    rms_window = getattr(scenario, "rms_window_default", None)
    summary = compute_metrics(records, dt, rms_window) if records else RunSummary()
    summary.runtime_s = time.perf_counter() - t_wall
    summary.aborted = aborted
    summary.abort_step = abort_step
    summary.gain_condition_ok = gain_ok
    if needs_dnn and adapt is not None:
        summary.final_weights = [float(v) for v in adapt.theta_hat.theta]
    return records, summary


def compute_metrics(records, dt: float, rms_window=None) -> RunSummary:
    """Aggregate a trace into a run summary.

    Steady-state barrier value is the mean of the worst row over the final
    tenth of the records; time outside the safe set counts violating steps
    times the step length.
    """
    if not records:
        raise ValueError("cannot compute metrics of an empty trace")
    max_b = np.array([r.max_B for r in records])
    tail = max(1, math.ceil(0.1 * len(records)))
    if rms_window is None:
        errs = np.array([r.tracking_error for r in records])
    else:
        lo, hi = rms_window
        errs = np.array([r.tracking_error for r in records if lo <= r.t <= hi])
    rms = float(np.sqrt(np.mean(errs**2))) if errs.size else 0.0
    return RunSummary(
        max_B=float(np.max(max_b)),
        steady_state_B=float(np.mean(max_b[-tail:])),
        time_outside_s=float(dt * int(np.count_nonzero(max_b > 0.0))),
        rms_tracking_error=rms,
        infeasibility_events=int(sum(1 for r in records if not r.qp_feasible)),
        steps=len(records),
    )


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return "%.17g" % v


def _vec_cells(v, n: int) -> list[str]:
    if v is None:
        return ["nan"] * n
    return [_fmt(float(x)) for x in np.asarray(v).reshape(-1)]


def trace_columns(records) -> list[str]:
    r0 = records[0]
    n = r0.x_true.size
    m = r0.u_applied.size
    d = r0.B.size
    cols = ["t"]
    cols += [f"x_true_{i}" for i in range(n)]
    cols += [f"x_measured_{i}" for i in range(n)]
    cols += [f"u_{i}" for i in range(m)]
    cols += [f"B_{i}" for i in range(d)]
    cols += [
        "max_B",
        "chi_theta",
        "gamma_norm",
        "beta",
        "ident_residual",
        "feedback",
        "qp_active_mask",
        "qp_feasible",
        "qp_kkt",
        "envelope",
    ]
    cols += [f"qp_slack_{i}" for i in range(d)]
    cols += [f"x_pred_{i}" for i in range(n)]
    cols += ["tracking_error", "pe_mineig"]
    return cols


def write_trace_csv(records, path) -> None:
    """Persist a trace; floats carry 17 significant digits for exact replay."""
    if not records:
        with open(path, "w", newline="") as fh:
            fh.write("t\n")
        return
    cols = trace_columns(records)
    n = records[0].x_true.size
    m = records[0].u_applied.size
    d = records[0].B.size
    lines = [",".join(cols)]
    for r in records:
        cells = [_fmt(r.t)]
        cells += _vec_cells(r.x_true, n)
        cells += _vec_cells(r.x_measured, n)
        cells += _vec_cells(r.u_applied, m)
        cells += _vec_cells(r.B, d)
        mask = sum(1 << i for i in r.qp_active if i < 62)
        cells += [
            _fmt(r.max_B),
            _fmt(r.chi_theta),
            _fmt(r.gamma_norm),
            _fmt(r.beta),
            _fmt(r.ident_residual),
            str(int(r.feedback)),
            str(mask),
            str(int(r.qp_feasible)),
            _fmt(r.qp_kkt),
            _fmt(r.envelope),
        ]
        cells += _vec_cells(r.qp_slack, d)
        cells += _vec_cells(r.x_pred, n)
        cells += [_fmt(r.tracking_error), _fmt(r.pe_mineig)]
        lines.append(",".join(cells))
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Monte Carlo sweeps
# ---------------------------------------------------------------------------


def _mc_trial(args):
    template, trajectory, iteration, seed, methods, dt, duration = args
    rng = np.random.default_rng(seed)
    w1 = float(rng.uniform(0.0, 9.0))
    w2 = float(rng.uniform(10.0, 19.0))
    windows = ((w1, w1 + 1.0), (w2, w2 + 1.0))
    scenario = dataclasses.replace(template, trajectory=trajectory, loss_windows=windows)
    out = []
    for method in methods:
        cfg = SimConfig(method=method, seed=seed, dt=dt, duration=duration)
        _, summary = simulate(scenario, cfg)
        out.append(
            {
                "method": method,
                "trajectory": trajectory,
                "iteration": iteration,
                "seed": seed,
                "loss_windows": windows,
                "max_B": summary.max_B,
                "time_outside_s": summary.time_outside_s,
                "rms_tracking_error": summary.rms_tracking_error,
                "infeasibility_events": summary.infeasibility_events,
                "aborted": summary.aborted,
            }
        )
    return out


def monte_carlo(
    template,
    trajectories,
    iterations: int,
    base_seed: int = 0,
    methods=("adcbf", "adcbf-no-prediction"),
    workers: int | None = None,
    dt: float | None = None,
    duration: float | None = None,
):
    """Repeated randomized trials per trajectory; both methods share each draw.

    Per trial the initial state and weights are resampled and two one-second
    loss windows are drawn (starts uniform on [0, 9] and [10, 19]).  Returns
    per-trial rows plus an aggregate table with one row per (method,
    trajectory): overall max barrier value, average per-run max, and average
    time outside the safe set.
    """
    if iterations < 1:
        raise ValueError("iterations must be at least 1")
    jobs = []
    for ti, traj in enumerate(trajectories):
        for it in range(iterations):
            seed = base_seed + ti * iterations + it
            jobs.append((template, traj, it, seed, tuple(methods), dt, duration))
    if workers is not None and workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            per_trial_nested = list(pool.map(_mc_trial, jobs))
    else:
        per_trial_nested = [_mc_trial(j) for j in jobs]
    trials = [row for nested in per_trial_nested for row in nested]

    table = []
    for method in methods:
        for traj in trajectories:
            sel = [r for r in trials if r["method"] == method and r["trajectory"] == traj]
            table.append(
                {
                    "method": method,
                    "trajectory": traj,
                    "max_B": max(r["max_B"] for r in sel),
                    "avg_max_B": float(np.mean([r["max_B"] for r in sel])),
                    "avg_time_outside_s": float(np.mean([r["time_outside_s"] for r in sel])),
                }
            )
    return {"trials": trials, "table": table}
