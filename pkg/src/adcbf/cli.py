"""Command-line front end: single runs, Monte Carlo sweeps, self-verification.

Configuration is plain ``key = value`` text; every scenario constant is a
key, unknown keys are rejected, and the fully resolved configuration is
echoed into the output JSON so any run can be replayed exactly from its own
summary.  Flags override file keys.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from adcbf.harness import METHODS, SimConfig, monte_carlo, simulate, write_trace_csv
from adcbf.scenarios import SCENARIOS, make_scenario


class ConfigError(ValueError):
    """Bad configuration file or override."""


SIM_KEYS = {
    "scenario": "acc | nonpoly",
    "method": " | ".join(METHODS),
    "seed": "integer random seed",
    "dt": "controller/integration step in seconds (scenario default if unset)",
    "duration": "run length in seconds (scenario default if unset)",
    "integrator": "rk4 | euler (plant integration)",
    "loss_windows": "feedback-denial windows, e.g. 10:11,15:16 (empty string for none)",
    "out_dir": "output directory (default: current directory)",
    "clip_interval": "steps between exact eigenvalue clips of the adaptation gain",
}


def _parse_windows(text: str):
    text = text.strip()
    if not text:
        return ()
    out = []
    for tok in text.split(","):
        try:
            a, b = tok.split(":")
            out.append((float(a), float(b)))
        except ValueError:
            raise ConfigError(f"bad loss window {tok!r}; expected start:end") from None
    return tuple(out)


def _fmt_windows(windows) -> str:
    return ",".join(f"{a:g}:{b:g}" for a, b in windows)


def _parse_int_tuple(text: str):
    try:
        return tuple(int(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise ConfigError(f"bad integer list {text!r}") from None


def _parse_float_tuple(text: str):
    try:
        return tuple(float(tok) for tok in text.split(",") if tok.strip() != "")
    except ValueError:
        raise ConfigError(f"bad number list {text!r}") from None


_TUPLE_FIELDS = {
    "hidden_widths": (_parse_int_tuple, lambda v: ",".join(str(x) for x in v)),
    "loss_windows": (_parse_windows, _fmt_windows),
    "constant_point": (_parse_float_tuple, lambda v: ",".join(f"{x:g}" for x in v)),
}


def scenario_field_info(scenario_name: str) -> dict[str, dataclasses.Field]:
    cls = SCENARIOS[scenario_name]
    return {f.name: f for f in dataclasses.fields(cls)}


def _convert_scenario_value(fld: dataclasses.Field, raw: str):
    if fld.name in _TUPLE_FIELDS:
        return _TUPLE_FIELDS[fld.name][0](raw)
    ftype = fld.type if isinstance(fld.type, str) else getattr(fld.type, "__name__", "str")
    try:
        if "float" in ftype:
            return float(raw)
        if "int" in ftype:
            return int(raw)
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for key {fld.name!r} (expected {ftype})") from None
    return raw


def load_config_file(path: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
                key, val = line.split("=", 1)
                pairs[key.strip()] = val.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return pairs


def resolve_config(pairs: dict[str, str]) -> dict:
    """Validate raw key/value strings into a typed, fully defaulted config."""
    scenario_name = pairs.get("scenario", "acc")
    if scenario_name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario_name!r}; expected one of {sorted(SCENARIOS)}")
    fields = scenario_field_info(scenario_name)

    sim: dict = {
        "scenario": scenario_name,
        "method": "adcbf",
        "seed": 0,
        "dt": None,
        "duration": None,
        "integrator": "rk4",
        "loss_windows": None,
        "out_dir": ".",
        "clip_interval": 25,
    }
    scen_overrides: dict = {}
    for key, raw in pairs.items():
        if key == "scenario":
            continue
        if key in SIM_KEYS:
            if key == "loss_windows":
                sim[key] = _parse_windows(raw)
            elif key in ("seed", "clip_interval"):
                try:
                    sim[key] = int(raw)
                except ValueError:
                    raise ConfigError(f"bad integer {raw!r} for key {key!r}") from None
            elif key in ("dt", "duration"):
                try:
                    sim[key] = float(raw)
                except ValueError:
                    raise ConfigError(f"bad number {raw!r} for key {key!r}") from None
            else:
                sim[key] = raw
        elif key in fields:
            scen_overrides[key] = _convert_scenario_value(fields[key], raw)
        else:
            raise ConfigError(f"unknown config key {key!r} for scenario {scenario_name!r}")
    if sim["method"] not in METHODS:
        raise ConfigError(f"unknown method {sim['method']!r}; expected one of {METHODS}")
    if sim["integrator"] not in ("rk4", "euler"):
        raise ConfigError("integrator must be rk4 or euler")
    return {"sim": sim, "scenario_overrides": scen_overrides}


def echo_config(sim: dict, scenario) -> dict[str, str]:
    """Flatten the fully resolved run into replayable config-file pairs."""
    echo: dict[str, str] = {"scenario": scenario.name}
    for key in ("method", "integrator", "out_dir"):
        echo[key] = str(sim[key])
    echo["seed"] = str(sim["seed"])
    echo["clip_interval"] = str(sim["clip_interval"])
    echo["dt"] = repr(sim["dt"] if sim["dt"] is not None else scenario.dt_default)
    echo["duration"] = repr(
        sim["duration"] if sim["duration"] is not None else scenario.duration_default
    )
    windows = sim["loss_windows"]
    if windows is None:
        windows = scenario.loss_windows_default
    echo["loss_windows"] = _fmt_windows(windows)
    for f in dataclasses.fields(scenario):
        if f.name in SIM_KEYS:
            continue  # the resolved sim-level value wins (loss_windows)
        v = getattr(scenario, f.name)
        if f.name in _TUPLE_FIELDS:
            echo[f.name] = _TUPLE_FIELDS[f.name][1](v)
        elif isinstance(v, float):
            echo[f.name] = repr(v)
        else:
            echo[f.name] = str(v)
    return echo


def _gather_pairs(args) -> dict[str, str]:
    pairs = load_config_file(args.config) if args.config else {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, val = item.split("=", 1)
        pairs[key.strip()] = val.strip()
    # Dedicated flags take the highest precedence.
    for key in ("scenario", "method", "seed", "out_dir"):
        val = getattr(args, key, None)
        if val is not None:
            pairs[key] = str(val)
    return pairs


def _build(args):
    resolved = resolve_config(_gather_pairs(args))
    sim = resolved["sim"]
    try:
        scenario = make_scenario(sim["scenario"], **resolved["scenario_overrides"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if sim["method"] not in scenario.methods:
        raise ConfigError(
            f"scenario {scenario.name!r} supports methods {scenario.methods}, not {sim['method']!r}"
        )
    cfg = SimConfig(
        method=sim["method"],
        dt=sim["dt"],
        duration=sim["duration"],
        seed=sim["seed"],
        loss_windows=sim["loss_windows"],
        integrator=sim["integrator"],
        clip_interval=sim["clip_interval"],
    )
    return sim, scenario, cfg


def _summary_payload(sim, scenario, summary) -> dict:
    payload = {
        "config": echo_config(sim, scenario),
        "metrics": {
            "max_B": summary.max_B,
            "steady_state_B": summary.steady_state_B,
            "time_outside_s": summary.time_outside_s,
            "rms_tracking_error": summary.rms_tracking_error,
            "infeasibility_events": summary.infeasibility_events,
            "steps": summary.steps,
            "runtime_s": summary.runtime_s,
            "aborted": summary.aborted,
            "abort_step": summary.abort_step,
            "gain_condition_ok": summary.gain_condition_ok,
        },
    }
    if summary.final_weights is not None:
        payload["final_weights"] = summary.final_weights
    return payload


def cmd_run(args) -> int:
    try:
        sim, scenario, cfg = _build(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        records, summary = simulate(scenario, cfg)
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    stem = f"{scenario.name}_{cfg.method}_seed{cfg.seed}"
    out_dir = sim["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    trace_path = os.path.join(out_dir, f"trace_{stem}.csv")
    summary_path = os.path.join(out_dir, f"summary_{stem}.json")
    write_trace_csv(records, trace_path)
    with open(summary_path, "w") as fh:
        json.dump(_summary_payload(sim, scenario, summary), fh, indent=2)
        fh.write("\n")
    if summary.aborted:
        print(
            f"aborted: state diverged at step {summary.abort_step} "
            f"(t={summary.abort_step * (cfg.dt or scenario.dt_default):.3f} s); "
            f"partial trace in {trace_path}",
            file=sys.stderr,
        )
        return 2
    print(f"wrote {trace_path} and {summary_path}")
    return 0


def cmd_montecarlo(args) -> int:
    try:
        sim, scenario, _ = _build(args)
        if scenario.name != "nonpoly":
            raise ConfigError("monte carlo sweeps are defined for the nonpoly scenario")
        trajectories = tuple(t.strip() for t in args.trajectories.split(",") if t.strip())
        if not trajectories:
            raise ConfigError("no trajectories given")
        if args.iterations < 1:
            raise ConfigError("iterations must be at least 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        result = monte_carlo(
            scenario,
            trajectories,
            iterations=args.iterations,
            base_seed=sim["seed"],
            methods=("adcbf", "adcbf-no-prediction"),
            workers=args.workers,
            dt=sim["dt"],
            duration=sim["duration"],
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    out_dir = sim["out_dir"]
    os.makedirs(out_dir, exist_ok=True)
    stem = f"nonpoly_mc_iter{args.iterations}_seed{sim['seed']}"
    trials_path = os.path.join(out_dir, f"trials_{stem}.csv")
    table_path = os.path.join(out_dir, f"table_{stem}.csv")
    with open(trials_path, "w") as fh:
        fh.write(
            "method,trajectory,iteration,seed,loss_window_1,loss_window_2,"
            "max_B,time_outside_s,rms_tracking_error,infeasibility_events,aborted\n"
        )
        for r in result["trials"]:
            w = r["loss_windows"]
            fh.write(
                f"{r['method']},{r['trajectory']},{r['iteration']},{r['seed']},"
                f"{w[0][0]:.6f}:{w[0][1]:.6f},{w[1][0]:.6f}:{w[1][1]:.6f},"
                f"{r['max_B']:.6g},{r['time_outside_s']:.6g},{r['rms_tracking_error']:.6g},"
                f"{r['infeasibility_events']},{int(r['aborted'])}\n"
            )
    with open(table_path, "w") as fh:
        fh.write("method,trajectory,max_B,avg_max_B,avg_time_outside_s\n")
        for row in result["table"]:
            fh.write(
                f"{row['method']},{row['trajectory']},{row['max_B']:.6g},"
                f"{row['avg_max_B']:.6g},{row['avg_time_outside_s']:.6g}\n"
            )
    print(f"wrote {trials_path} and {table_path}")
    for row in result["table"]:
        print(
            f"  {row['method']:22s} {row['trajectory']:8s} max B {row['max_B']:9.4f}  "
            f"avg max B {row['avg_max_B']:9.4f}  avg time outside {row['avg_time_outside_s']:7.4f} s"
        )
    return 0


def cmd_verify(args) -> int:
    from adcbf.verify import run_all

    results = run_all(mutate=args.mutate)
    failures = 0
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        if not ok:
            failures += 1
    if failures:
        print(f"{failures} check(s) failed", file=sys.stderr)
        return 1
    print("all checks passed")
    return 0


def _config_epilog() -> str:
    lines = ["simulation keys:"]
    for key, doc in SIM_KEYS.items():
        lines.append(f"  {key:16s} {doc}")
    for name in sorted(SCENARIOS):
        cls = SCENARIOS[name]
        lines.append(f"\n{name} scenario keys (defaults in parentheses):")
        for f in dataclasses.fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            if f.name in _TUPLE_FIELDS:
                default = _TUPLE_FIELDS[f.name][1](default)
            lines.append(f"  {f.name:16s} ({default})")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="adcbf",
        description="Safety-filtered control with online neural identification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a key = value config file")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="override one config key (repeatable; overrides file keys)",
    )
    common.add_argument("--scenario", choices=sorted(SCENARIOS))
    common.add_argument("--method", choices=METHODS)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir", dest="out_dir")

    run = sub.add_parser(
        "run",
        parents=[common],
        help="simulate one scenario and write trace.csv + summary.json",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    run.set_defaults(fn=cmd_run)

    mc = sub.add_parser(
        "montecarlo",
        parents=[common],
        help="randomized sweep over trajectories (nonpoly scenario)",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    mc.add_argument("--iterations", type=int, default=50)
    mc.add_argument(
        "--trajectories", default="spiral1,spiral2,figure8", help="comma-separated trajectory tags"
    )
    mc.add_argument("--workers", type=int, default=os.cpu_count())
    mc.set_defaults(fn=cmd_montecarlo)

    ver = sub.add_parser("verify", help="run the built-in invariant suite")
    ver.add_argument(
        "--mutate",
        choices=("jacobian",),
        help="deliberately corrupt one component to prove the suite catches it",
    )
    ver.set_defaults(fn=cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
