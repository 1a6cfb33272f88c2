import json

import numpy as np
import pytest

from adcbf.cli import ConfigError, load_config_file, main, resolve_config
from adcbf.harness import SimConfig, monte_carlo, simulate
from adcbf.scenarios import NonPolyScenario


class TestConfigParsing:
    def test_key_value_file(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nscenario = nonpoly\nmethod=adcbf\nseed = 3\nk_e = 12.5\n")
        pairs = load_config_file(str(cfg))
        resolved = resolve_config(pairs)
        assert resolved["sim"]["scenario"] == "nonpoly"
        assert resolved["sim"]["seed"] == 3
        assert resolved["scenario_overrides"]["k_e"] == 12.5

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="bogus"):
            resolve_config({"scenario": "acc", "bogus": "1"})

    def test_bad_value_rejected(self):
        with pytest.raises(ConfigError):
            resolve_config({"scenario": "acc", "k_x": "fast"})

    def test_windows_syntax(self):
        resolved = resolve_config({"scenario": "nonpoly", "loss_windows": "2:3,7:8.5"})
        assert resolved["sim"]["loss_windows"] == ((2.0, 3.0), (7.0, 8.5))
        resolved = resolve_config({"scenario": "nonpoly", "loss_windows": ""})
        assert resolved["sim"]["loss_windows"] == ()

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError, match="unknown scenario"):
            resolve_config({"scenario": "rocket"})


class TestRunCommand:
    def test_happy_path_writes_outputs(self, tmp_path):
        out = tmp_path / "out"
        rc = main(
            [
                "run",
                "--scenario", "acc",
                "--method", "adcbf",
                "--seed", "0",
                "--out-dir", str(out),
                "--set", "duration=1.0",
            ]
        )
        assert rc == 0
        trace = out / "trace_acc_adcbf_seed0.csv"
        summary = out / "summary_acc_adcbf_seed0.json"
        assert trace.exists() and summary.exists()
        payload = json.loads(summary.read_text())
        assert payload["config"]["scenario"] == "acc"
        assert len(payload["final_weights"]) == 122

    def test_malformed_key_exits_one(self, tmp_path, capsys):
        rc = main(["run", "--set", "not_a_key=1", "--out-dir", str(tmp_path)])
        assert rc == 1
        assert "not_a_key" in capsys.readouterr().err

    def test_diverging_run_exits_two(self, tmp_path, capsys):
        rc = main(
            [
                "run",
                "--scenario", "nonpoly",
                "--method", "adcbf",
                "--out-dir", str(tmp_path),
                "--set", "k_x=4000",     # constructed diverging gain set
                "--set", "duration=5",
                "--set", "loss_windows=",
            ]
        )
        assert rc == 2
        assert "step" in capsys.readouterr().err

    def test_echoed_config_replays_identically(self, tmp_path):
        out1 = tmp_path / "a"
        assert (
            main(
                ["run", "--scenario", "nonpoly", "--seed", "4", "--out-dir", str(out1),
                 "--set", "duration=3.0", "--set", "loss_windows=1:2"]
            )
            == 0
        )
        payload = json.loads((out1 / "summary_nonpoly_adcbf_seed4.json").read_text())
        cfg_file = tmp_path / "echo.cfg"
        cfg_file.write_text("".join(f"{k} = {v}\n" for k, v in payload["config"].items()))
        out2 = tmp_path / "b"
        assert main(["run", "--config", str(cfg_file), "--set", f"out_dir={out2}"]) == 0
        a = (out1 / "trace_nonpoly_adcbf_seed4.csv").read_bytes()
        b = (out2 / "trace_nonpoly_adcbf_seed4.csv").read_bytes()
        assert a == b

    def test_flag_overrides_file(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("scenario = acc\nseed = 1\nduration = 0.5\nmethod = nominal\n")
        rc = main(["run", "--config", str(cfg), "--seed", "9", "--out-dir", str(tmp_path)])
        assert rc == 0
        assert (tmp_path / "trace_acc_nominal_seed9.csv").exists()


class TestMonteCarloCommand:
    def test_single_iteration_matches_direct_run(self):
        template = NonPolyScenario()
        res = monte_carlo(template, ("spiral1",), iterations=1, base_seed=77, workers=1)
        trial = [r for r in res["trials"] if r["method"] == "adcbf"][0]
        rng = np.random.default_rng(77)
        w1 = float(rng.uniform(0.0, 9.0))
        w2 = float(rng.uniform(10.0, 19.0))
        sc = NonPolyScenario(loss_windows=((w1, w1 + 1.0), (w2, w2 + 1.0)))
        _, direct = simulate(sc, SimConfig(method="adcbf", seed=77))
        assert trial["loss_windows"] == ((w1, w1 + 1.0), (w2, w2 + 1.0))
        assert trial["max_B"] == pytest.approx(direct.max_B, abs=1e-12)
        assert trial["time_outside_s"] == direct.time_outside_s

    def test_table_shape(self, tmp_path):
        rc = main(
            [
                "montecarlo",
                "--scenario", "nonpoly",
                "--iterations", "1",
                "--trajectories", "constant",
                "--seed", "5",
                "--workers", "1",
                "--out-dir", str(tmp_path),
            ]
        )
        assert rc == 0
        table = (tmp_path / "table_nonpoly_mc_iter1_seed5.csv").read_text().splitlines()
        assert table[0] == "method,trajectory,max_B,avg_max_B,avg_time_outside_s"
        assert len(table) == 3  # two methods x one trajectory
        trials = (tmp_path / "trials_nonpoly_mc_iter1_seed5.csv").read_text().splitlines()
        assert len(trials) == 3

    def test_wrong_scenario_rejected(self, tmp_path, capsys):
        rc = main(["montecarlo", "--scenario", "acc", "--out-dir", str(tmp_path)])
        assert rc == 1


class TestVerifyCommand:
    def test_fresh_checkout_passes(self, capsys):
        assert main(["verify"]) == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 6
        assert "[FAIL]" not in out

    def test_mutated_jacobian_caught(self, capsys):
        assert main(["verify", "--mutate", "jacobian"]) == 1
        out = capsys.readouterr().out
        assert "[FAIL] jacobian-vs-finite-difference" in out

    def test_help_documents_config_keys(self, capsys):
        with pytest.raises(SystemExit):
            main(["run", "--help"])
        text = capsys.readouterr().out
        for key in ("loss_windows", "kappa_0", "gamma_gain", "delta_bar"):
            assert key in text
