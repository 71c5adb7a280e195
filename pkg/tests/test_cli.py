import json
import subprocess
import sys

import numpy as np
import pytest

from ipt.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main


def write_json(tmp_path, name, obj):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return str(p)


@pytest.fixture
def series_csv(tmp_path):
    rng = np.random.default_rng(3)
    x = np.concatenate([rng.normal(0, 1, 400), rng.normal(1.5, 1, 60), rng.normal(0, 1, 200)])
    p = tmp_path / "s.csv"
    p.write_text("day,value\n" + "".join(f"{i},{v:.6f}\n" for i, v in enumerate(x)))
    return str(p)


def run(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestProject:
    def test_ternary(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "p.json", {"alphabet": [-1, 0, 1], "c": 0.25})
        code, out, _ = run(["project", "--config", cfg], capsys)
        res = json.loads(out)
        assert code == EXIT_OK and res["active"]
        assert res["multipliers"]["r"] == pytest.approx(0.3841563, abs=1e-6)

    def test_reverse(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "p.json", {"alphabet": [-1, 0, 1], "c": 0.25, "reverse": True,
                                              "f_hat": [0.5, 0.3, 0.2]})
        code, out, _ = run(["project", "--config", cfg, "--format", "csv"], capsys)
        assert code == EXIT_OK and out.splitlines()[0] == "letter,f_star"

    def test_infeasible_is_data_error(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "p.json", {"alphabet": [-1, 0, 1], "c": 2.0})
        assert run(["project", "--config", cfg], capsys)[0] == EXIT_DATA

    def test_missing_threshold(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "p.json", {"alphabet": [-1, 0, 1]})
        assert run(["project", "--config", cfg], capsys)[0] == EXIT_USAGE


class TestDetect:
    @pytest.mark.parametrize("detector,extra", [
        ("fixed", {"n": 5, "c_s": 0.4, "c_d": 0.01}),
        ("quickest", {"c_s": 3.0, "c_d": 0.01, "q_floor": 0.25, "rho": 1.0}),
        ("fma", {"window": 5, "threshold": 0.4}),
        ("glrt", {"window": 5, "threshold": 1.0, "q_floor": 0.25}),
    ])
    def test_alarm_on_ones(self, tmp_path, capsys, detector, extra):
        cfg = write_json(tmp_path, "d.json", {"alphabet": [-1, 0, 1], "stream": [0, -1, 0] + [1] * 12, **extra})
        code, out, _ = run(["detect", detector, "--config", cfg], capsys)
        assert code == EXIT_OK
        assert json.loads(out)["decision"] == "change"

    def test_trace_csv(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "d.json", {"alphabet": [-1, 0, 1], "stream": [1] * 8, "window": 4,
                                              "threshold": 2.0})
        code, out, _ = run(["detect", "fma", "--config", cfg, "--format", "csv"], capsys)
        assert code == EXIT_OK and out.splitlines()[0] == "k,S,D,n_k" and len(out.splitlines()) == 6

    def test_needs_parameters(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "d.json", {"alphabet": [-1, 0, 1], "stream": [1, 1]})
        assert run(["detect", "fixed", "--config", cfg], capsys)[0] == EXIT_USAGE

    def test_letters_outside_alphabet(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "d.json", {"alphabet": [-1, 0, 1], "stream": [2, 2], "window": 1,
                                              "threshold": 0.5})
        assert run(["detect", "fma", "--config", cfg], capsys)[0] != EXIT_OK


class TestSimulate:
    def small(self, tmp_path):
        return write_json(tmp_path, "e.json", {
            "alphabet": [-1, 0, 1], "q_floor": 0.25, "n": 10, "trials": 300, "post_change_samples": 2,
            "threshold_sweep": {"ipt": [[0.1, 0.01]], "fma": [0.1], "glrt": [1.0]}, "seed": 5})

    def test_csv(self, tmp_path, capsys):
        code, out, _ = run(["simulate", "cht", "--config", self.small(tmp_path)], capsys)
        assert code == EXIT_OK
        lines = out.splitlines()
        assert lines[0] == "detector,c_s,c_d,x,y,ci" and len(lines) == 4

    def test_seed_override_and_file(self, tmp_path, capsys):
        cfg = self.small(tmp_path)
        a, b, c = (tmp_path / f"{k}.csv" for k in "abc")
        for path, seed in ((a, "1"), (b, "1"), (c, "2")):
            assert main(["simulate", "cht", "--config", cfg, "--seed", seed, "--out", str(path)]) == EXIT_OK
        assert a.read_bytes() == b.read_bytes() != c.read_bytes()

    def test_scenario_mismatch(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "e.json", {"scenario": "tcd", "alphabet": [-1, 0, 1], "q_floor": 0.25,
                                              "threshold_sweep": {"fma": [0.1]}})
        assert run(["simulate", "cht", "--config", cfg], capsys)[0] == EXIT_USAGE

    def test_needs_config(self, capsys):
        assert run(["simulate", "cht"], capsys)[0] == EXIT_USAGE

    def test_bad_workers(self, tmp_path, capsys):
        assert run(["simulate", "cht", "--config", self.small(tmp_path), "--workers", "0"], capsys)[0] == EXIT_USAGE


class TestBoundsAndBench:
    def test_bounds_json(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "b.json", {"n": 1, "m": 3, "c_s": 20, "c_d": 0.2, "q0": -0.2, "q_floor": 0.25,
                                              "L": 1.0, "alphabet": [-1, 0, 1], "f0": [0.5, 0.2, 0.3]})
        code, out, _ = run(["bounds", "--config", cfg], capsys)
        res = json.loads(out)
        assert code == EXIT_OK and res["v_star"] == pytest.approx(np.log(5 / 3))
        assert any(r["bound"] == "arl_lower" for r in res["bounds"])

    def test_bench(self, tmp_path, capsys):
        cfg = write_json(tmp_path, "bench.json", {"bench_sizes": [[3, 25]], "bench_steps": 500, "glrt_steps": 20,
                                                  "bench_repeats": 1})
        code, out, _ = run(["bench", "--config", cfg], capsys)
        assert code == EXIT_OK and out.splitlines()[0] == "detector,m,n,mode,ns_per_step"
        assert len(out.splitlines()) == 4


class TestAnalyze:
    def config(self, tmp_path, **kw):
        base = {"column": "value", "quantizer": {"mode": "uniform", "m": 5, "lo": -2.5, "hi": 2.5},
                "n": 20, "c_s": 0.7}
        base.update(kw)
        return write_json(tmp_path, "a.json", base)

    def test_csv_columns(self, tmp_path, capsys, series_csv):
        code, out, _ = run(["analyze", "--input", series_csv, "--config", self.config(tmp_path)], capsys)
        lines = out.splitlines()
        assert code == EXIT_OK and lines[0] == "t,moving_avg,s_crossed,rllf,change"
        assert len(lines) == 660 - 20 + 2
        assert any(line.endswith(",1") for line in lines[1:])

    def test_flags_override(self, tmp_path, capsys, series_csv):
        cfg = self.config(tmp_path)
        code, out, _ = run(["analyze", "--input", series_csv, "--config", cfg, "--c-d", "100", "--format", "json"],
                           capsys)
        res = json.loads(out)
        assert code == EXIT_OK and res["c_d"] == 100 and not any(w["change"] for w in res["windows"])

    def test_deterministic_calibration(self, tmp_path, series_csv):
        cfg = self.config(tmp_path)
        outs = []
        for k in range(2):
            path = tmp_path / f"o{k}.csv"
            assert main(["analyze", "--input", series_csv, "--config", cfg, "--seed", "4", "--out", str(path)]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_missing_file(self, tmp_path, capsys):
        assert run(["analyze", "--input", str(tmp_path / "x.csv"), "--n", "5", "--c-s", "0"], capsys)[0] == EXIT_DATA

    def test_missing_window(self, tmp_path, capsys, series_csv):
        cfg = self.config(tmp_path, n=0)
        assert run(["analyze", "--input", series_csv, "--config", cfg], capsys)[0] == EXIT_USAGE


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "ipt", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "simulate" in res.stdout
    res = subprocess.run([sys.executable, "-m", "ipt", "nonsense"], capture_output=True, text=True)
    assert res.returncode == EXIT_USAGE
