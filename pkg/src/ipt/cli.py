"""Command-line front end.

    ipt project   --config problem.json
    ipt detect    {fixed,quickest,fma,glrt} --config detector.json [--input series.csv]
    ipt simulate  {cht,tcd,qcd} [--config experiment.json | --preset] [--workers N]
    ipt bounds    --config inputs.json
    ipt bench     [--config bench.json]
    ipt analyze   --input series.csv --config analysis.json

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric non-convergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation as ev
from .bounds import BoundInputs, bounds_table, wald_root
from .detectors import (
    FixedIptConfig, QuickestIptConfig, fixed_ipt_run, fma_run, glrt_run, quickest_ipt_run,
)
from .projection import ConvergenceError, InfeasibleError, i_project, reverse_project
from .series import (
    EXPLICIT, LONG_TERM, DataError, QuantizerSpec, SeriesSpec, calibrate_cd, ingest_csv,
    long_term_pmf, quantize, rllf_analysis, rllf_csv_rows,
)
from .simplex import Pmf

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# ---------------------------------------------------------------------------
# helpers


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise DataError(f"no such config file: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{p}: invalid JSON ({exc})") from None


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _csv_text(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def _stream(cfg: dict, args) -> np.ndarray:
    if args.input:
        return ingest_csv(SeriesSpec(args.input, _column(args.column), missing="error")).values
    if "stream" in cfg:
        return np.asarray(cfg["stream"], dtype=float)
    raise UsageError("detect needs --input or a 'stream' list in the config")


def _column(column: str) -> str | int:
    return int(column) if column.isdigit() else column


# ---------------------------------------------------------------------------
# subcommands


def cmd_project(args) -> str:
    cfg = _load_config(args.config)
    _, f0, q = ev.problem_from_dict(cfg)
    if "c" not in cfg:
        raise UsageError("project config needs the raw threshold 'c'")
    c = float(cfg["c"])
    if cfg.get("reverse"):
        if "f_hat" not in cfg:
            raise UsageError("reverse projection needs 'f_hat'")
        res = reverse_project(Pmf(cfg["f_hat"], f0.alphabet), q, q.center(c))
    else:
        res = i_project(f0, q, q.center(c))
    out = {"f_star": res.f_star.probs.tolist(), "kl": res.kl_value, "active": res.active,
           "multipliers": {k: float(v) for k, v in res.multipliers.items()}}
    if args.format == "csv":
        rows = [["letter", "f_star"]] + [[repr(float(a)), repr(float(p))]
                                         for a, p in zip(f0.alphabet.letters, res.f_star.probs)]
        return _csv_text(rows)
    return json.dumps(out, indent=1) + "\n"


def cmd_detect(args) -> str:
    cfg = _load_config(args.config)
    _, f0, q = ev.problem_from_dict(cfg)
    stream = _stream(cfg, args)

    def need(key):
        if key not in cfg:
            raise UsageError(f"detect {args.detector} needs {key!r} in the config")
        return cfg[key]

    if args.detector == "fixed":
        config = FixedIptConfig(int(need("n")), float(need("c_s")), float(need("c_d")), q, f0,
                                int(cfg.get("stride", 1)))
        report = fixed_ipt_run(config, stream)
    elif args.detector == "quickest":
        qf = dataclasses.replace(q, q_floor=float(need("q_floor")))
        config = QuickestIptConfig(float(need("c_s")), float(need("c_d")), float(cfg.get("rho", 1.0)), qf, f0)
        report = quickest_ipt_run(config, stream, trace=True)
    elif args.detector == "fma":
        report = fma_run(int(need("window")), float(need("threshold")), q, stream, trace=True)
    else:
        report = glrt_run(int(need("window")), float(need("threshold")), q, float(need("q_floor")), f0,
                          stream, trace=True)
    if args.format == "csv":
        return report.trace_csv()
    return report.to_json(include_trace=args.trace) + "\n"


def _preset(scenario: str, trials: int | None) -> ev.ExperimentConfig:
    builders = {ev.CHT: ev.cht_config, ev.TCD: ev.tcd_config, ev.QCD: ev.qcd_config}
    return builders[scenario](**({"trials": trials} if trials else {}))


def cmd_simulate(args) -> str:
    if args.preset:
        config = _preset(args.scenario, args.trials)
    else:
        cfg = _load_config(args.config)
        if not cfg:
            raise UsageError("simulate needs --config or --preset")
        cfg.setdefault("scenario", args.scenario)
        if cfg["scenario"] != args.scenario:
            raise UsageError(f"config scenario {cfg['scenario']!r} does not match {args.scenario!r}")
        config = ev.ExperimentConfig.from_dict(cfg)
        if args.trials:
            config = dataclasses.replace(config, trials=args.trials)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    points = ev.simulate(config, workers=args.workers)
    return ev.curve_json(points) + "\n" if args.format == "json" else ev.curve_csv(points)


def cmd_bounds(args) -> str:
    cfg = _load_config(args.config)
    if not cfg:
        raise UsageError("bounds needs --config")
    v_star = cfg.get("v_star")
    if v_star is None and "alphabet" in cfg:
        _, f0, q = ev.problem_from_dict(cfg)
        v_star = wald_root(f0, q)
    b = BoundInputs.from_dict(cfg)
    rows = bounds_table(b, v_star)
    if args.format == "csv":
        table = [["bound", "raw", "clamped", "preconditions_ok", "warnings"]]
        for r in rows:
            table.append([r["bound"], "" if r["raw"] is None else repr(r["raw"]),
                          "" if r["clamped"] is None else repr(r["clamped"]), int(bool(r["preconditions_ok"])),
                          "; ".join(r["warnings"])])
        return _csv_text(table)
    return json.dumps({"inputs": b.to_dict(), "v_star": v_star, "bounds": rows}, indent=1) + "\n"


def cmd_bench(args) -> str:
    cfg = _load_config(args.config)
    if cfg:
        cfg.setdefault("scenario", ev.BENCH)
        cfg.setdefault("alphabet", [0, 1])
        cfg.setdefault("q_floor", 1.0)
        cfg.setdefault("threshold_sweep", {})
        config = ev.ExperimentConfig.from_dict(cfg)
    else:
        config = ev.bench_config()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    rows = ev.bench_step_time(config)
    if args.format == "json":
        return json.dumps([dataclasses.asdict(r) for r in rows], indent=1) + "\n"
    return ev.bench_csv(rows)


def cmd_analyze(args) -> str:
    cfg = _load_config(args.config)
    spec = SeriesSpec(args.input, _column(args.column if args.column is not None else str(cfg.get("column", 0))),
                      args.timestamp if args.timestamp is not None else cfg.get("timestamp"),
                      cfg.get("missing", "drop"))
    series = ingest_csv(spec)
    qspec = QuantizerSpec.from_dict(cfg.get("quantizer", {"mode": "quantile", "m": 5}))
    qz = quantize(series.values, qspec)
    n = int(args.n if args.n is not None else cfg.get("n", 0))
    if n < 1:
        raise UsageError("analyze needs a window size n >= 1")
    if args.c_s is None and "c_s" not in cfg:
        raise UsageError("analyze needs c_s")
    c_s = float(args.c_s if args.c_s is not None else cfg["c_s"])
    direction = args.direction or cfg.get("direction", "above")
    f0_mode = cfg.get("f0_mode", LONG_TERM)
    f0 = Pmf(cfg["f0"], qz.alphabet) if f0_mode == EXPLICIT else None
    c_d = args.c_d if args.c_d is not None else cfg.get("c_d", "calibrate")
    if c_d == "calibrate":
        base = f0 if f0 is not None else long_term_pmf(qz.indices, qz.alphabet)
        seed = args.seed if args.seed is not None else int(cfg.get("seed", 0))
        c_d = calibrate_cd(base, n, c_s, float(cfg.get("percentile", 95.0)),
                           int(cfg.get("resamples", 20_000)), np.random.default_rng(seed), direction)
    rows = rllf_analysis(qz.symbols, qz.alphabet, n, c_s, float(c_d), f0_mode, f0, direction, series.timestamps)
    if args.format == "json":
        return json.dumps({"rows_read": series.rows, "dropped": series.dropped, "clamped": qz.clamped,
                           "alphabet": qz.alphabet.letters.tolist(), "c_d": float(c_d),
                           "windows": [dataclasses.asdict(r) for r in rows]}) + "\n"
    return _csv_text(rllf_csv_rows(rows))


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"), default=None)

    p = _Parser(prog="ipt", description="Information projection tests for outlier-robust change detection.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("project", parents=[common], help="I-projection (or reverse projection) of a pmf")
    s.set_defaults(func=cmd_project, default_format="json")

    s = sub.add_parser("detect", parents=[common], help="run one detector over a series")
    s.add_argument("detector", choices=("fixed", "quickest", "fma", "glrt"))
    s.add_argument("--input", help="CSV with a header row")
    s.add_argument("--column", default="0", help="value column name or 0-based index")
    s.add_argument("--trace", action="store_true", help="include the per-step trace in JSON output")
    s.set_defaults(func=cmd_detect, default_format="json")

    s = sub.add_parser("simulate", parents=[common], help="Monte Carlo operating characteristics")
    s.add_argument("scenario", choices=(ev.CHT, ev.TCD, ev.QCD))
    s.add_argument("--preset", action="store_true", help="use the reference experiment settings")
    s.add_argument("--trials", type=int, help="override the trial count")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_simulate, default_format="csv")

    s = sub.add_parser("bounds", parents=[common], help="evaluate the analytic bounds")
    s.set_defaults(func=cmd_bounds, default_format="json")

    s = sub.add_parser("bench", parents=[common], help="per-step timing of IPT, FMA and GLRT")
    s.set_defaults(func=cmd_bench, default_format="csv")

    s = sub.add_parser("analyze", parents=[common], help="rolling outlier-versus-change analysis of a series")
    s.add_argument("--input", required=True, help="CSV with a header row")
    s.add_argument("--column", default=None)
    s.add_argument("--timestamp", default=None)
    s.add_argument("--n", type=int)
    s.add_argument("--c-s", dest="c_s", type=float)
    s.add_argument("--c-d", dest="c_d", type=float)
    s.add_argument("--direction", choices=("above", "below"))
    s.set_defaults(func=cmd_analyze, default_format="csv")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.format is None:
            args.format = args.default_format
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        _emit(args.func(args), args.out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConvergenceError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, InfeasibleError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, KeyError, TypeError) as exc:
        print(f"usage error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
