"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 evaluator error or corrupt
state, 4 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import benchmarks, report
from .config import OUT_DIR_ENV, load_config
from .evaluators import CalibrationError, EvaluationError, calibrate_latency_model, load_measurements
from .gp import ModelFitError
from .network import ConfigurationError
from .search import ConfigMismatchError, SearchState, StateError, resume, run

EXIT_OK, EXIT_CONFIG, EXIT_EVALUATOR, EXIT_INTERNAL = 0, 2, 3, 4
STATE_FILE, TRAJECTORY_FILE, SUMMARY_FILE = "state.json", "trajectory.csv", "summary.txt"

log = logging.getLogger("prunesearch")


def _err(msg: str) -> None:
    print(f"prunesearch: {msg}", file=sys.stderr)


def _write_outputs(state: SearchState, out_dir: Path) -> None:
    (out_dir / TRAJECTORY_FILE).write_text(report.to_csv(state), encoding="utf-8")
    (out_dir / SUMMARY_FILE).write_text(report.to_text(state), encoding="utf-8")


def cmd_run(args) -> int:
    try:
        config = load_config(args.config, seed=args.seed)
    except ConfigurationError as e:
        _err(str(e))
        return EXIT_CONFIG
    out_dir = Path(args.out_dir or os.environ.get(OUT_DIR_ENV) or ".")
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        _err(f"cannot create output directory {out_dir}: {e}")
        return EXIT_CONFIG
    state_path = out_dir / STATE_FILE
    try:
        best, state = run(config, state_path=state_path)
    except EvaluationError as e:
        _err(f"evaluator failed: {e}; state saved to {state_path}, continue with 'prunesearch resume'")
        return EXIT_EVALUATOR
    except ModelFitError as e:
        _err(f"surrogate fit failed: {e}; state saved to {state_path}")
        return EXIT_INTERNAL
    _write_outputs(state, out_dir)
    print(report.best_block(state))
    return EXIT_OK


def cmd_resume(args) -> int:
    config = None
    if args.config:
        try:
            config = load_config(args.config)
        except ConfigurationError as e:
            _err(str(e))
            return EXIT_CONFIG
    state_path = Path(args.state)
    try:
        best, state = resume(state_path, config=config)
    except ConfigMismatchError as e:
        _err(str(e))
        return EXIT_CONFIG
    except StateError as e:
        _err(str(e))
        return EXIT_EVALUATOR
    except EvaluationError as e:
        _err(f"evaluator failed: {e}; state saved to {state_path}")
        return EXIT_EVALUATOR
    except ModelFitError as e:
        _err(f"surrogate fit failed: {e}")
        return EXIT_INTERNAL
    _write_outputs(state, state_path.parent)
    print(report.best_block(state))
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        state = SearchState.load(args.state)
    except StateError as e:
        _err(str(e))
        return EXIT_EVALUATOR
    sys.stdout.write(report.to_csv(state) if args.format == "csv" else report.to_text(state))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        rows = load_measurements(args.measurements)
    except OSError as e:
        _err(f"cannot read {args.measurements}: {e}")
        return EXIT_CONFIG
    except (ValueError, KeyError, TypeError) as e:
        _err(f"malformed measurement file {args.measurements}: {e!r}")
        return EXIT_CONFIG
    if not rows:
        _err(f"{args.measurements}: no measurements")
        return EXIT_CONFIG
    try:
        model = calibrate_latency_model(rows, schemes=args.schemes)
    except CalibrationError as e:
        _err(f"underdetermined fit: {e}")
        return EXIT_CONFIG
    print(f"{'label':<24}{'scheme':<9}{'GMACs':>8}{'measured':>10}{'predicted':>11}{'rel.err':>9}")
    for m in rows:
        pred = model.layer_ms(m.macs, m.scheme, m.layers)
        print(f"{m.label or '-':<24}{m.scheme:<9}{m.macs / 1e9:>8.2f}{m.measured_ms:>10.1f}"
              f"{pred:>11.1f}{(pred - m.measured_ms) / m.measured_ms:>+9.2%}")
    text = json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    seeds = range(args.seeds)
    print(f"{'problem':<12}{'budget':>7}  {'method':<7}{'median':>10}{'q25':>10}{'q75':>10}")
    for name, make, budget in benchmarks.SUITES[args.suite]:
        problem = make()
        res = benchmarks.compare(problem, seeds, budget)
        for method in ("bo", "random"):
            q25, med, q75 = np.percentile(res[method], [25, 50, 75])
            print(f"{name:<12}{budget:>7}  {method:<7}{med:>10.3f}{q25:>10.3f}{q75:>10.3f}")
        verdict = ">=" if np.median(res["bo"]) >= np.median(res["random"]) else "<"
        print(f"{'':<19}bo median {verdict} random median")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prunesearch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a search from a config file")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", "--out_dir", dest="out_dir")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("resume", help="continue an interrupted search")
    p.add_argument("state")
    p.add_argument("--config", help="refuse to resume unless this config matches the run")
    p.set_defaults(func=cmd_resume)

    p = sub.add_parser("report", help="print the report of a saved search")
    p.add_argument("state")
    p.add_argument("--format", choices=("csv", "text"), default="text")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("calibrate", help="fit a latency model to measurements")
    p.add_argument("measurements")
    p.add_argument("--out", help="write the fitted model here instead of stdout")
    p.add_argument("--schemes", nargs="*", help="schemes that must be fitted")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("bench", help="compare guided BO with random search")
    p.add_argument("--suite", choices=sorted(benchmarks.SUITES), default="small")
    p.add_argument("--seeds", type=int, default=3)
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.ERROR,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001
        log.exception("internal error")
        _err(f"internal error: {e!r}")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
