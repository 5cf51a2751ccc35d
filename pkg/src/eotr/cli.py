"""Command line entry point.

    eotr run <config> [--assert] [--jobs N] [--out DIR]
    eotr plot <csv> --kind {rate-curve,entropy-profile,laplace-slope} [--out FILE]
    eotr list

Exit codes of ``run``: 0 success, 1 configuration error, 2 solver
non-convergence (artifacts are still written, rows flagged), 3 failed
assertion in ``--assert`` mode. A failed assertion takes precedence over
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from .config import ConfigError, load_config
from .exact_ot import LadderExhausted, SimplexError
from .pipelines import run_pipeline
from .plots import PLOT_KINDS, PlotError, emit_plot

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_ASSERT = 0, 1, 2, 3


def bundled_configs() -> dict:
    """Name -> path of the configuration files shipped with the package."""
    root = resources.files("eotr") / "configs"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".toml")}


def _resolve(config: str) -> Path:
    p = Path(config)
    if p.exists():
        return p
    bundled = bundled_configs()
    if config in bundled:
        return bundled[config]
    return p


def assert_suite(cfg, metrics: dict, stream=None) -> bool:
    """Evaluate the configured assertions, print one line each, return overall success.

    Raises ``ConfigError`` for a metric the pipeline does not produce.
    """
    stream = stream or sys.stdout
    ok = True
    for a in cfg.assertions:
        if a.metric not in metrics:
            raise ConfigError(f"unknown metric {a.metric!r}; this pipeline produces "
                              f"{sorted(metrics)}", cfg.path, a.line, 1)
        value = float(metrics[a.metric])
        margin = a.margin(value)
        passed = bool(margin >= 0)
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'}  {a.describe():<50s} value={value:.6g} "
              f"margin={margin:+.3g}", file=stream)
    return ok


def _manifest(cfg, out_dir, outcome, status, jobs):
    import eotr

    return {
        "name": cfg.name,
        "pipeline": cfg.pipeline,
        "seed": cfg.seed,
        "config_path": cfg.path,
        "config": cfg.raw,
        "output_dir": str(out_dir),
        "jobs": jobs,
        "files": outcome.files if outcome else [],
        "metrics": outcome.metrics if outcome else {},
        "converged": outcome.converged if outcome else None,
        "exit_status": status,
        "versions": {"eotr": eotr.__version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
    }


def cmd_run(args) -> int:
    try:
        cfg = load_config(_resolve(args.config))
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out or os.environ.get("EOTR_OUT") or cfg.output_dir)
    try:
        outcome = run_pipeline(cfg, out_dir, jobs=args.jobs)
    except (SimplexError, LadderExhausted) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except ValueError as exc:
        print(f"error: {cfg.path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    status = EXIT_OK if outcome.converged else EXIT_NONCONVERGED
    if not outcome.converged:
        print("warning: some solves did not converge; see the 'converged' column",
              file=sys.stderr)
    for key in sorted(outcome.metrics):
        print(f"{key} = {outcome.metrics[key]:.6g}")
    if args.check:
        try:
            if not assert_suite(cfg, outcome.metrics):
                status = EXIT_ASSERT
        except ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            status = EXIT_CONFIG
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_manifest(cfg, out_dir, outcome, status, args.jobs), fh, indent=2,
                  sort_keys=True, default=str)
    print(f"wrote {', '.join(outcome.files + ['manifest.json'])} to {out_dir}")
    return status


def cmd_plot(args) -> int:
    try:
        path = emit_plot(args.csv, args.kind, args.out)
    except PlotError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"wrote {path}")
    return EXIT_OK


def cmd_list(args) -> int:
    for name, path in sorted(bundled_configs().items()):
        print(f"{name:<28s} {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eotr", description="Entropic transport rate experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run the pipeline described by a config file")
    run.add_argument("config", help="path to a TOML config, or the name of a bundled one")
    run.add_argument("--assert", dest="check", action="store_true",
                     help="evaluate the [[assert]] entries; exit 3 if any fails")
    run.add_argument("--jobs", type=int, default=1, help="threads for independent sub-runs")
    run.add_argument("--out", help="output directory (overrides EOTR_OUT and output_dir)")
    run.set_defaults(func=cmd_run)
    plot = sub.add_parser("plot", help="render an SVG from a pipeline CSV")
    plot.add_argument("csv")
    plot.add_argument("--kind", required=True, choices=PLOT_KINDS)
    plot.add_argument("--out", help="SVG file to write")
    plot.set_defaults(func=cmd_plot)
    lst = sub.add_parser("list", help="list bundled configs")
    lst.set_defaults(func=cmd_list)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
