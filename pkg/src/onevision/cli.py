"""Command-line entry point: single runs, parameter sweeps, the LTI
verification suite, and the live teleop server.

Exit codes: 0 on success, 1 on run failure, 2 on usage errors.
Set ONEVISION_LOG=debug|info|warning|error for log verbosity.
"""

from __future__ import annotations

import argparse
import asyncio
import dataclasses
import logging
import os
import sys
from pathlib import Path

from onevision.config import ConfigError, load_config
from onevision.frameworks import FRAMEWORKS
from onevision.sim import (
    RunConfig,
    SWEEP_AXES,
    metrics_csv,
    run_simulation,
    run_sweep,
    sweep_rows_to_csv,
)
from onevision.tasks import TASK_BUILDERS

log = logging.getLogger("onevision")


def _setup_logging() -> None:
    level = os.environ.get("ONEVISION_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(name)s %(levelname)s %(message)s")


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    for attr, field in (("task", "task"), ("framework", "framework"), ("seed", "seed")):
        v = getattr(args, attr, None)
        if v is not None:
            overrides[field] = v
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    return cfg


def _check_ids(cfg: RunConfig, parser: argparse.ArgumentParser, need_framework: bool = True) -> None:
    if cfg.task not in TASK_BUILDERS:
        parser.error(
            f"unknown task {cfg.task!r}; registered tasks: {', '.join(sorted(TASK_BUILDERS))}"
        )
    if need_framework and cfg.framework not in FRAMEWORKS:
        parser.error(
            f"unknown framework {cfg.framework!r}; registered frameworks: "
            f"{', '.join(sorted(FRAMEWORKS))}"
        )


def cmd_run(args, parser) -> int:
    cfg = _base_config(args)
    _check_ids(cfg, parser)
    out = Path(args.out) / cfg.task / cfg.framework / f"seed{cfg.seed}"
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = run_simulation(cfg)
    except Exception as exc:
        log.error("run failed: %s", exc)
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    (out / "metrics.csv").write_text(metrics_csv(result.metrics), encoding="utf-8", newline="\n")
    (out / "run.ovlog").write_bytes(result.to_bytes())
    for key in ("avg_regret", "log_loss", "avg_distance", "avg_deviation"):
        print(f"{key} = {result.metrics[key]:.9g}")
    print(f"wrote {out / 'metrics.csv'} and {out / 'run.ovlog'}")
    return 0


def cmd_sweep(args, parser) -> int:
    cfg = _base_config(args)
    _check_ids(cfg, parser, need_framework=False)
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        parser.error(f"--values must be a comma-separated number list, got {args.values!r}")
    if not values:
        parser.error("--values is empty")
    frameworks = args.frameworks.split(",") if args.frameworks else None
    if frameworks:
        for fw in frameworks:
            if fw not in FRAMEWORKS:
                parser.error(
                    f"unknown framework {fw!r}; registered frameworks: "
                    f"{', '.join(sorted(FRAMEWORKS))}"
                )
    rows = run_sweep(cfg, args.axis, values, args.seeds, frameworks=frameworks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"sweep_{args.axis}.csv"
    path.write_text(sweep_rows_to_csv(rows), encoding="utf-8", newline="\n")
    n_failed = sum(r.get("failed", 0) for r in rows if isinstance(r.get("seed"), int))
    print(f"wrote {path} ({len(rows)} rows, {n_failed} failed)")
    return 0 if n_failed == 0 else 1


def cmd_verify_lti(args, parser) -> int:
    from onevision.lti_verify import run_verification

    report = run_verification(n_lemma1_systems=args.systems, seed=args.seed)
    print(report.summary(), end="")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "lti_report.txt").write_text(report.summary(), encoding="utf-8", newline="\n")
    (out / "lti_report.csv").write_text(report.csv(), encoding="utf-8", newline="\n")
    print(f"wrote {out / 'lti_report.txt'} and {out / 'lti_report.csv'}")
    return 0 if report.all_passed else 1


def cmd_serve(args, parser) -> int:
    from onevision.server import serve_live

    cfg = _base_config(args)
    _check_ids(cfg, parser)
    try:
        asyncio.run(serve_live(args.port, cfg, speed=args.speed))
    except OSError as exc:
        print(f"cannot bind port {args.port}: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onevision",
        description="Distributed multi-agent control with delay compensation: "
        "simulation runs, sweeps, LTI verification, and the live teleop server.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation and write metrics + log")
    p_run.add_argument("--task", help=f"task id ({', '.join(sorted(TASK_BUILDERS))})")
    p_run.add_argument("--framework", help=f"framework id ({', '.join(sorted(FRAMEWORKS))})")
    p_run.add_argument("--config", help="run-config file (section.key = value lines)")
    p_run.add_argument("--seed", type=int, help="random seed")
    p_run.add_argument("--out", default="out", help="output directory root")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="sweep one axis across frameworks and seeds")
    p_sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    p_sweep.add_argument("--values", required=True, help="comma-separated axis values")
    p_sweep.add_argument("--seeds", type=int, default=10, help="number of seeds per cell")
    p_sweep.add_argument("--task", help="task id")
    p_sweep.add_argument("--frameworks", help="comma-separated framework subset")
    p_sweep.add_argument("--config", help="base run-config file")
    p_sweep.add_argument("--seed", type=int, help=argparse.SUPPRESS)
    p_sweep.add_argument("--out", default="out", help="output directory")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify-lti", help="run the LTI verification suite")
    p_verify.add_argument("--systems", type=int, default=50, help="randomized systems for the anchor check")
    p_verify.add_argument("--seed", type=int, default=2024)
    p_verify.add_argument("--out", default="out", help="output directory")
    p_verify.set_defaults(fn=cmd_verify_lti)

    p_serve = sub.add_parser("serve", help="run the live teleop server")
    p_serve.add_argument("--port", type=int, default=8765)
    p_serve.add_argument("--task", default="formation-switching")
    p_serve.add_argument("--framework", help="framework id (default onevision)")
    p_serve.add_argument("--config", help="run-config file")
    p_serve.add_argument("--seed", type=int, help="random seed")
    p_serve.add_argument("--speed", type=float, default=1.0, help="wall-clock pacing multiplier")
    p_serve.set_defaults(fn=cmd_serve)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args, parser)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
