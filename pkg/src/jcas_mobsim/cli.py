"""Command-line entry point: ``jcas-mobsim run|preset|trace-check|traceability``."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .runner import MetricsRecord, run
from .scenario import PRESETS, Scenario, ScenarioError, load_preset, load_scenario, preset_text
from .tracecheck import check_trace
from .traceability import build_report
from .world import SimulationError


def _summary(m: MetricsRecord) -> str:
    return (
        f"{m.scenario}: seed={m.seed} events={m.events} detected={len(m.detected_objects)} "
        f"bistatic_only={len(m.bistatic_only)} delivered={sum(m.delivered.values())} "
        f"dropped={sum(m.drops.values())} cellular={m.cellular_tx}"
    )


def _run_one(job: tuple[Scenario, str]) -> str:
    scenario, out = job
    return _summary(run(scenario, out))


def cmd_run(args) -> int:
    sources = [(s, None) for s in args.scenario] + [(None, p) for p in args.preset]
    if not sources:
        print("error: give at least one --scenario or --preset", file=sys.stderr)
        return 2
    jobs = []
    try:
        for path, preset in sources:
            sc = load_scenario(path) if path else load_preset(preset)
            sc = sc.with_overrides(seed=args.seed, duration=args.duration)
            out = Path(args.out) if len(sources) == 1 else Path(args.out) / sc.name
            jobs.append((sc, str(out)))
    except (ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    names = [str(o) for _, o in jobs]
    if len(set(names)) != len(names):
        print("error: scenarios share a name; run them separately", file=sys.stderr)
        return 2
    try:
        if args.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                lines = list(pool.map(_run_one, jobs))
        else:
            lines = [_run_one(j) for j in jobs]
    except SimulationError as exc:
        print(f"simulation failed: {exc}", file=sys.stderr)
        return 1
    for line in lines:
        print(line)
    return 0


def cmd_preset(args) -> int:
    text = preset_text(args.name)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_trace_check(args) -> int:
    try:
        report = check_trace(args.dir)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{report.records} records")
    for line in report.lines():
        print(line)
    return 0 if report.ok else 1


def cmd_traceability(args) -> int:
    report = build_report(args.tests)
    for line in report.lines():
        print(line)
    if report.missing:
        print(f"uncovered: {', '.join(report.missing)}")
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jcas-mobsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one or more scenarios")
    p.add_argument("--scenario", action="append", default=[], help="scenario YAML file (repeatable)")
    p.add_argument("--preset", action="append", default=[], choices=PRESETS, help="shipped preset (repeatable)")
    p.add_argument("--seed", type=int, help="override the scenario seed (unsigned 64-bit)")
    p.add_argument("--duration", type=float, help="override the duration in seconds")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs when several scenarios are given")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("preset", help="print a shipped preset file")
    p.add_argument("name", choices=PRESETS)
    p.add_argument("--out", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_preset)

    p = sub.add_parser("trace-check", help="re-verify trace invariants offline")
    p.add_argument("dir", help="run output directory or trace.jsonl path")
    p.set_defaults(func=cmd_trace_check)

    p = sub.add_parser("traceability", help="print the requirement traceability report")
    p.add_argument("--tests", default="tests", help="test directory to scan for requirement markers")
    p.set_defaults(func=cmd_traceability)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
