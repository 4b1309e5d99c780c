"""Command-line entry point: ``agentkernel run | compare | replay | list``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from agentkernel.errors import KernelError
from agentkernel.harness.runner import EXIT_CODES, FAILED, compare_runs, load_metrics, replay, run_scenario, write_trace
from agentkernel.harness.scenario import HISTORY_MODES, TRIM_MODES, Scenario, builtin_scenarios
from agentkernel.safety import load_profile

log = logging.getLogger("agentkernel")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="agentkernel", description="Run scripted browser-agent scenarios on the virtual web.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write a metrics report")
    run.add_argument("--scenario", required=True, help="scenario JSON file, or the name of a built-in one")
    run.add_argument("--seed", type=int, default=0, help="seed for generated page content (default: 0)")
    run.add_argument("--history", choices=HISTORY_MODES, help="override the scenario's history mode")
    run.add_argument("--trim", choices=TRIM_MODES, help="override the scenario's trim mode")
    run.add_argument("--profile", help="agent profile JSON, replacing the scenario's profile")
    run.add_argument("--report", required=True, help="where to write the JSON metrics report")
    run.add_argument("--csv", help="also write per-request cost rows as CSV")
    run.add_argument("--trace", help="write the event trace as JSON lines")
    run.add_argument("--confirm", choices=("auto-grant", "auto-deny", "interactive"), default="auto-deny",
                     help="how sensitive actions get confirmed (default: auto-deny)")

    cmp = sub.add_parser("compare", help="compare two metrics reports")
    cmp.add_argument("a")
    cmp.add_argument("b")

    rep = sub.add_parser("replay", help="re-execute a trace and check it reproduces")
    rep.add_argument("trace")
    rep.add_argument("--confirm", choices=("auto-grant", "auto-deny"),
                     help="confirmation mode, required for traces recorded interactively")

    sub.add_parser("list", help="list the built-in scenarios")
    return parser


def _run(args) -> int:
    scenario = Scenario.load(args.scenario).with_modes(history=args.history, trim=args.trim)
    profile = load_profile(args.profile) if args.profile else None
    log.info("running %s (seed %d, history=%s, trim=%s)", scenario.name, args.seed, scenario.history, scenario.trim)
    result = run_scenario(scenario, args.seed, profile=profile, confirm=args.confirm)
    m = result.metrics
    Path(args.report).write_text(json.dumps(m.to_dict(), indent=2) + "\n")
    if args.csv:
        Path(args.csv).write_text(m.cost.to_csv())
    if args.trace:
        write_trace(result, args.trace)
        log.info("trace written to %s", args.trace)
    print(f"{scenario.name}: {m.outcome} after {m.tool_calls} tool calls, "
          f"{m.elapsed_ticks} ticks, {m.total_tokens} tokens, ${m.total_cost:.5f}")
    if m.failure:
        print(f"  step {m.failure['step']}: {m.failure['message']}", file=sys.stderr)
    return result.exit_code


def _compare(args) -> int:
    report = compare_runs(load_metrics(args.a), load_metrics(args.b))
    print(json.dumps(report, indent=2))
    return 0


def _replay(args) -> int:
    report = replay(args.trace, confirm=args.confirm)
    if report.matches:
        print(f"replay matches ({report.events} events)")
        return 0
    print(f"replay diverges at call {report.first_divergence}", file=sys.stderr)
    if report.expected is not None:
        print(f"  recorded: {json.dumps(report.expected, sort_keys=True)}", file=sys.stderr)
        print(f"  replayed: {json.dumps(report.got, sort_keys=True)}", file=sys.stderr)
    return EXIT_CODES[FAILED]


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            return _run(args)
        if args.command == "compare":
            return _compare(args)
        if args.command == "replay":
            return _replay(args)
        for name in builtin_scenarios():
            print(name)
        return 0
    except KernelError as exc:
        print(f"error [{exc.code}]: {exc.message}", file=sys.stderr)
        return EXIT_CODES[FAILED]


if __name__ == "__main__":
    sys.exit(main())
