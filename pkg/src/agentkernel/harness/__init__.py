"""Scenario runner, scripted policies and command-line entry point."""

from agentkernel.harness.runner import Metrics, RunResult, compare_runs, replay, run_scenario
from agentkernel.harness.scenario import Scenario

__all__ = ["Metrics", "RunResult", "Scenario", "compare_runs", "replay", "run_scenario"]
