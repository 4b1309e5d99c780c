"""Scenario runner: the full agent loop with a scripted policy in place of a model.

Each step assembles the prompt the model would receive, charges it to the
token ledger, asks the policy for a call, executes it and records the step.
The run is a pure function of ``(scenario, seed)``: the trace it writes can be
replayed and must reproduce itself byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from agentkernel.actions import Action, BulkRequest
from agentkernel.budget import (
    LITE_PRICES,
    AssembledPrompt,
    CostReport,
    PromptLayer,
    TokenLedger,
    assemble_prompt,
    cached_tokens,
    compute_cost,
    estimate_tokens,
)
from agentkernel.context import FullTranscript, HistoryLog, heuristic_trim, trim_snapshot
from agentkernel.errors import IncomparableRuns, KernelError, ScenarioError
from agentkernel.execution import ActionResult, BulkResult, ExecutionLayer
from agentkernel.harness.policies import Observation, Policy, make_policy, replay_policy
from agentkernel.harness.scenario import Scenario, read_asset
from agentkernel.safety import AgentProfile, ConfirmationProvider
from agentkernel.snapshot import serialize_snapshot
from agentkernel.web.session import BrowserSession

SUCCESS, DENIED, FAILED = "success", "policy_denied", "scenario_error"
EXIT_CODES = {SUCCESS: 0, DENIED: 2, FAILED: 3}
TERMINAL_CODES = {"PolicyDenied", "ConfirmationRequired"}


def system_prompt() -> str:
    return read_asset("system_prompt.txt") + "\n" + read_asset("failure_adaptation.txt")


@dataclass
class Metrics:
    scenario: str
    seed: int
    modes: dict
    outcome: str = SUCCESS
    tool_calls: int = 0
    individual_actions: int = 0
    steps: int = 0
    elapsed_ticks: int = 0
    errors: int = 0
    re_requests: int = 0
    context_tokens: list[int] = field(default_factory=list)
    snapshot_tokens: list[int] = field(default_factory=list)
    ledger: TokenLedger = field(default_factory=TokenLedger)
    trimmer_ledger: TokenLedger = field(default_factory=TokenLedger)
    cost: CostReport | None = None
    trimmer_cost: CostReport | None = None
    final_state_digest: str = ""
    answer: dict = field(default_factory=dict)
    failure: dict | None = None

    @property
    def total_cost(self) -> float:
        return (self.cost.total if self.cost else 0.0) + (self.trimmer_cost.total if self.trimmer_cost else 0.0)

    @property
    def total_tokens(self) -> int:
        return self.ledger.total_tokens

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "modes": self.modes,
            "outcome": self.outcome,
            "tool_calls": self.tool_calls,
            "individual_actions": self.individual_actions,
            "steps": self.steps,
            "elapsed_ticks": self.elapsed_ticks,
            "errors": self.errors,
            "re_requests": self.re_requests,
            "total_tokens": self.total_tokens,
            "total_cost": self.total_cost,
            "context_tokens": self.context_tokens,
            "snapshot_tokens": self.snapshot_tokens,
            "ledger": self.ledger.to_dict(),
            "trimmer_ledger": self.trimmer_ledger.to_dict(),
            "cost": self.cost.to_dict() if self.cost else None,
            "trimmer_cost": self.trimmer_cost.to_dict() if self.trimmer_cost else None,
            "final_state_digest": self.final_state_digest,
            "answer": self.answer,
            "failure": self.failure,
        }


@dataclass
class RunResult:
    metrics: Metrics
    trace: list[dict]
    final_state: str

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.metrics.outcome]

    def trace_jsonl(self) -> str:
        return "".join(json.dumps(event, sort_keys=True) + "\n" for event in self.trace)


def confirmation_from_mode(mode: str) -> ConfirmationProvider | None:
    if mode == "auto-grant":
        return lambda name, kind: True
    if mode == "auto-deny":
        return lambda name, kind: False
    if mode == "interactive":
        def ask(name: str, kind: str) -> bool:
            try:
                with open("/dev/tty", "r+") as tty:
                    tty.write(f"Allow {kind} on '{name}'? [y/N] ")
                    tty.flush()
                    return tty.readline().strip().lower() in ("y", "yes")
            except OSError:
                return False
        return ask
    raise ValueError(f"unknown confirmation mode {mode!r}")


def _tab_state(layer: ExecutionLayer) -> str:
    return "".join(
        f"[{t['id']}{'*' if t['active'] else ''}] {t['url']} {t['title']}\n" for t in layer.tab_list()
    )


def _result_text(result: ActionResult | BulkResult) -> str:
    return json.dumps(result.to_dict(), sort_keys=True)


class _Run:
    def __init__(self, scenario: Scenario, seed: int, policy: Policy, profile: AgentProfile, confirm_label: str):
        self.scenario = scenario
        self.seed = seed
        self.confirm_label = confirm_label
        self.policy = policy
        routes = dict(scenario.routes)
        routes.setdefault(scenario.start_url, scenario.template)
        self.session = BrowserSession(seed, routes)
        self.session.load_template(scenario.template, scenario.start_url)
        self.layer = ExecutionLayer(
            self.session,
            profile,
            latency_ticks=scenario.per_action_latency_ticks,
            bulk_increment=scenario.bulk_increment_ticks,
            wait_timeout=scenario.wait_timeout_ticks,
        )
        self.layer.refresh()
        self.history = HistoryLog(
            scenario.initial_request or scenario.name,
            scenario.raw_buffer_capacity,
            scenario.summary_capacity,
        )
        self.transcript = FullTranscript(scenario.initial_request or scenario.name)
        self.metrics = Metrics(
            scenario.name, seed, {"history": scenario.history, "trim": scenario.trim}
        )
        self.trace: list[dict] = []
        self.system = system_prompt()
        self.previous: AssembledPrompt | None = None
        self._trimmed_cache: tuple[int, str] | None = None

    # -- context -------------------------------------------------------------------
    def _snapshot_text(self) -> str:
        view = self.layer.view
        if view is None:
            return ""
        if self.scenario.trim == "off":
            return serialize_snapshot(view, self.layer.max_chars)
        if self._trimmed_cache and self._trimmed_cache[0] == view.version:
            return self._trimmed_cache[1]
        full = serialize_snapshot(view, max_chars=10**9)
        history = self.history.render()
        text, directive = trim_snapshot(view, full, heuristic_trim, history)
        out = estimate_tokens(directive.to_json()) if directive else 0
        self.metrics.trimmer_ledger.add(estimate_tokens(full) + estimate_tokens(history), 0, out, f"v{view.version}")
        self._trimmed_cache = (view.version, text)
        return text

    def _prompt(self, snapshot_text: str, tool_output: str | None) -> AssembledPrompt:
        history = self.history.render() if self.scenario.history == "compressed" else self.transcript.render()
        view = self.layer.view
        header = f"snapshot version {view.version}\n" if view is not None else "no open tab\n"
        body = header + snapshot_text
        if tool_output:
            body += f"<tool_output>\n{tool_output}\n</tool_output>\n"
        return assemble_prompt(
            [
                PromptLayer("system_prompt", self.system),
                PromptLayer("session_context", self.scenario.session_context),
                PromptLayer("tab_state", _tab_state(self.layer)),
                PromptLayer("history", history),
                PromptLayer("snapshot", body),
            ]
        )

    def _charge(self, prompt: AssembledPrompt, output_text: str, label: str) -> dict:
        cached = cached_tokens(self.previous, prompt)
        entry = self.metrics.ledger.add(prompt.tokens, cached, estimate_tokens(output_text), label)
        self.previous = prompt
        self.metrics.context_tokens.append(prompt.tokens)
        return {"input": entry.input_tokens, "cached": entry.cached_tokens, "output": entry.output_tokens}

    # -- execution ---------------------------------------------------------------------
    def _execute(self, call: Action | BulkRequest) -> ActionResult | BulkResult:
        if isinstance(call, BulkRequest):
            result = self.layer.execute_bulk(call)
            self.metrics.individual_actions += max(1, len(call.actions))
        else:
            result = self.layer.execute(call)
            self.metrics.individual_actions += 1
        self.metrics.tool_calls += 1
        self.metrics.elapsed_ticks += result.elapsed_ticks
        if not result.ok:
            self.metrics.errors += 1
        if isinstance(call, Action) and call.kind == "snapshot" and ("startRef" in call.params or "endRef" in call.params):
            self.metrics.re_requests += 1
        return result

    def run(self) -> RunResult:
        sc = self.scenario
        self.trace.append(
            {"event": "start", "scenario": sc.to_dict(), "seed": self.seed, "confirm": self.confirm_label}
        )
        last_call = last_result = tool_output = None
        outcome = SUCCESS
        for step in range(1, sc.max_steps + 1):
            snapshot_text = self._snapshot_text()
            self.metrics.snapshot_tokens.append(estimate_tokens(snapshot_text))
            prompt = self._prompt(snapshot_text, tool_output)
            view = self.layer.view
            obs = Observation(
                step, view.version if view else 0, snapshot_text,
                view.origin_url if view else "", tool_output, last_call, last_result,
            )
            try:
                decision = self.policy.next(obs)
            except ScenarioError as exc:
                self._charge(prompt, "", f"step {step}")
                self.metrics.steps = step
                outcome = FAILED
                self.metrics.failure = {"step": step, "message": exc.message}
                self.trace.append({"event": "failure", "step": step, "message": exc.message})
                break
            if decision is None:
                tokens = self._charge(prompt, json.dumps({"done": True}), f"step {step}")
                self.metrics.steps = step
                self.trace.append({"event": "done", "step": step, "tokens": tokens})
                break
            call = decision.call
            wire = call.to_wire()
            tokens = self._charge(prompt, json.dumps(wire, sort_keys=True), f"step {step}")
            result = self._execute(call)
            self.policy.note_result(call, result)
            tool_output = getattr(result, "output", None)
            self.trace.append({
                "event": "call",
                "step": step,
                "call": wire,
                "interjection": decision.user_interjection,
                "result": result.to_dict(),
                "tokens": tokens,
                "clock": self.session.clock,
            })
            self._record_history(call, result, decision.user_interjection, step)
            last_call, last_result = call, result
            self.metrics.steps = step
            if result.ok:
                continue
            code = result.error_code or (result.results[result.failed_index].error_code
                                         if isinstance(result, BulkResult) and result.failed_index is not None else None)
            if code in TERMINAL_CODES:
                outcome = DENIED
                message = result.message or result.results[result.failed_index].message
                self.metrics.failure = {"step": step, "code": code, "message": message}
                self.trace.append({"event": "policy_denied", "step": step, "code": code, "message": message})
                break
        else:
            outcome = FAILED
            self.metrics.failure = {"step": sc.max_steps, "message": "step budget exhausted"}
            self.trace.append({"event": "failure", "step": sc.max_steps, "message": "step budget exhausted"})
        return self._finish(outcome)

    def _record_history(self, call, result, interjection, step) -> None:
        try:
            self.history.record(call.memo(), [call], interjection)
        except KernelError as exc:
            raise ScenarioError(exc.message, step, exc.code) from None
        result_text = _result_text(result)
        if getattr(result, "output", None):
            result_text += "\n" + result.output
        snapshot_text = self._snapshot_text() if self.layer.view is not None else ""
        self.transcript.record(json.dumps(call.to_wire(), sort_keys=True), result_text + "\n" + snapshot_text)

    def _finish(self, outcome: str) -> RunResult:
        m = self.metrics
        m.outcome = outcome
        m.cost = compute_cost(m.ledger, self.scenario.prices)
        m.trimmer_cost = compute_cost(m.trimmer_ledger, LITE_PRICES)
        m.answer = dict(self.policy.answer)
        state = self.session.page_state_text()
        m.final_state_digest = hashlib.sha256(state.encode()).hexdigest()
        self.trace.append({
            "event": "end",
            "outcome": outcome,
            "state_digest": m.final_state_digest,
            "tool_calls": m.tool_calls,
            "total_tokens": m.total_tokens,
            "clock": self.session.clock,
        })
        return RunResult(m, self.trace, state)


def run_scenario(
    scenario: Scenario,
    seed: int = 0,
    *,
    profile: AgentProfile | None = None,
    confirm: str | ConfirmationProvider = "auto-deny",
    policy: Policy | None = None,
) -> RunResult:
    """Run ``scenario`` to completion; never raises for in-run failures.

    Failures are reported through ``metrics.outcome`` so the CLI can map them
    to exit codes. A scenario that cannot even start raises ``ScenarioError``.
    """
    provider = confirmation_from_mode(confirm) if isinstance(confirm, str) else confirm
    profile = scenario.resolve_profile(profile).with_confirmation(provider)
    policy = policy or make_policy(scenario.policy, scenario.policy_params)
    try:
        run = _Run(scenario, seed, policy, profile, confirm if isinstance(confirm, str) else "custom")
    except KernelError as exc:
        raise ScenarioError(f"scenario {scenario.name!r} failed to start: {exc.message}", 0, exc.code) from None
    try:
        return run.run()
    except ScenarioError as exc:
        run.metrics.failure = {"step": exc.step, "message": exc.message, "cause": exc.cause}
        run.trace.append({"event": "failure", "step": exc.step, "message": exc.message})
        return run._finish(FAILED)


# -- traces ---------------------------------------------------------------------------


def write_trace(result: RunResult, path: str | Path) -> None:
    Path(path).write_text(result.trace_jsonl())


def read_trace(path: str | Path) -> list[dict]:
    try:
        return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"cannot read trace {path}: {exc}") from None


@dataclass(frozen=True)
class ReplayReport:
    matches: bool
    events: int
    first_divergence: int | None = None
    expected: dict | None = None
    got: dict | None = None


def replay(trace: list[dict] | str | Path, confirm: str | Callable | None = None) -> ReplayReport:
    """Re-execute a trace's recorded calls on a fresh session and compare every event."""
    events = read_trace(trace) if isinstance(trace, (str, Path)) else list(trace)
    if not events or events[0].get("event") != "start":
        raise ScenarioError("trace does not begin with a start event")
    scenario = Scenario.from_dict(events[0]["scenario"])
    seed = events[0]["seed"]
    calls = [(e["call"], e.get("interjection")) for e in events if e["event"] == "call"]
    if confirm is None:
        confirm = events[0].get("confirm", "auto-deny")
        if confirm not in ("auto-grant", "auto-deny"):
            raise ScenarioError(f"trace was recorded with {confirm!r} confirmations; pass a confirm mode")
    result = run_scenario(scenario, seed, confirm=confirm, policy=replay_policy(calls))
    fresh = [json.loads(json.dumps(e, sort_keys=True)) for e in result.trace]
    recorded_calls = [e for e in events if e["event"] == "call"]
    fresh_calls = [e for e in fresh if e["event"] == "call"]
    for i, (a, b) in enumerate(zip(recorded_calls, fresh_calls)):
        if a != b:
            return ReplayReport(False, len(events), i, a, b)
    if len(recorded_calls) != len(fresh_calls):
        return ReplayReport(False, len(events), min(len(recorded_calls), len(fresh_calls)))
    end_a = [e for e in events if e["event"] == "end"]
    end_b = [e for e in fresh if e["event"] == "end"]
    if end_a and end_b and end_a[-1]["state_digest"] != end_b[-1]["state_digest"]:
        return ReplayReport(False, len(events), len(recorded_calls), end_a[-1], end_b[-1])
    return ReplayReport(True, len(events))


# -- comparison -------------------------------------------------------------------------

COMPARED = ("tool_calls", "individual_actions", "steps", "elapsed_ticks", "total_tokens", "total_cost")


def compare_runs(a: Metrics | dict, b: Metrics | dict) -> dict:
    """Deltas from run ``a`` to run ``b`` (``b - a``) with percentages relative to ``a``."""
    a = a.to_dict() if isinstance(a, Metrics) else a
    b = b.to_dict() if isinstance(b, Metrics) else b
    if a.get("scenario") != b.get("scenario") and not _same_family(a, b):
        raise IncomparableRuns(f"runs come from different scenarios: {a.get('scenario')!r} vs {b.get('scenario')!r}")
    report = {"a": {"scenario": a["scenario"], "modes": a["modes"]}, "b": {"scenario": b["scenario"], "modes": b["modes"]}}
    for key in COMPARED + ("final_context_tokens",):
        if key == "final_context_tokens":
            va = a["context_tokens"][-1] if a["context_tokens"] else 0
            vb = b["context_tokens"][-1] if b["context_tokens"] else 0
        else:
            va, vb = a[key], b[key]
        delta = vb - va
        report[key] = {"a": va, "b": vb, "delta": delta, "percent": (100.0 * delta / va) if va else 0.0}
    report["same_final_state"] = a["final_state_digest"] == b["final_state_digest"]
    return report


def _same_family(a: dict, b: dict) -> bool:
    """Scenarios that differ only in a mode suffix (``form28-bulk`` vs ``form28-sequential``)."""
    return a["scenario"].rsplit("-", 1)[0] == b["scenario"].rsplit("-", 1)[0]


def load_metrics(path: str | Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise IncomparableRuns(f"cannot read report {path}: {exc}") from None
    return data.get("metrics", data)
