"""Context management: compressed step history and snapshot trimming.

History is kept as a list of step records written by the agent itself (its
``memory`` notes) rather than as raw transcripts. The most recent steps keep
their action digests; older steps shrink to their memory and evaluation lines,
and the oldest are dropped and counted.

Trimming turns a large snapshot into a few ref ranges worth showing. The
built-in trimmer is a deterministic heuristic; ``ExternalTrimmer`` adapts any
callable that speaks the JSON directive format, e.g. a small hosted model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from agentkernel.actions import Action, BulkRequest
from agentkernel.errors import InvalidDirective, MissingMemory
from agentkernel.snapshot import AccessibilitySnapshot, format_line, parse_snapshot_text, trim_marker

DEFAULT_RAW_BUFFER = 45
DEFAULT_SUMMARY_BUFFER = 45
LIST_RUN_THRESHOLD = 8
LIST_KEEP_ITEMS = 5
CONTEXT_WINDOW = 35
MAX_ITEM_LINES = 32


# -- history -------------------------------------------------------------------


@dataclass(frozen=True)
class StepRecord:
    index: int
    evaluation_previous_goal: str = ""
    memory: str = ""
    next_goal: str = ""
    actions_digest: str = ""
    user_interjection: str | None = None

    def to_dict(self) -> dict:
        out = {
            "index": self.index,
            "evaluation_previous_goal": self.evaluation_previous_goal,
            "memory": self.memory,
            "next_goal": self.next_goal,
            "actions_digest": self.actions_digest,
        }
        if self.user_interjection is not None:
            out["user_interjection"] = self.user_interjection
        return out


def digest_calls(calls: Iterable[Action | BulkRequest]) -> str:
    return ", ".join(call.digest() for call in calls)


def _is_mutating(call: Action | BulkRequest) -> bool:
    if isinstance(call, BulkRequest):
        return bool(call.actions)
    return call.mutating


@dataclass
class HistoryLog:
    """Append-only step log with two demotion tiers.

    The newest ``raw_buffer_capacity`` steps render in full. The next
    ``summary_capacity`` render memory and evaluation only. Anything older is
    represented by a single count line, so the rendered size stays bounded.
    """

    initial_request: str
    raw_buffer_capacity: int = DEFAULT_RAW_BUFFER
    summary_capacity: int = DEFAULT_SUMMARY_BUFFER
    steps: list[StepRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.raw_buffer_capacity < 1 or self.summary_capacity < 0:
            raise ValueError("raw_buffer_capacity must be >= 1 and summary_capacity >= 0")

    def record(
        self,
        memo: Mapping[str, str | None],
        calls: Sequence[Action | BulkRequest],
        user_interjection: str | None = None,
    ) -> HistoryLog:
        memory = (memo.get("memory") or "").strip()
        if not memory and any(_is_mutating(c) for c in calls):
            raise MissingMemory(
                f"step {len(self.steps) + 1} changes the page but carries no memory note"
            )
        self.steps.append(
            StepRecord(
                len(self.steps) + 1,
                (memo.get("evaluation_previous_goal") or "").strip(),
                memory,
                (memo.get("next_goal") or "").strip(),
                digest_calls(calls),
                user_interjection,
            )
        )
        return self

    def tier(self, position: int) -> str:
        """``raw``, ``summary`` or ``dropped`` for the step at list ``position``."""
        age = len(self.steps) - 1 - position
        if age < self.raw_buffer_capacity:
            return "raw"
        if age < self.raw_buffer_capacity + self.summary_capacity:
            return "summary"
        return "dropped"

    def render(self) -> str:
        blocks = [f"<initial_user_request>{self.initial_request}</initial_user_request>\n"]
        dropped = 0
        for pos, step in enumerate(self.steps):
            tier = self.tier(pos)
            if step.user_interjection is not None:
                if dropped:
                    blocks.append(f"<omitted_steps>{dropped}</omitted_steps>\n")
                    dropped = 0
                blocks.append(f"<follow_up_user_request> {step.user_interjection} </follow_up_user_request>\n")
            if tier == "dropped":
                dropped += 1
                continue
            if dropped:
                blocks.append(f"<omitted_steps>{dropped}</omitted_steps>\n")
                dropped = 0
            lines = [step.evaluation_previous_goal, step.memory]
            if tier == "raw":
                lines += [step.next_goal, step.actions_digest]
            body = "".join(f"{line}\n" for line in lines if line)
            blocks.append(f"<step>\n{body}</step>\n")
        if dropped:
            blocks.append(f"<omitted_steps>{dropped}</omitted_steps>\n")
        return "\n".join(blocks)

    def to_dict(self) -> dict:
        return {
            "initial_request": self.initial_request,
            "raw_buffer_capacity": self.raw_buffer_capacity,
            "summary_capacity": self.summary_capacity,
            "steps": [s.to_dict() for s in self.steps],
        }


def record_step(
    log: HistoryLog,
    memo: Mapping[str, str | None],
    calls: Sequence[Action | BulkRequest],
    user_interjection: str | None = None,
) -> HistoryLog:
    return log.record(memo, calls, user_interjection)


def render_history(log: HistoryLog) -> str:
    return log.render()


@dataclass
class FullTranscript:
    """The uncompressed alternative: every call and every tool result, verbatim.

    This is what a chat-style integration accumulates when old snapshots stay
    in the conversation. It exists so the two strategies can be measured
    against each other.
    """

    initial_request: str
    entries: list[tuple[str, str]] = field(default_factory=list)

    def record(self, call_text: str, result_text: str) -> FullTranscript:
        self.entries.append((call_text, result_text))
        return self

    def render(self) -> str:
        parts = [f"<user>{self.initial_request}</user>\n"]
        for call, result in self.entries:
            parts.append(f"<assistant>{call}</assistant>\n<tool_result>\n{result}</tool_result>\n")
        return "".join(parts)


# -- trimming -------------------------------------------------------------------


@dataclass(frozen=True)
class TrimDirective:
    ranges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        ranges = tuple((int(a), int(b)) for a, b in self.ranges)
        prev_end = -1
        for start, end in ranges:
            if start < 0 or end < start:
                raise InvalidDirective(f"bad range {start}-{end}")
            if start <= prev_end:
                raise InvalidDirective("ranges must be sorted and non-overlapping")
            prev_end = end
        object.__setattr__(self, "ranges", ranges)

    def validate(self, max_ref: int) -> TrimDirective:
        if not self.ranges:
            raise InvalidDirective("directive keeps nothing")
        if self.ranges[-1][1] > max_ref:
            raise InvalidDirective(f"range ends at {self.ranges[-1][1]} beyond max ref {max_ref}")
        return self

    def covers(self, ref: int) -> bool:
        return any(a <= ref <= b for a, b in self.ranges)

    def to_json(self) -> str:
        return json.dumps([{"start": a, "end": b} for a, b in self.ranges])

    @classmethod
    def from_json(cls, data: str | Sequence) -> TrimDirective:
        """Parse ``[{"start": X, "end": Y}, ...]``. Ref 0 is accepted as a start
        because directive producers commonly count from zero; it covers nothing.
        """
        try:
            items = json.loads(data) if isinstance(data, str) else data
            return cls(tuple((item["start"], item["end"]) for item in items))
        except InvalidDirective:
            raise
        except (ValueError, TypeError, KeyError) as exc:
            raise InvalidDirective(f"not a directive: {exc}") from None

    @classmethod
    def from_refs(cls, refs: Iterable[int]) -> TrimDirective:
        """Merge a set of refs into maximal consecutive ranges."""
        ranges: list[list[int]] = []
        for ref in sorted(set(refs)):
            if ranges and ref == ranges[-1][1] + 1:
                ranges[-1][1] = ref
            else:
                ranges.append([ref, ref])
        return cls(tuple((a, b) for a, b in ranges))


def _repetitive_runs(roles: Sequence[str], threshold: int, keep: int) -> tuple[set[int], set[int]]:
    """Split every long run into its head (first ``keep`` items) and its tail.

    A run is ``threshold`` or more consecutive blocks with the same role
    sequence. Since the snapshot text is a pre-order listing, sibling subtrees
    with identical structure show up exactly as such repeated blocks.
    """
    heads: set[int] = set()
    tails: set[int] = set()
    n = len(roles)
    i = 0
    while i < n:
        found = False
        for p in range(1, MAX_ITEM_LINES + 1):
            if i + p * threshold > n:
                break
            block = roles[i:i + p]
            reps = 1
            while i + (reps + 1) * p <= n and roles[i + reps * p:i + (reps + 1) * p] == block:
                reps += 1
            if reps >= threshold:
                heads.update(range(i, i + keep * p))
                tails.update(range(i + keep * p, i + reps * p))
                i += reps * p
                found = True
                break
        if not found:
            i += 1
    return heads, tails


def heuristic_trim(
    snapshot_text: str,
    history: str = "",
    total_refs: int | None = None,
    *,
    list_threshold: int = LIST_RUN_THRESHOLD,
    keep_items: int = LIST_KEEP_ITEMS,
    context_window: int = CONTEXT_WINDOW,
) -> TrimDirective:
    """Keep interactive elements, their neighborhood and the head of long lists.

    ``history`` is accepted for contract compatibility with model-backed
    trimmers; the heuristic does not read it.
    """
    lines = parse_snapshot_text(snapshot_text)
    if not lines:
        raise InvalidDirective("snapshot text has no node lines")
    roles = [line.role.value for line in lines]
    heads, tails = _repetitive_runs(roles, list_threshold, keep_items)
    half = context_window // 2
    keep: set[int] = set(heads)
    for pos, line in enumerate(lines):
        if not line.interactive:
            continue
        keep.add(pos)
        for near in range(max(0, pos - half), min(len(lines), pos + half + 1)):
            if near not in tails:
                keep.add(near)
    return TrimDirective.from_refs(lines[pos].ref for pos in keep) if keep else TrimDirective(
        ((lines[0].ref, lines[0].ref),)
    )


def apply_trim(snapshot: AccessibilitySnapshot, directive: TrimDirective) -> str:
    """Serialize only the kept refs, marking every gap so it can be re-requested."""
    directive.validate(snapshot.max_ref)
    out: list[str] = []
    gap: list[int] = []
    for node in snapshot.nodes():
        if directive.covers(node.ref):
            if gap:
                out.append(trim_marker(gap[0], gap[-1]))
                gap = []
            out.append(format_line(node))
        else:
            gap.append(node.ref)
    if gap:
        out.append(trim_marker(gap[0], gap[-1]))
    return "".join(out)


class Trimmer(Protocol):
    def __call__(self, snapshot_text: str, history: str, total_refs: int) -> TrimDirective: ...


TRIM_INSTRUCTIONS = """You are a snapshot analyzer for a browser agent.

Identify which parts of the accessibility tree snapshot matter for the user's
current request. Trim repetitive content hard and keep every interactive element.

<conversation_history>
{history}</conversation_history>

RULES:
- KEEP all navigation, forms, buttons, modals, dialogs
- TRIM repetitive lists to first 5 items
- Keep 30-40 refs context around important elements

SNAPSHOT ({total_refs} refs):
{snapshot}
Return: [{{"start": X, "end": Y}}, ...]"""


@dataclass
class ExternalTrimmer:
    """Adapter for a remote trimmer.

    ``transport`` receives ``{"prompt", "snapshot_text", "history_text",
    "total_refs"}`` and returns the directive JSON (text or parsed).
    """

    transport: Callable[[dict], str | list]

    def __call__(self, snapshot_text: str, history: str, total_refs: int) -> TrimDirective:
        request = {
            "prompt": TRIM_INSTRUCTIONS.format(history=history, total_refs=total_refs, snapshot=snapshot_text),
            "snapshot_text": snapshot_text,
            "history_text": history,
            "total_refs": total_refs,
        }
        return TrimDirective.from_json(self.transport(request)).validate(total_refs)


def trim_snapshot(
    snapshot: AccessibilitySnapshot,
    full_text: str,
    trimmer: Trimmer,
    history: str = "",
) -> tuple[str, TrimDirective | None]:
    """Run ``trimmer``; a directive that fails validation leaves the text untrimmed."""
    try:
        directive = trimmer(full_text, history, snapshot.max_ref).validate(snapshot.max_ref)
        return apply_trim(snapshot, directive), directive
    except InvalidDirective:
        return full_text, None
