"""Scripted agent policies.

A policy sees only what a model would see: the snapshot text that went into
the prompt, the last tool result and any tool output. It answers with one
tool call per step, or ``None`` when it considers the task finished.

All policies follow the same failure rule as the prompt asset
``failure_adaptation.txt``: a call that failed is never issued again
unchanged; the policy switches method, and gives up if that fails too.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

from agentkernel.actions import Action, BulkRequest, parse_call
from agentkernel.errors import ScenarioError
from agentkernel.execution import ActionResult, BulkResult
from agentkernel.snapshot import NodeRole, SnapshotLine, parse_markers, parse_snapshot_text

Call = Action | BulkRequest
_PRICE_RE = re.compile(r"Price: \$(\d+)")
_PAGE_RE = re.compile(r"Page (\d+) of (\d+)")
_REQUIRED_SUFFIX = " Required question"


@dataclass(frozen=True)
class Observation:
    step: int
    version: int
    snapshot_text: str
    url: str = ""
    tool_output: str | None = None
    last_call: Call | None = None
    last_result: ActionResult | BulkResult | None = None
    lines: tuple[SnapshotLine, ...] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "lines", tuple(parse_snapshot_text(self.snapshot_text)))

    def ref(self, line: SnapshotLine) -> str:
        return f"{self.version}:{line.ref}"

    def find(self, role: str | None = None, name: str | None = None, contains: str | None = None,
             description: str | None = None) -> SnapshotLine | None:
        for line in self.lines:
            if role is not None and line.role.value != role:
                continue
            if name is not None and line.name != name:
                continue
            if contains is not None and contains.lower() not in line.name.lower():
                continue
            if description is not None and line.description != description:
                continue
            return line
        return None

    def markers(self) -> list[tuple[int, int]]:
        return parse_markers(self.snapshot_text)

    @property
    def failed(self) -> bool:
        return self.last_result is not None and not self.last_result.ok


@dataclass(frozen=True)
class Decision:
    call: Call
    user_interjection: str | None = None


def memo(call: Call, evaluation: str, memory: str, next_goal: str) -> Call:
    fields = {"evaluation_previous_goal": evaluation, "memory": memory, "next_goal": next_goal}
    if isinstance(call, BulkRequest):
        return BulkRequest(call.actions, **fields)
    return call.with_memo(**fields)


class Policy:
    """Base class: tracks failed calls so none is retried verbatim."""

    name = "policy"

    def __init__(self, params: Mapping[str, Any] | None = None):
        self.params = dict(params or {})
        self._failed: set[str] = set()
        self.answer: dict = {}

    def note_result(self, call: Call, result: ActionResult | BulkResult) -> None:
        if not result.ok:
            self._failed.add(self._key(call))

    @staticmethod
    def _key(call: Call) -> str:
        return call.digest() if isinstance(call, Action) else "bulk:" + call.digest()

    def _guard(self, call: Call) -> Call:
        if self._key(call) in self._failed:
            raise ScenarioError(f"{self.name}: refusing to retry failed call {call.digest()}")
        return call

    def next(self, obs: Observation) -> Decision | None:
        raise NotImplementedError


# -- form filling ------------------------------------------------------------------


@dataclass
class FormField:
    label: str
    kind: str  # textbox | combobox | radio | checkbox
    control: SnapshotLine | None = None
    options: list[SnapshotLine] = field(default_factory=list)


def read_form(obs: Observation) -> list[FormField]:
    """Group the snapshot's controls under the level-3 headings that label them."""
    fields: list[FormField] = []
    current: FormField | None = None
    for line in obs.lines:
        if line.role is NodeRole.HEADING and line.level == 3:
            label = line.name.removesuffix(_REQUIRED_SUFFIX)
            current = FormField(label, "")
            fields.append(current)
        elif current is None:
            continue
        elif line.role in (NodeRole.TEXTBOX, NodeRole.COMBOBOX, NodeRole.CHECKBOX) and current.control is None:
            current.kind = line.role.value
            current.control = line
        elif line.role is NodeRole.RADIO:
            current.kind = "radio"
            current.options.append(line)
    return [f for f in fields if f.kind]


class FormFillPolicy(Policy):
    """Fill every field of the shipping form, then submit and confirm.

    ``mode`` is ``sequential`` (one field per call) or ``bulk`` (fields split
    into ``batches`` bulk calls). Auxiliary calls (scrolling, submit, waiting
    for the confirmation, reading it back, a final screenshot) are the same
    kind in both modes; their counts come from the scenario parameters.
    """

    def __init__(self, params: Mapping[str, Any] | None = None, mode: str = "sequential"):
        super().__init__(params)
        self.name = f"{mode}-form-fill"
        self.mode = mode
        self.values: dict[str, Any] = dict(self.params.get("values", {}))
        self.batches = int(self.params.get("batches", 3))
        self.pan_every = int(self.params.get("pan_every_fields", 4))
        self.pan_delta = int(self.params.get("pan_delta", 600))
        self.confirm_text = self.params.get("confirmation_text", "Order #")
        self.done: set[str] = set()
        self.custom: set[str] = set()  # combobox fields that rejected select_option
        self.popup_for: str | None = None
        self.plan: list[tuple] | None = None
        self.finished = False

    # plan items: ("fields", [labels]) | ("pan", dy) | ("submit",) | ("wait",) | ("verify",) | ("shot",)
    def _make_plan(self, fields: list[FormField]) -> list[tuple]:
        labels = [f.label for f in fields]
        missing = [lab for lab in labels if lab not in self.values]
        if missing:
            raise ScenarioError(f"{self.name}: no value given for fields {missing}")
        plan: list[tuple] = []
        if self.mode == "sequential":
            for i, label in enumerate(labels, 1):
                plan.append(("fields", [label]))
                if i % self.pan_every == 0 and i < len(labels):
                    plan.append(("pan", self.pan_delta))
        else:
            size = -(-len(labels) // self.batches)
            chunks = [labels[i:i + size] for i in range(0, len(labels), size)]
            # scroll the same total distance as the sequential script
            pans = (len(labels) - 1) // self.pan_every
            per_chunk = self.pan_delta * pans // len(chunks)
            for chunk in chunks:
                plan.append(("fields", chunk))
                plan.append(("pan", per_chunk))
        plan += [("submit",), ("wait",), ("verify",), ("shot",)]
        return plan

    def _entry(self, obs: Observation, f: FormField) -> Action:
        value = self.values[f.label]
        if f.kind == "textbox":
            return Action("type", {"ref": obs.ref(f.control), "text": str(value)})
        if f.kind == "combobox":
            return Action("select_option", {"ref": obs.ref(f.control), "values": [str(value)]})
        if f.kind == "checkbox":
            return Action("click", {"ref": obs.ref(f.control)})
        for opt in f.options:
            if opt.name == str(value):
                return Action("click", {"ref": obs.ref(opt)})
        raise ScenarioError(f"{self.name}: field {f.label!r} has no option {value!r}")

    def _absorb(self, obs: Observation) -> None:
        """Update progress from the last result; switch method on failure."""
        call, result = obs.last_call, obs.last_result
        if call is None or result is None:
            return
        pending = getattr(self, "_pending_labels", [])
        if isinstance(result, BulkResult):
            for label, r in zip(pending, result.results):
                if r.ok:
                    self.done.add(label)
                elif r.error_code == "NotInteractive" and r.kind == "select_option":
                    self.custom.add(label)
            if result.error_code:
                raise ScenarioError(f"{self.name}: bulk call rejected: {result.message}")
            failed = result.failed_index
            if failed is not None and pending[failed] not in self.custom:
                raise ScenarioError(f"{self.name}: {result.results[failed].message}")
        elif pending:
            if result.ok:
                self.done.update(pending)
            elif result.error_code == "NotInteractive" and call.kind == "select_option":
                self.custom.update(pending)
            else:
                raise ScenarioError(f"{self.name}: {result.message}")
        elif not result.ok:
            raise ScenarioError(f"{self.name}: {result.kind} failed: {result.message}")
        self._pending_labels = []

    def next(self, obs: Observation) -> Decision | None:
        self._absorb(obs)
        fields = {f.label: f for f in read_form(obs)}
        if self.plan is None:
            self.plan = self._make_plan(list(fields.values()))
        total = len([p for p in self.plan if p[0] == "fields" for _ in p[1]])
        progress = f"{len(self.done)} of {total} fields filled"

        # a custom dropdown: open it, then click the wanted option
        if self.popup_for is not None:
            label, self.popup_for = self.popup_for, None
            option = obs.find("option", name=str(self.values[label]))
            if option is None:
                raise ScenarioError(f"{self.name}: dropdown for {label!r} shows no {self.values[label]!r}")
            self._pending_labels = [label]
            call = Action("click", {"ref": obs.ref(option)})
            return Decision(memo(self._guard(call), "Dropdown opened", progress, f"Pick {self.values[label]}"))
        for label in sorted(self.custom - self.done, key=list(fields).index):
            self.popup_for = label
            self._pending_labels = []
            call = Action("click", {"ref": obs.ref(fields[label].control)})
            return Decision(memo(
                self._guard(call), f"select_option did not work on {label}",
                progress, f"Open the {label} dropdown by clicking it",
            ))

        while self.plan:
            item = self.plan[0]
            if item[0] == "fields":
                todo = [lab for lab in item[1] if lab not in self.done and lab not in self.custom]
                if not todo:
                    self.plan.pop(0)
                    continue
                self._pending_labels = todo
                actions = [self._entry(obs, fields[lab]) for lab in todo]
                goal = f"Fill {todo[0]}" if len(todo) == 1 else f"Fill {len(todo)} fields from {todo[0]}"
                if self.mode == "bulk":
                    call = BulkRequest(tuple(actions))
                else:
                    call = actions[0]
                return Decision(memo(self._guard(call), "Form visible", progress, goal))
            self.plan.pop(0)
            self._pending_labels = []
            kind = item[0]
            if kind == "pan":
                call = Action("pan", {"deltaX": 0, "deltaY": item[1]})
                return Decision(memo(call, "Fields entered", progress, "Scroll to the next fields"))
            if kind == "submit":
                button = obs.find("button", name="Submit")
                call = Action("click", {"ref": obs.ref(button)})
                return Decision(memo(self._guard(call), "All fields entered", progress, "Submit the form"))
            if kind == "wait":
                call = Action("wait_for", {"textToWait": self.confirm_text})
                return Decision(memo(call, "Form submitted", "Waiting for confirmation", "Read order number"))
            if kind == "verify":
                status = obs.find("text", contains=self.confirm_text)
                if status is None:
                    raise ScenarioError(f"{self.name}: confirmation text never appeared")
                self.answer["confirmation"] = status.name
                call = Action("snapshot", {"ref": obs.ref(status)})
                return Decision(memo(call, "Confirmation shown", status.name, "Double-check the confirmation"))
            if kind == "shot":
                call = Action("take_screenshot", {"fullPage": True})
                return Decision(memo(call, "Confirmation verified", self.answer["confirmation"], "Keep a record"))
        self.finished = True
        return None


# -- cheapest products --------------------------------------------------------------


def read_listing(obs: Observation) -> tuple[dict[str, int], tuple[int, int] | None]:
    """Products with prices visible in the text, and the (page, pages) indicator."""
    prices: dict[str, int] = {}
    current = None
    page = None
    for line in obs.lines:
        if line.role is NodeRole.LISTITEM and line.name.startswith("Product "):
            current = line.name
        elif current and (m := _PRICE_RE.fullmatch(line.name)):
            prices[current] = int(m.group(1))
            current = None
        elif m := _PAGE_RE.fullmatch(line.name):
            page = (int(m.group(1)), int(m.group(2)))
    return prices, page


class CheapestProductPolicy(Policy):
    """Scan every listing page, then add the ``pick`` cheapest products to the cart."""

    name = "cheapest-product"

    def __init__(self, params: Mapping[str, Any] | None = None):
        super().__init__(params)
        self.pick = int(self.params.get("pick", 3))
        self.seen: dict[str, int] = {}
        self.page_of: dict[str, int] = {}
        self.chosen: list[str] | None = None
        self.added: set[str] = set()
        self._adding: list[str] = []

    def next(self, obs: Observation) -> Decision | None:
        if obs.failed:
            raise ScenarioError(f"{self.name}: {obs.last_result.message if obs.last_result else ''}")
        if self._adding:
            self.added.update(self._adding)
            self._adding = []
        prices, page = read_listing(obs)
        if page is None:
            raise ScenarioError(f"{self.name}: no pagination indicator on the page")
        cur, total = page
        for name, price in prices.items():
            self.seen[name] = price
            self.page_of[name] = cur
        if self.chosen is None:
            if cur < total:
                nxt = obs.find("button", name="Next")
                cheapest = sorted(self.seen.items(), key=lambda kv: (kv[1], kv[0]))[: self.pick]
                note = ", ".join(f"{n} ${p}" for n, p in cheapest)
                call = Action("click", {"ref": obs.ref(nxt)})
                return Decision(memo(call, f"Read page {cur} of {total}", f"Cheapest so far: {note}",
                                     f"Open page {cur + 1}"))
            ranked = sorted(self.seen.items(), key=lambda kv: (kv[1], kv[0]))
            self.chosen = [name for name, _ in ranked[: self.pick]]
            self.answer["chosen"] = list(self.chosen)
        remaining = [n for n in self.chosen if n not in self.added]
        if not remaining:
            return None
        here = [n for n in remaining if self.page_of[n] == cur]
        if here:
            buttons = []
            for name in here:
                btn = obs.find("button", name="Add to cart", description=name)
                if btn is None:
                    raise ScenarioError(f"{self.name}: no Add to cart button for {name}")
                buttons.append(Action("click", {"ref": obs.ref(btn)}))
            self._adding = here
            call = buttons[0] if len(buttons) == 1 else BulkRequest(tuple(buttons))
            return Decision(memo(self._guard(call), f"On page {cur}", f"Adding {', '.join(here)}",
                                 "Add the chosen products"))
        target = max(self.page_of[n] for n in remaining)
        direction = "Previous" if target < cur else "Next"
        btn = obs.find("button", name=direction)
        call = Action("click", {"ref": obs.ref(btn)})
        return Decision(memo(call, f"On page {cur}", f"Chosen: {', '.join(self.chosen)}",
                             f"Go to page {target}"))


# -- long-running reading tasks ---------------------------------------------------------


class TrimStressPolicy(Policy):
    """Page through a large listing, noting one target product per page.

    On pages where ``page % deep_every == 0`` the target sits in the middle
    of the list, which a trimmed snapshot does not show; the policy then
    asks for that ref range with ``snapshot(startRef, endRef)``, estimating
    the refs from the stride between the first visible items.
    """

    name = "trim-stress"

    def __init__(self, params: Mapping[str, Any] | None = None):
        super().__init__(params)
        self.pages = int(self.params.get("pages", 40))
        self.deep_every = int(self.params.get("deep_every", 3))
        self.notes: dict[int, int] = {}
        self.re_requests = 0

    def _target(self, page: int, per_page: int) -> str:
        if self.deep_every and page % self.deep_every == 0:
            pos = per_page // 2
        else:
            pos = 1 + page % 5
        return f"Product {(page - 1) * per_page + pos:04d}"

    def next(self, obs: Observation) -> Decision | None:
        if obs.failed:
            raise ScenarioError(f"{self.name}: {obs.last_result.message}")
        prices, page = read_listing(obs)
        if obs.tool_output and isinstance(obs.last_call, Action) and obs.last_call.kind == "snapshot":
            extra = Observation(obs.step, obs.version, obs.tool_output)
            prices.update(read_listing(extra)[0])
        cur, total = page
        per_page = self.params.get("items_per_page")
        items = [line for line in obs.lines if line.role is NodeRole.LISTITEM]
        target = self._target(cur, per_page)
        if target in prices:
            self.notes[cur] = prices[target]
            if len(self.notes) >= self.pages or cur >= total:
                self.answer["prices"] = dict(self.notes)
                return None
            nxt = obs.find("button", name="Next")
            call = Action("click", {"ref": obs.ref(nxt)})
            return Decision(memo(call, f"Page {cur:02d} read", f"{target} costs ${prices[target]:03d}",
                                 f"Open page {cur + 1:02d}"))
        if len(items) < 2:
            raise ScenarioError(f"{self.name}: cannot estimate where {target} is")
        stride = items[1].ref - items[0].ref
        first_num = int(items[0].name.split()[1])
        start = items[0].ref + (int(target.split()[1]) - first_num) * stride
        self.re_requests += 1
        call = Action("snapshot", {"startRef": start, "endRef": start + stride - 1})
        return Decision(memo(self._guard(call), f"{target} is trimmed", f"Looking for {target}",
                             f"Read {target}"))


class HistoryStressPolicy(Policy):
    """Read an article page by page with fixed-width notes, ``steps`` pages in total."""

    name = "history-stress"

    def __init__(self, params: Mapping[str, Any] | None = None):
        super().__init__(params)
        self.steps = int(self.params.get("steps", 15))
        self.taken = 0

    def next(self, obs: Observation) -> Decision | None:
        if obs.failed:
            raise ScenarioError(f"{self.name}: {obs.last_result.message}")
        if self.taken >= self.steps:
            return None
        self.taken += 1
        n = self.taken
        nxt = obs.find("button", name="Next")
        if nxt is None or "disabled" in nxt.states:
            raise ScenarioError(f"{self.name}: article ended before {self.steps} steps")
        call = Action("click", {"ref": obs.ref(nxt)})
        return Decision(memo(call, f"Opened part {n:02d}", f"Read part {n:02d}; key points noted for part {n:02d}",
                             f"Open part {n + 1:02d}"))


# -- declarative scripts ---------------------------------------------------------------


def _select(obs: Observation, selector: Mapping) -> str:
    line = obs.find(
        role=selector.get("role"),
        name=selector.get("name"),
        contains=selector.get("name_contains"),
        description=selector.get("description"),
    )
    if line is None:
        raise ScenarioError(f"script: nothing on the page matches {dict(selector)}")
    return obs.ref(line)


def _bind(obs: Observation, wire: Any) -> Any:
    """Replace selector objects (``{"role":..., "name":...}``) with live refs."""
    if isinstance(wire, Mapping):
        if "kind" in wire or "type" in wire:
            out = dict(wire)
            if "params" in out:
                out["params"] = {k: _bind(obs, v) for k, v in out["params"].items()}
            if "actions" in out:
                out["actions"] = [_bind(obs, a) for a in out["actions"]]
            return out
        return _select(obs, wire)
    return wire


class ScriptPolicy(Policy):
    """Run a list of steps from the scenario file.

    Each step is ``{"call": <wire call>, "interjection"?: text,
    "fallback"?: [<wire call>, ...]}``. Ref parameters may be selector
    objects resolved against the current snapshot. When a call fails the
    policy moves on to that step's fallback calls; a step with no fallback,
    or whose fallback also fails, ends the run as a failure.
    """

    name = "script"

    def __init__(self, params: Mapping[str, Any] | None = None):
        super().__init__(params)
        self.steps: list[Mapping] = list(self.params.get("steps", []))
        self.pos = 0
        self.queue: list[Any] = []
        self.in_fallback = False

    def next(self, obs: Observation) -> Decision | None:
        if obs.failed:
            if self.in_fallback or not self.steps[self.pos - 1].get("fallback"):
                raise ScenarioError(f"script step {self.pos}: {obs.last_result.message}")
            self.queue = list(self.steps[self.pos - 1]["fallback"])
            self.in_fallback = True
        if self.queue:
            wire = self.queue.pop(0)
            return Decision(self._guard(parse_call(_bind(obs, wire))))
        self.in_fallback = False
        if self.pos >= len(self.steps):
            return None
        step = self.steps[self.pos]
        self.pos += 1
        return Decision(self._guard(parse_call(_bind(obs, step["call"]))), step.get("interjection"))


def make_policy(name: str, params: Mapping[str, Any] | None = None) -> Policy:
    if name == "sequential-form-fill":
        return FormFillPolicy(params, "sequential")
    if name == "bulk-form-fill":
        return FormFillPolicy(params, "bulk")
    table = {
        "cheapest-product": CheapestProductPolicy,
        "trim-stress": TrimStressPolicy,
        "history-stress": HistoryStressPolicy,
        "script": ScriptPolicy,
    }
    if name not in table:
        raise ScenarioError(f"unknown policy {name!r}")
    return table[name](params)


def replay_policy(calls: Sequence[tuple[dict, str | None]]) -> Policy:
    """Policy that reissues recorded wire calls verbatim (used by trace replay)."""

    class _Replay(Policy):
        name = "replay"

        def __init__(self):
            super().__init__()
            self.calls = list(calls)

        def note_result(self, call, result):
            pass

        def next(self, obs: Observation) -> Decision | None:
            if not self.calls:
                return None
            wire, interjection = self.calls.pop(0)
            return Decision(parse_call(wire), interjection)

    return _Replay()
