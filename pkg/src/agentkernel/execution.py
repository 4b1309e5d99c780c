"""Execution layer: validates tool calls, enforces the profile, drives the backend.

Every failure is reported as an ``ActionResult`` with an error code instead of
an exception, because the caller (an agent loop) needs to read the message and
adapt. Ref validation and safety checks run before the page is touched, so a
rejected call leaves the session exactly as it was.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

from agentkernel.actions import BULK_KINDS, Action, BulkRequest
from agentkernel.errors import (
    ConfirmationRequired,
    InvalidBulk,
    KernelError,
    NoSuchTab,
    PolicyDenied,
    Timeout,
)
from agentkernel.safety import (
    ALLOW,
    CONFIRM,
    AgentProfile,
    SafetyVerdict,
    check_action,
    check_navigation,
    profile_snapshot_view,
)
from agentkernel.snapshot import (
    MAX_SNAPSHOT_CHARS,
    AccessibilitySnapshot,
    FilterRule,
    build_snapshot,
    extract_range,
    filter_snapshot,
    format_line,
    iter_preorder,
    resolve_ref,
    serialize_snapshot,
)
from agentkernel.web.session import NATIVE_DIALOG_ID, BrowserSession, hold_ticks

DEFAULT_LATENCY_TICKS = 4
DEFAULT_BULK_INCREMENT = 1
DEFAULT_WAIT_TIMEOUT = 30

OK, ERROR, SKIPPED = "ok", "error", "skipped"

# "print" media strips site chrome, much like a reader mode
PRINT_FILTERS = (
    FilterRule("role-equals", "navigation"),
    FilterRule("name-contains", "advertisement"),
    FilterRule("name-contains", "sponsored"),
)


@dataclass(frozen=True)
class ActionResult:
    kind: str
    status: str
    error_code: str | None = None
    message: str = ""
    elapsed_ticks: int = 0
    snapshot: AccessibilitySnapshot | None = None
    output: str | None = None
    verdict: SafetyVerdict | None = None
    fired_events: tuple[str, ...] = ()
    index: int | None = None

    @property
    def ok(self) -> bool:
        return self.status == OK

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "status": self.status, "elapsed_ticks": self.elapsed_ticks}
        if self.error_code:
            out["error"] = {"code": self.error_code, "message": self.message}
        if self.snapshot is not None:
            out["snapshot_version"] = self.snapshot.version
        if self.index is not None:
            out["index"] = self.index
        if self.fired_events:
            out["fired_events"] = list(self.fired_events)
        return out


@dataclass(frozen=True)
class BulkResult:
    results: tuple[ActionResult, ...]
    snapshot: AccessibilitySnapshot | None
    elapsed_ticks: int = 0
    error_code: str | None = None
    message: str = ""
    fired_events: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.error_code is None and all(r.ok for r in self.results)

    @property
    def failed_index(self) -> int | None:
        for i, r in enumerate(self.results):
            if r.status == ERROR:
                return i
        return None

    @property
    def executed(self) -> int:
        return sum(1 for r in self.results if r.status == OK)

    def to_dict(self) -> dict:
        out = {
            "kind": "bulk_actions",
            "status": OK if self.ok else ERROR,
            "elapsed_ticks": self.elapsed_ticks,
            "results": [r.to_dict() for r in self.results],
        }
        if self.error_code:
            out["error"] = {"code": self.error_code, "message": self.message}
        if self.snapshot is not None:
            out["snapshot_version"] = self.snapshot.version
        return out


def _error(kind: str, exc: KernelError, **kw) -> ActionResult:
    return ActionResult(kind, ERROR, exc.code, exc.message, **kw)


@dataclass
class ExecutionLayer:
    """Owns the snapshot generation counter for one browser session."""

    session: BrowserSession
    profile: AgentProfile
    latency_ticks: int = DEFAULT_LATENCY_TICKS
    bulk_increment: int = DEFAULT_BULK_INCREMENT
    wait_timeout: int = DEFAULT_WAIT_TIMEOUT
    max_chars: int = MAX_SNAPSHOT_CHARS
    snapshot: AccessibilitySnapshot | None = field(default=None, init=False)
    version: int = field(default=0, init=False)

    # -- snapshots -------------------------------------------------------------
    def refresh(self) -> AccessibilitySnapshot | None:
        """Build the next snapshot generation of the active tab."""
        if not self.session.tabs:
            self.snapshot = None
            return None
        page = self.session.page
        self.snapshot = build_snapshot(self.session.page_tree(), self.version, page.url, self.session.clock)
        self.version = self.snapshot.version
        return self.snapshot

    @property
    def view(self) -> AccessibilitySnapshot | None:
        """What the agent sees: the current snapshot after profile filters."""
        if self.snapshot is None:
            return None
        return profile_snapshot_view(self.profile, self.snapshot)

    def view_text(self) -> str:
        view = self.view
        return "" if view is None else serialize_snapshot(view, self.max_chars)

    def _ensure_snapshot(self) -> AccessibilitySnapshot:
        if not self.session.tabs:
            raise NoSuchTab("No open tabs; create one with browser_tabs(action='create')")
        if self.snapshot is None:
            self.refresh()
        return self.view

    def _advance(self, ticks: int) -> tuple[str, ...]:
        return tuple(self.session.advance_clock(ticks)) if ticks > 0 and self.session.tabs else ()

    # -- checks ----------------------------------------------------------------
    def _vet(self, action: Action, view: AccessibilitySnapshot) -> tuple[dict, SafetyVerdict]:
        """Resolve refs and run every policy check. Raises on the first failure."""
        nodes = {name: resolve_ref(view, ref) for name, ref in action.refs().items()}
        verdict = check_action(self.profile, action, view)
        if verdict.decision == CONFIRM:
            raise ConfirmationRequired(verdict.reason)
        if verdict.decision != ALLOW:
            raise PolicyDenied(verdict.reason)
        target_url = None
        if action.kind == "navigate":
            target_url = action.params["url"]
        elif action.kind == "browser_tabs" and action.params["action"] == "create":
            target_url = action.params.get("url")
        elif action.kind == "click" and not action.params.get("rightClick"):
            node_id = nodes["ref"].node_id
            if node_id and node_id != NATIVE_DIALOG_ID and node_id in self.session.page:
                target_url = self.session.page.node(node_id).behavior.href
        if target_url:
            try:
                nav = check_navigation(self.profile, target_url, self.session.page.url)
            except KernelError as exc:
                raise PolicyDenied(exc.message) from None
            if not nav.allowed:
                raise PolicyDenied(nav.reason)
        return {name: node.node_id for name, node in nodes.items()}, verdict

    def _apply(self, action: Action, node_ids: dict) -> None:
        p = action.params
        kind = action.kind
        if kind in ("click", "type", "hover", "select_option", "upload_file", "focus"):
            payload = {k: v for k, v in p.items() if k != "ref"}
            self.session.apply_page_action(node_ids["ref"], kind, payload)
        elif kind == "drag":
            self.session.apply_page_action(node_ids["startRef"], "drag", {"end_node_id": node_ids["endRef"]})
        elif kind == "pan":
            self.session.apply_page_action(node_ids.get("ref"), "pan", {"deltaX": p["deltaX"], "deltaY": p["deltaY"]})
        elif kind == "press_key":
            self.session.apply_page_action(None, "press_key", {"key": p["key"]})
        elif kind == "handle_dialog":
            self.session.handle_dialog(p["accept"], p.get("promptText"))
        elif kind == "navigate":
            self.session.navigate(p["url"])
        elif kind == "navigate_back":
            self.session.navigate_back()
        else:
            raise AssertionError(f"{kind} is not applied here")

    def _ticks_for(self, action: Action) -> int:
        return self.latency_ticks + hold_ticks(action.params.get("holdMs"))

    # -- public API ------------------------------------------------------------
    def execute(self, action: Action) -> ActionResult:
        if action.kind == "browser_tabs":
            return self.manage_tabs(action.params["action"], action.params.get("url"), action.params.get("tabId"))
        try:
            view = self._ensure_snapshot()
            node_ids, verdict = self._vet(action, view)
        except KernelError as exc:
            return _error(action.kind, exc, snapshot=self.view)
        if action.kind == "snapshot":
            return self._read_snapshot(action, verdict)
        if action.kind == "take_screenshot":
            shot = self.session.screenshot(node_ids.get("ref"), bool(action.params.get("fullPage")))
            return ActionResult(action.kind, OK, output=json.dumps(shot, sort_keys=True), snapshot=view, verdict=verdict)
        if action.kind == "wait_for":
            return self._wait_for(action, verdict)
        try:
            self._apply(action, node_ids)
        except KernelError as exc:
            return _error(action.kind, exc, snapshot=view, verdict=verdict)
        ticks = self._ticks_for(action)
        fired = self._advance(ticks)
        self.refresh()
        return ActionResult(action.kind, OK, elapsed_ticks=ticks, snapshot=self.view, verdict=verdict, fired_events=fired)

    def _read_snapshot(self, action: Action, verdict: SafetyVerdict) -> ActionResult:
        # Reading never bumps the version: nothing on the page changed, so the
        # agent's refs stay valid.
        p = action.params
        view = self.view
        start, end = p.get("startRef"), p.get("endRef")
        try:
            if start is not None or end is not None:
                text = extract_range(view, start or 1, end or view.max_ref)
            elif "ref" in p:
                node = resolve_ref(view, p["ref"])
                text = "".join(format_line(n) for n in iter_preorder(node))
            else:
                if p.get("mediaType") == "print":
                    view = filter_snapshot(view, PRINT_FILTERS)
                text = serialize_snapshot(view, self.max_chars)
        except KernelError as exc:
            return _error("snapshot", exc, snapshot=self.view)
        except ValueError as exc:
            return ActionResult("snapshot", ERROR, "EmptyRange", str(exc), snapshot=self.view)
        return ActionResult("snapshot", OK, output=text, snapshot=self.view, verdict=verdict)

    def _wait_for(self, action: Action, verdict: SafetyVerdict) -> ActionResult:
        p = action.params
        appear, gone = p.get("textToWait"), p.get("textGone")
        if appear is None and gone is None:
            ticks = math.ceil(p.get("time") or 0)
            fired = self._advance(ticks)
            self.refresh()
            return ActionResult("wait_for", OK, elapsed_ticks=ticks, snapshot=self.view, verdict=verdict, fired_events=fired)
        limit = math.ceil(p["time"]) if p.get("time") else self.wait_timeout
        page_has = lambda text: self.session.page.contains_text(text)  # noqa: E731
        satisfied = lambda: (appear is None or page_has(appear)) and (gone is None or not page_has(gone))  # noqa: E731
        elapsed = 0
        fired: list[str] = []
        while not satisfied():
            if elapsed >= limit:
                self.refresh()
                what = f"text {appear!r} to appear" if appear is not None else f"text {gone!r} to disappear"
                exc = Timeout(f"Timed out after {elapsed} ticks waiting for {what}")
                return _error("wait_for", exc, elapsed_ticks=elapsed, snapshot=self.view, fired_events=tuple(fired))
            fired += self._advance(1)
            elapsed += 1
        self.refresh()
        return ActionResult("wait_for", OK, elapsed_ticks=elapsed, snapshot=self.view, verdict=verdict, fired_events=tuple(fired))

    def manage_tabs(self, action: str, url: str | None = None, tab_id: int | None = None) -> ActionResult:
        probe = Action("browser_tabs", {"action": action, "url": url, "tabId": tab_id})
        verdict = check_action(self.profile, probe, self.view) if self.view is not None else None
        if verdict is None and "browser_tabs" not in self.profile.allowed_tools:
            verdict = SafetyVerdict("deny", f"tool 'browser_tabs' is not in profile '{self.profile.name}' scope")
        try:
            if verdict is not None and not verdict.allowed:
                raise PolicyDenied(verdict.reason)
            if action == "create":
                if url:
                    current = self.session.page.url if self.session.tabs else None
                    try:
                        nav = check_navigation(self.profile, url, current)
                    except KernelError as exc:
                        raise PolicyDenied(exc.message) from None
                    if not nav.allowed:
                        raise PolicyDenied(nav.reason)
                self.session.create_tab(url)
            elif action == "switch":
                if tab_id is None:
                    raise NoSuchTab("switch needs a tabId")
                self.session.switch_tab(tab_id)
            else:
                self.session.close_tab(tab_id)
        except KernelError as exc:
            return _error("browser_tabs", exc, snapshot=self.view, verdict=verdict)
        fired = self._advance(self.latency_ticks)
        self.refresh()
        return ActionResult(
            "browser_tabs", OK, elapsed_ticks=self.latency_ticks, snapshot=self.view, verdict=verdict,
            fired_events=fired, output=json.dumps(self.tab_list()),
        )

    def tab_list(self) -> list[dict]:
        return [
            {"id": t.id, "url": t.page.url, "title": t.page.title, "active": t.id == self.session.active_tab}
            for t in self.session.tabs
        ]

    def execute_bulk(self, request: BulkRequest) -> BulkResult:
        actions = request.actions
        try:
            if not actions:
                raise InvalidBulk("bulk request has no actions")
            outside = sorted({a.kind for a in actions} - BULK_KINDS)
            if outside:
                raise InvalidBulk(f"tools {outside} cannot run inside a bulk request")
            versions = {ref.version for a in actions for ref in a.refs().values()}
            if len(versions) > 1:
                raise InvalidBulk(f"bulk actions reference several snapshot versions: {sorted(versions)}")
            view = self._ensure_snapshot()
        except KernelError as exc:
            return BulkResult((), self.view, 0, exc.code, exc.message)
        results: list[ActionResult] = []
        done = 0
        failed = False
        for i, action in enumerate(actions):
            if failed:
                results.append(ActionResult(action.kind, SKIPPED, message="skipped after an earlier failure", index=i))
                continue
            try:
                node_ids, verdict = self._vet(action, view)
                self._apply(action, node_ids)
            except KernelError as exc:
                results.append(_error(action.kind, exc, index=i))
                failed = True
                continue
            results.append(ActionResult(action.kind, OK, verdict=verdict, index=i))
            done += 1
        if done == 0:
            return BulkResult(tuple(results), view, 0)
        ticks = self.latency_ticks + self.bulk_increment * (done - 1)
        ticks += sum(hold_ticks(a.params.get("holdMs")) for a in actions[:done])
        fired = self._advance(ticks)
        self.refresh()
        return BulkResult(tuple(results), self.view, ticks, fired_events=fired)


# Functional spellings matching the operation names used throughout the docs.
def execute(layer: ExecutionLayer, action: Action) -> ActionResult:
    return layer.execute(action)


def execute_bulk(layer: ExecutionLayer, request: BulkRequest) -> BulkResult:
    return layer.execute_bulk(request)


def manage_tabs(layer: ExecutionLayer, action: str, url: str | None = None, tab_id: int | None = None) -> ActionResult:
    return layer.manage_tabs(action, url, tab_id)
