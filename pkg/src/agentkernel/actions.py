"""Tool-call model: the sixteen browser tools plus the agent memo fields.

Wire form (what scenario files and a model adapter exchange)::

    {"kind": "type", "params": {"ref": "1:39", "text": "Hello World!"},
     "memory": "Weight entered", "next_goal": "Fill length"}

Refs travel as ``"version:ref"`` strings.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

from agentkernel.errors import InvalidAction
from agentkernel.snapshot import VersionedRef

TOOL_KINDS = (
    "click",
    "type",
    "hover",
    "press_key",
    "select_option",
    "upload_file",
    "drag",
    "pan",
    "focus",
    "wait_for",
    "handle_dialog",
    "navigate",
    "navigate_back",
    "browser_tabs",
    "snapshot",
    "take_screenshot",
)

READ_ONLY_KINDS = frozenset({"snapshot", "take_screenshot"})
BULK_KINDS = frozenset(
    {"click", "type", "hover", "press_key", "select_option", "upload_file", "drag", "pan", "focus"}
)
MEMO_FIELDS = ("evaluation_previous_goal", "memory", "next_goal")
TAB_ACTIONS = ("create", "switch", "close")

REF = "ref"
_TYPES = {
    REF: (str, VersionedRef),
    "bool": (bool,),
    "str": (str,),
    "num": (int, float),
    "int": (int,),
    "strs": (list, tuple),
}

# name -> (type, required); order is the digest/rendering order
PARAM_SPEC: dict[str, dict[str, tuple[str, bool]]] = {
    "click": {"ref": (REF, True), "doubleClick": ("bool", False), "rightClick": ("bool", False), "holdMs": ("num", False)},
    "type": {"ref": (REF, True), "text": ("str", True), "shouldClear": ("bool", False)},
    "hover": {"ref": (REF, True)},
    "press_key": {"key": ("str", True)},
    "select_option": {"ref": (REF, True), "values": ("strs", True)},
    "upload_file": {"ref": (REF, True), "filePaths": ("strs", True)},
    "drag": {"startRef": (REF, True), "endRef": (REF, True)},
    "pan": {"ref": (REF, False), "deltaX": ("num", True), "deltaY": ("num", True)},
    "focus": {"ref": (REF, True)},
    "wait_for": {"time": ("num", False), "textToWait": ("str", False), "textGone": ("str", False)},
    "handle_dialog": {"accept": ("bool", True), "promptText": ("str", False)},
    "navigate": {"url": ("str", True)},
    "navigate_back": {},
    "browser_tabs": {"action": ("str", True), "url": ("str", False), "tabId": ("int", False)},
    "snapshot": {"ref": (REF, False), "mediaType": ("str", False), "startRef": ("int", False), "endRef": ("int", False)},
    "take_screenshot": {"ref": (REF, False), "fullPage": ("bool", False)},
}

_POSITIONAL = {"text", "url", "key"}


def _check(kind: str, name: str, typ: str, value: Any) -> Any:
    if typ == REF:
        try:
            return VersionedRef.parse(value)
        except (ValueError, TypeError) as exc:
            raise InvalidAction(f"{kind}.{name}: {exc}") from None
    ok = isinstance(value, _TYPES[typ]) and not (typ in ("num", "int") and isinstance(value, bool))
    if not ok:
        raise InvalidAction(f"{kind}.{name} must be {typ}, got {type(value).__name__}")
    if typ == "strs":
        if not all(isinstance(v, str) for v in value):
            raise InvalidAction(f"{kind}.{name} must be a list of strings")
        return tuple(value)
    return value


@dataclass(frozen=True)
class Action:
    kind: str
    params: Mapping[str, Any] = field(default_factory=dict)
    evaluation_previous_goal: str | None = None
    memory: str | None = None
    next_goal: str | None = None

    def __post_init__(self):
        if self.kind not in PARAM_SPEC:
            raise InvalidAction(f"unknown tool {self.kind!r}")
        spec = PARAM_SPEC[self.kind]
        unknown = set(self.params) - set(spec)
        if unknown:
            raise InvalidAction(f"{self.kind} does not take {sorted(unknown)}")
        clean = {}
        for name, (typ, required) in spec.items():
            value = self.params.get(name)
            if value is None:
                if required:
                    raise InvalidAction(f"{self.kind} requires {name}")
                continue
            clean[name] = _check(self.kind, name, typ, value)
        if self.kind == "browser_tabs" and clean["action"] not in TAB_ACTIONS:
            raise InvalidAction(f"browser_tabs.action must be one of {TAB_ACTIONS}")
        object.__setattr__(self, "params", MappingProxyType(clean))

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))

    @property
    def mutating(self) -> bool:
        return self.kind not in READ_ONLY_KINDS

    def refs(self) -> dict[str, VersionedRef]:
        return {k: v for k, v in self.params.items() if isinstance(v, VersionedRef)}

    def memo(self) -> dict[str, str]:
        return {f: getattr(self, f) for f in MEMO_FIELDS if getattr(self, f) is not None}

    def with_memo(self, **memo) -> Action:
        return Action(self.kind, dict(self.params), **{**self.memo(), **memo})

    def to_wire(self) -> dict:
        params = {}
        for k, v in self.params.items():
            if isinstance(v, VersionedRef):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            params[k] = v
        return {"kind": self.kind, "params": params, **self.memo()}

    @classmethod
    def from_wire(cls, data: Mapping) -> Action:
        if not isinstance(data, Mapping):
            raise InvalidAction("action must be a JSON object")
        if "kind" not in data:
            # flat element form: {"type": "type", "ref": 1, "text": "hello"}
            if "type" not in data:
                raise InvalidAction("action needs a 'kind'")
            flat = dict(data)
            kind = flat.pop("type")
            memo = {f: flat.pop(f) for f in MEMO_FIELDS if f in flat}
            return cls(kind, flat, **memo)
        memo = {f: data[f] for f in MEMO_FIELDS if data.get(f) is not None}
        return cls(data["kind"], dict(data.get("params") or {}), **memo)

    def digest(self) -> str:
        """Compact rendering for history logs, e.g. ``type(ref=42, "John Doe")``."""
        parts = []
        for name in PARAM_SPEC[self.kind]:
            if name not in self.params:
                continue
            v = self.params[name]
            if isinstance(v, VersionedRef):
                parts.append(f"{name}={v.ref}")
            elif name in _POSITIONAL:
                parts.append(json.dumps(v, ensure_ascii=False))
            elif isinstance(v, tuple):
                parts.append(json.dumps(list(v), ensure_ascii=False))
            else:
                parts.append(f"{name}={json.dumps(v)}")
        return f"{self.kind}({', '.join(parts)})"


@dataclass(frozen=True)
class BulkRequest:
    actions: tuple[Action, ...]
    evaluation_previous_goal: str | None = None
    memory: str | None = None
    next_goal: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "actions", tuple(self.actions))

    def memo(self) -> dict[str, str]:
        return {f: getattr(self, f) for f in MEMO_FIELDS if getattr(self, f) is not None}

    def to_wire(self) -> dict:
        inner = []
        for a in self.actions:
            w = a.to_wire()
            inner.append({"kind": w["kind"], "params": w["params"]})
        return {"kind": "bulk_actions", "actions": inner, **self.memo()}

    @classmethod
    def from_wire(cls, data: Mapping) -> BulkRequest:
        actions = tuple(Action.from_wire(a) for a in data.get("actions") or ())
        memo = {f: data[f] for f in MEMO_FIELDS if data.get(f) is not None}
        return cls(actions, **memo)

    def digest(self) -> str:
        return ", ".join(a.digest() for a in self.actions)


def parse_call(data: Mapping) -> Action | BulkRequest:
    """Parse one wire-form tool call, single or bulk."""
    if isinstance(data, Mapping) and data.get("kind") in ("bulk_actions", "bulk"):
        return BulkRequest.from_wire(data)
    return Action.from_wire(data)
