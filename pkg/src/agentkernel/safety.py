"""Deterministic safety checks applied by the execution layer before any mutation.

Nothing here asks a model for an opinion. A profile names the tools an agent
may call, the hosts it may reach and the words that make an element
sensitive; the checks are plain predicates over those sets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping
from urllib.parse import urlsplit

from agentkernel.actions import READ_ONLY_KINDS, TOOL_KINDS, Action
from agentkernel.errors import MalformedUrl, ProfileError
from agentkernel.snapshot import AccessibilityNode, AccessibilitySnapshot, FilterRule, filter_snapshot, resolve_ref

DEFAULT_SENSITIVE_KEYWORDS = ("refund", "delete", "transfer", "password")
SCROLL_ONLY_KEYS = frozenset({"ArrowUp", "ArrowDown", "ArrowLeft", "ArrowRight", "PageUp", "PageDown", "Home", "End"})
# Keys that act on the focused element rather than just moving focus or scrolling.
_ACTIVATING_KEYS = {"Enter", "Space"}

ALLOW, DENY, CONFIRM = "allow", "deny", "require_confirmation"

# (element text, action kind) -> True when a human granted the action
ConfirmationProvider = Callable[[str, str], bool]


@dataclass(frozen=True)
class SafetyVerdict:
    decision: str
    reason: str
    keyword: str | None = None

    @property
    def allowed(self) -> bool:
        return self.decision == ALLOW


def _valid_pattern(pattern: str) -> bool:
    host = pattern[2:] if pattern.startswith("*.") else pattern
    if not host or "*" in host or "/" in host or ":" in host:
        return False
    return all(label for label in host.split("."))


def host_matches(host: str, pattern: str) -> bool:
    """Exact host, or ``*.suffix`` matching any strict subdomain of ``suffix``."""
    host = host.lower().rstrip(".")
    pattern = pattern.lower()
    if pattern.startswith("*."):
        return host.endswith(pattern[1:])
    return host == pattern


@dataclass(frozen=True)
class AgentProfile:
    name: str
    allowed_tools: frozenset[str] = frozenset(TOOL_KINDS)
    domain_allowlist: frozenset[str] = frozenset()
    sensitive_keywords: tuple[str, ...] = DEFAULT_SENSITIVE_KEYWORDS
    snapshot_filters: tuple[FilterRule, ...] = ()
    navigation_locked: bool = False
    confirmation_provider: ConfirmationProvider | None = field(default=None, compare=False, repr=False)
    # press_key restriction; None means any supported key
    allowed_keys: frozenset[str] | None = None
    # optional predicates restricting which elements `type` may target
    type_targets: tuple[FilterRule, ...] = ()

    def __post_init__(self):
        tools = frozenset(self.allowed_tools)
        unknown = tools - set(TOOL_KINDS)
        if unknown:
            raise ProfileError(f"profile {self.name!r}: unknown tools {sorted(unknown)}")
        bad = [p for p in self.domain_allowlist if not _valid_pattern(p)]
        if bad:
            raise ProfileError(
                f"profile {self.name!r}: allowlist patterns must be a host or '*.suffix', got {bad}"
            )
        object.__setattr__(self, "allowed_tools", tools)
        object.__setattr__(self, "domain_allowlist", frozenset(p.lower() for p in self.domain_allowlist))
        object.__setattr__(self, "sensitive_keywords", tuple(k.lower() for k in self.sensitive_keywords))
        object.__setattr__(self, "snapshot_filters", tuple(self.snapshot_filters))
        object.__setattr__(self, "type_targets", tuple(self.type_targets))
        if self.allowed_keys is not None:
            object.__setattr__(self, "allowed_keys", frozenset(self.allowed_keys))

    def with_confirmation(self, provider: ConfirmationProvider | None) -> AgentProfile:
        return replace(self, confirmation_provider=provider)

    def allows_host(self, host: str) -> bool:
        return any(host_matches(host, p) for p in self.domain_allowlist)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "allowed_tools": sorted(self.allowed_tools),
            "domain_allowlist": sorted(self.domain_allowlist),
            "sensitive_keywords": list(self.sensitive_keywords),
            "snapshot_filters": [f.to_dict() for f in self.snapshot_filters],
            "navigation_locked": self.navigation_locked,
        }
        if self.allowed_keys is not None:
            out["allowed_keys"] = sorted(self.allowed_keys)
        if self.type_targets:
            out["type_targets"] = [f.to_dict() for f in self.type_targets]
        return out


def _preset_table() -> dict[str, AgentProfile]:
    return {
        "assistant": AgentProfile(
            "assistant",
            allowed_tools=frozenset({"snapshot", "take_screenshot", "wait_for", "press_key"}),
            allowed_keys=SCROLL_ONLY_KEYS,
        ),
        "research": AgentProfile(
            "research",
            allowed_tools=frozenset(
                {"navigate", "navigate_back", "click", "type", "hover", "press_key", "pan",
                 "focus", "wait_for", "snapshot", "take_screenshot", "browser_tabs"}
            ),
            sensitive_keywords=DEFAULT_SENSITIVE_KEYWORDS + ("send", "post"),
        ),
        "data-entry": AgentProfile(
            "data-entry",
            allowed_tools=frozenset(TOOL_KINDS) - {"navigate", "navigate_back", "browser_tabs"},
            navigation_locked=True,
        ),
    }


PRESETS = tuple(_preset_table())


def preset(name: str, /, **overrides) -> AgentProfile:
    table = _preset_table()
    if name not in table:
        raise ProfileError(f"unknown preset {name!r}; choose from {list(table)}")
    return replace(table[name], **overrides) if overrides else table[name]


def profile_from_dict(data: Mapping) -> AgentProfile:
    """Build a profile from its JSON form, starting from ``preset`` if given."""
    if not isinstance(data, Mapping) or "name" not in data:
        raise ProfileError("profile JSON must be an object with a 'name'")
    fields: dict = {}
    if "allowed_tools" in data:
        fields["allowed_tools"] = frozenset(data["allowed_tools"])
    if "domain_allowlist" in data:
        fields["domain_allowlist"] = frozenset(data["domain_allowlist"])
    if "sensitive_keywords" in data:
        fields["sensitive_keywords"] = tuple(data["sensitive_keywords"])
    if "navigation_locked" in data:
        fields["navigation_locked"] = bool(data["navigation_locked"])
    if "allowed_keys" in data:
        fields["allowed_keys"] = None if data["allowed_keys"] is None else frozenset(data["allowed_keys"])
    try:
        if "snapshot_filters" in data:
            fields["snapshot_filters"] = tuple(FilterRule.from_dict(f) for f in data["snapshot_filters"])
        if "type_targets" in data:
            fields["type_targets"] = tuple(FilterRule.from_dict(f) for f in data["type_targets"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ProfileError(f"profile {data['name']!r}: bad filter rule: {exc}") from None
    base = data.get("preset")
    if base is not None:
        return preset(base, name=data["name"], **fields)
    return AgentProfile(data["name"], **fields)


def load_profile(path: str | Path) -> AgentProfile:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ProfileError(f"cannot read profile {path}: {exc}") from None
    return profile_from_dict(data)


# -- checks -------------------------------------------------------------------


def _focused(snapshot: AccessibilitySnapshot) -> AccessibilityNode | None:
    for node in snapshot.nodes():
        if "focused" in node.states:
            return node
    return None


def action_targets(action: Action, snapshot: AccessibilitySnapshot) -> list[AccessibilityNode]:
    """Elements an action would operate on, resolved against ``snapshot``.

    A key press that activates or edits acts on the focused element, so the
    keyword gate cannot be bypassed by focusing a button and pressing Enter.
    """
    if action.kind in READ_ONLY_KINDS:
        return []
    targets = [resolve_ref(snapshot, ref) for ref in action.refs().values()]
    if action.kind == "press_key":
        key = action.params["key"]
        if key not in SCROLL_ONLY_KEYS and key not in ("Tab", "Shift+Tab", "Escape"):
            node = _focused(snapshot)
            if node is not None:
                targets.append(node)
    return targets


def _keyword_hit(profile: AgentProfile, node: AccessibilityNode) -> str | None:
    text = f"{node.name} {node.description or ''}".lower()
    for keyword in profile.sensitive_keywords:
        if keyword in text:
            return keyword
    return None


def check_action(profile: AgentProfile, action: Action, snapshot: AccessibilitySnapshot) -> SafetyVerdict:
    if action.kind not in profile.allowed_tools:
        return SafetyVerdict(DENY, f"tool '{action.kind}' is not in profile '{profile.name}' scope")
    if action.kind in READ_ONLY_KINDS:
        return SafetyVerdict(ALLOW, "read-only tool in scope")
    if action.kind == "press_key" and profile.allowed_keys is not None:
        if action.params["key"] not in profile.allowed_keys:
            return SafetyVerdict(
                DENY, f"key '{action.params['key']}' is not permitted for profile '{profile.name}'"
            )
    targets = action_targets(action, snapshot)
    if action.kind == "type" and profile.type_targets:
        node = targets[0]
        if not any(rule.matches(node) for rule in profile.type_targets):
            return SafetyVerdict(
                DENY, f"profile '{profile.name}' may not type into '{node.name}'"
            )
    for node in targets:
        keyword = _keyword_hit(profile, node)
        if keyword is None:
            continue
        provider = profile.confirmation_provider
        if provider is not None and provider(node.name, action.kind):
            return SafetyVerdict(ALLOW, f"user confirmed action on '{node.name}' (keyword '{keyword}')", keyword)
        return SafetyVerdict(
            CONFIRM,
            f"Action on '{node.name}' requires explicit user confirmation (keyword '{keyword}')",
            keyword,
        )
    return SafetyVerdict(ALLOW, "tool in scope; no sensitive keyword on target")


def url_host(url: str) -> str:
    """Host of an absolute http(s) URL; ``about:blank`` has the empty host."""
    if url == "about:blank":
        return ""
    try:
        parts = urlsplit(url)
        host = parts.hostname
    except ValueError:
        host = None
        parts = None
    if parts is None or parts.scheme not in ("http", "https") or not host:
        raise MalformedUrl(f"cannot navigate to {url!r}: need an absolute http(s) URL")
    return host


def check_navigation(profile: AgentProfile, target_url: str, current_url: str | None = None) -> SafetyVerdict:
    host = url_host(target_url)
    if host == "":
        return SafetyVerdict(ALLOW, "blank page has no network access")
    if profile.navigation_locked:
        current = url_host(current_url) if current_url else ""
        if host == current:
            return SafetyVerdict(ALLOW, f"same host '{host}' under navigation lock")
        return SafetyVerdict(
            DENY, f"profile '{profile.name}' is locked to '{current or 'its tab'}'; cannot reach '{host}'"
        )
    if profile.allows_host(host):
        return SafetyVerdict(ALLOW, f"host '{host}' is allowlisted")
    return SafetyVerdict(DENY, f"host '{host}' is not in the allowlist of profile '{profile.name}'")


def profile_snapshot_view(profile: AgentProfile, snapshot: AccessibilitySnapshot) -> AccessibilitySnapshot:
    return filter_snapshot(snapshot, profile.snapshot_filters)


def filters_from_patterns(patterns: Iterable[str]) -> tuple[FilterRule, ...]:
    return tuple(FilterRule("name-contains", p) for p in patterns)
