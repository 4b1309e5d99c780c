"""Accessibility snapshots: ref assignment, versioning, text form, filtering.

A snapshot is an immutable tree of semantic nodes. Every node gets a small
integer ``ref`` in depth-first pre-order, and the whole tree carries a
``version`` so that a ``version:ref`` pair is only valid against the
generation it was read from.

Text form, one line per node::

    ref=39 textbox "Total Weight (kg)" description="..." focusable focused required

Attribute order is fixed (level, description, value, flags) so equal
snapshots always serialize to equal bytes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

from agentkernel.errors import EmptyRange, EmptyTree, ParseError, StaleRef, UnknownRef

MAX_SNAPSHOT_CHARS = 50_000
MIN_SNAPSHOT_CHARS = 256


class NodeRole(str, Enum):
    BUTTON = "button"
    LINK = "link"
    TEXTBOX = "textbox"
    CHECKBOX = "checkbox"
    RADIO = "radio"
    COMBOBOX = "combobox"
    LISTBOX = "listbox"
    OPTION = "option"
    HEADING = "heading"
    DIALOG = "dialog"
    LIST = "list"
    LISTITEM = "listitem"
    IMAGE = "image"
    GENERIC_CONTAINER = "generic-container"
    TEXT = "text"

    @property
    def interactive(self) -> bool:
        return self.value in INTERACTIVE_ROLES


INTERACTIVE_ROLES = frozenset(
    {"button", "link", "textbox", "checkbox", "radio", "combobox", "listbox", "option"}
)

# serialization order of state flags
STATE_FLAGS = ("focusable", "focused", "required", "disabled", "checked", "selected", "occluded")
_STATE_SET = frozenset(STATE_FLAGS)


@dataclass(frozen=True)
class AccessibilityNode:
    """One semantic node. ``ref`` is 0 until the node is placed in a snapshot.

    ``node_id`` is the backend handle used to map a ref back to the live
    element; it never appears in the text form.
    """

    role: NodeRole
    name: str = ""
    description: str | None = None
    states: frozenset[str] = frozenset()
    level: int | None = None
    value: str | None = None
    children: tuple[AccessibilityNode, ...] = ()
    ref: int = 0
    node_id: str | None = None

    def __post_init__(self):
        if not isinstance(self.role, NodeRole):
            object.__setattr__(self, "role", NodeRole(self.role))
        states = frozenset(self.states)
        unknown = states - _STATE_SET
        if unknown:
            raise ValueError(f"unknown state flags: {sorted(unknown)}")
        object.__setattr__(self, "states", states)
        if not isinstance(self.children, tuple):
            object.__setattr__(self, "children", tuple(self.children))

    @property
    def interactive(self) -> bool:
        return self.role.interactive

    def text_fields(self) -> tuple[str, ...]:
        return tuple(t for t in (self.name, self.description, self.value) if t)


def iter_preorder(root: AccessibilityNode) -> Iterator[AccessibilityNode]:
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        stack.extend(reversed(node.children))


def count_nodes(root: AccessibilityNode | None) -> int:
    return 0 if root is None else sum(1 for _ in iter_preorder(root))


@dataclass(frozen=True)
class VersionedRef:
    version: int
    ref: int

    def __post_init__(self):
        if self.version < 1 or self.ref < 1:
            raise ValueError(f"version and ref must be positive, got {self.version}:{self.ref}")

    @classmethod
    def parse(cls, text: str | VersionedRef) -> VersionedRef:
        if isinstance(text, VersionedRef):
            return text
        m = re.fullmatch(r"\s*(\d+):(\d+)\s*", str(text))
        if not m:
            raise ValueError(f"expected a 'version:ref' pair like '1:10', got {text!r}")
        return cls(int(m.group(1)), int(m.group(2)))

    def __str__(self) -> str:
        return f"{self.version}:{self.ref}"


@dataclass(frozen=True)
class AccessibilitySnapshot:
    version: int
    root: AccessibilityNode
    origin_url: str = ""
    built_at_tick: int = 0
    ref_index: Mapping[int, AccessibilityNode] = field(
        init=False, repr=False, compare=False
    )

    def __post_init__(self):
        index = {node.ref: node for node in iter_preorder(self.root)}
        object.__setattr__(self, "ref_index", MappingProxyType(index))

    @property
    def max_ref(self) -> int:
        return max(self.ref_index)

    @property
    def node_count(self) -> int:
        return len(self.ref_index)

    def nodes(self) -> Iterator[AccessibilityNode]:
        return iter_preorder(self.root)

    def find(self, node_id: str) -> AccessibilityNode | None:
        for node in self.nodes():
            if node.node_id == node_id:
                return node
        return None


def _flatten(root: AccessibilityNode, skip=None) -> list[tuple[AccessibilityNode, int]]:
    """Pre-order list of (node, parent position); subtrees where ``skip`` holds are dropped."""
    order: list[tuple[AccessibilityNode, int]] = []
    stack = [(root, -1)]
    while stack:
        node, parent = stack.pop()
        if skip is not None and skip(node):
            continue
        pos = len(order)
        order.append((node, parent))
        for child in reversed(node.children):
            stack.append((child, pos))
    return order


def _rebuild(order: list[tuple[AccessibilityNode, int]], ref_for) -> AccessibilityNode:
    kids: list[list[AccessibilityNode]] = [[] for _ in order]
    built = None
    for pos in range(len(order) - 1, -1, -1):
        node, parent = order[pos]
        built = replace(node, ref=ref_for(pos, node), children=tuple(reversed(kids[pos])))
        if parent >= 0:
            kids[parent].append(built)
    return built


def build_snapshot(
    page_tree: AccessibilityNode | None,
    previous_version: int,
    origin_url: str = "",
    tick: int = 0,
) -> AccessibilitySnapshot:
    """Assign refs 1..N in pre-order and stamp version ``previous_version + 1``."""
    if page_tree is None:
        raise EmptyTree("page tree has no nodes")
    if previous_version < 0:
        raise ValueError("previous_version must be >= 0")
    order = _flatten(page_tree)
    root = _rebuild(order, lambda pos, node: pos + 1)
    return AccessibilitySnapshot(previous_version + 1, root, origin_url, tick)


# every character str.splitlines() breaks on must be escaped to keep one node per line
_LINE_BREAKS = "\x0b\x0c\x1c\x1d\x1e\x85\u2028\u2029"
_ESCAPE = str.maketrans({"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r",
                         **{c: f"\\u{ord(c):04x}" for c in _LINE_BREAKS}})


def _quote(text: str) -> str:
    return text.translate(_ESCAPE)


def _unescape(m: re.Match) -> str:
    code = m.group(1)
    if code.startswith("u") and len(code) == 5:
        return chr(int(code[1:], 16))
    return {"n": "\n", "r": "\r"}.get(code, code)


def _unquote(text: str) -> str:
    return re.sub(r"\\(u[0-9a-f]{4}|.)", _unescape, text, flags=re.S)


def format_line(node: AccessibilityNode) -> str:
    parts = [f'ref={node.ref} {node.role.value} "{_quote(node.name)}"']
    if node.level is not None:
        parts.append(f'level="{node.level}"')
    if node.description:
        parts.append(f'description="{_quote(node.description)}"')
    if node.value:
        parts.append(f'value="{_quote(node.value)}"')
    parts.extend(flag for flag in STATE_FLAGS if flag in node.states)
    return " ".join(parts) + "\n"


def trim_marker(first: int, last: int) -> str:
    return f"[refs {first}-{last} trimmed]\n"


def serialize_snapshot(snapshot: AccessibilitySnapshot, max_chars: int = MAX_SNAPSHOT_CHARS) -> str:
    """Render the snapshot as text, cutting at a whole line if it exceeds ``max_chars``.

    When cut, the kept lines plus the ``[refs A-B trimmed]`` marker together
    stay within ``max_chars``.
    """
    if max_chars < MIN_SNAPSHOT_CHARS:
        raise ValueError(f"max_chars must be >= {MIN_SNAPSHOT_CHARS}")
    nodes = list(snapshot.nodes())
    lines = [format_line(n) for n in nodes]
    total = sum(len(line) for line in lines)
    if total <= max_chars:
        return "".join(lines)
    last_ref = nodes[-1].ref
    used = 0
    prefix = [0]
    for line in lines:
        used += len(line)
        prefix.append(used)
    for keep in range(len(lines) - 1, -1, -1):
        marker = trim_marker(nodes[keep].ref, last_ref)
        if prefix[keep] + len(marker) <= max_chars:
            return "".join(lines[:keep]) + marker
    raise AssertionError("unreachable: a marker always fits in MIN_SNAPSHOT_CHARS")


def resolve_ref(snapshot: AccessibilitySnapshot, target: VersionedRef | str) -> AccessibilityNode:
    target = VersionedRef.parse(target)
    if target.version != snapshot.version:
        raise StaleRef(expected=snapshot.version, got=target.version)
    node = snapshot.ref_index.get(target.ref)
    if node is None:
        raise UnknownRef(
            f"Ref {target} is not in snapshot version {snapshot.version} "
            f"(refs run 1-{snapshot.max_ref})"
        )
    return node


def extract_range(snapshot: AccessibilitySnapshot, start_ref: int, end_ref: int) -> str:
    if not 1 <= start_ref <= end_ref:
        raise ValueError(f"need 1 <= start_ref <= end_ref, got {start_ref}-{end_ref}")
    lines = [format_line(n) for n in snapshot.nodes() if start_ref <= n.ref <= end_ref]
    if not lines:
        raise EmptyRange(f"no refs between {start_ref} and {end_ref} in snapshot v{snapshot.version}")
    return "".join(lines)


@dataclass(frozen=True)
class FilterRule:
    """Removes a matching node and its subtree.

    ``name-contains`` is case-insensitive and looks at every text the node
    exposes (name, description, value) so a filtered pattern can never leak
    through a node's other fields.
    """

    match_kind: str
    pattern: str

    KINDS = ("name-contains", "role-equals")

    def __post_init__(self):
        if self.match_kind not in self.KINDS:
            raise ValueError(f"match_kind must be one of {self.KINDS}, got {self.match_kind!r}")
        if not self.pattern:
            raise ValueError("filter pattern must be non-empty")

    def matches(self, node: AccessibilityNode) -> bool:
        if self.match_kind == "role-equals":
            return node.role.value == self.pattern.lower()
        needle = self.pattern.lower()
        return any(needle in text.lower() for text in node.text_fields())

    @classmethod
    def from_dict(cls, data: Mapping) -> FilterRule:
        return cls(data.get("match", data.get("match_kind")), data["pattern"])

    def to_dict(self) -> dict:
        return {"match": self.match_kind, "pattern": self.pattern}


def filter_snapshot(
    snapshot: AccessibilitySnapshot, rules: Iterable[FilterRule]
) -> AccessibilitySnapshot:
    rules = list(rules)
    if not rules:
        return snapshot

    def matched(node):
        return any(rule.matches(node) for rule in rules)

    if matched(snapshot.root):
        placeholder = AccessibilityNode(NodeRole.GENERIC_CONTAINER, ref=snapshot.root.ref)
        return AccessibilitySnapshot(
            snapshot.version, placeholder, snapshot.origin_url, snapshot.built_at_tick
        )
    order = _flatten(snapshot.root, skip=matched)
    root = _rebuild(order, lambda pos, node: node.ref)
    return AccessibilitySnapshot(snapshot.version, root, snapshot.origin_url, snapshot.built_at_tick)


_QUOTED = r'"((?:[^"\\]|\\.)*)"'
_LINE_RE = re.compile(
    rf"ref=(\d+) ([a-z-]+) {_QUOTED}"
    rf'(?: level="(\d+)")?'
    rf"(?: description={_QUOTED})?"
    rf"(?: value={_QUOTED})?"
    r"((?: [a-z]+)*)"
)
_MARKER_RE = re.compile(r"\[refs (\d+)-(\d+) trimmed\]")


@dataclass(frozen=True)
class SnapshotLine:
    ref: int
    role: NodeRole
    name: str
    level: int | None = None
    description: str | None = None
    value: str | None = None
    states: frozenset[str] = frozenset()

    @property
    def interactive(self) -> bool:
        return self.role.interactive


def parse_snapshot_text(text: str) -> list[SnapshotLine]:
    """Parse node lines back out of snapshot text; trim markers are skipped."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        if not raw.strip() or _MARKER_RE.fullmatch(raw):
            continue
        m = _LINE_RE.fullmatch(raw)
        if not m:
            raise ParseError(f"line {lineno} is not a snapshot line: {raw[:80]!r}")
        ref, role, name, level, desc, value, flags = m.groups()
        flags = frozenset(flags.split())
        if not flags <= _STATE_SET:
            raise ParseError(f"line {lineno} has unknown flags: {sorted(flags - _STATE_SET)}")
        try:
            role = NodeRole(role)
        except ValueError:
            raise ParseError(f"line {lineno} has unknown role {role!r}") from None
        out.append(
            SnapshotLine(
                int(ref),
                role,
                _unquote(name),
                int(level) if level else None,
                _unquote(desc) if desc is not None else None,
                _unquote(value) if value is not None else None,
                flags,
            )
        )
    return out


def parse_markers(text: str) -> list[tuple[int, int]]:
    return [(int(a), int(b)) for a, b in _MARKER_RE.findall(text)]
