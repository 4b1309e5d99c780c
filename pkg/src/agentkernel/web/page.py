"""Mutable page model for the virtual backend.

A ``VirtualPage`` holds a tree of ``PageNode`` objects. Each node may carry a
``Behavior`` describing what the simulated browser does when the node is
clicked, typed into, dragged and so on. Snapshots are produced from the page
by ``VirtualPage.to_tree``; the page itself never knows about refs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator

from agentkernel.errors import UnknownRef
from agentkernel.snapshot import AccessibilityNode

# effect(page, node_or_None, session) -> ids of nodes it changed
Effect = Callable[["VirtualPage", "PageNode | None", object], "list[str] | None"]


@dataclass(frozen=True)
class NativeDialogSpec:
    kind: str  # alert | confirm | prompt
    message: str
    on_accept: str | None = None
    on_dismiss: str | None = None


@dataclass
class Behavior:
    editable: bool = False
    options: tuple[str, ...] | None = None  # native <select>
    multiple: bool = False
    popup_options: tuple[str, ...] | None = None  # custom dropdown
    popup_choice_for: str | None = None  # option inside a custom dropdown
    toggle: bool = False
    radio_group: str | None = None
    on_click: str | None = None
    on_context: str | None = None
    on_hover: str | None = None
    opens_dialog: str | None = None
    closes_dialog: bool = False
    href: str | None = None
    accepts_files: bool = False
    reorderable: bool = False
    scrollable: bool = False
    native_dialog: NativeDialogSpec | None = None

    def clickable(self) -> bool:
        return any(
            (
                self.toggle,
                self.radio_group,
                self.popup_options,
                self.popup_choice_for,
                self.on_click,
                self.opens_dialog,
                self.closes_dialog,
                self.href,
                self.native_dialog,
            )
        )


@dataclass
class PageNode:
    id: str
    role: str
    name: str = ""
    description: str | None = None
    states: set[str] = field(default_factory=set)
    level: int | None = None
    value: str | None = None
    children: list[PageNode] = field(default_factory=list)
    hidden: bool = False
    behavior: Behavior = field(default_factory=Behavior)


def el(node_id: str, role: str, name: str = "", *children: PageNode, **kw) -> PageNode:
    """Shorthand node constructor used by templates.

    Keyword arguments that are ``Behavior`` fields go to the behavior, the rest
    to the node.
    """
    behavior_keys = Behavior.__dataclass_fields__.keys()
    bkw = {k: kw.pop(k) for k in list(kw) if k in behavior_keys}
    states = set(kw.pop("states", ()))
    return PageNode(node_id, role, name, states=states, children=list(children), behavior=Behavior(**bkw), **kw)


@dataclass(order=True)
class ScheduledEvent:
    tick: int
    seq: int
    label: str = field(compare=False)
    effect: Effect = field(compare=False, repr=False)


class VirtualPage:
    def __init__(self, url: str, root: PageNode, title: str = ""):
        self.url = url
        self.root = root
        self.title = title
        self.open_dialogs: list[str] = []
        self.load_state = "ready"
        self.scheduled: list[ScheduledEvent] = []
        self.effects: dict[str, Effect] = {}
        self.state: dict = {}
        self.scroll: dict[str, tuple[int, int]] = {}
        self._seq = 0
        self.reindex()

    # -- structure --------------------------------------------------------
    def reindex(self) -> None:
        self._index: dict[str, PageNode] = {}
        self._parent: dict[str, str | None] = {}
        stack: list[tuple[PageNode, str | None]] = [(self.root, None)]
        while stack:
            node, parent = stack.pop()
            if node.id in self._index:
                raise ValueError(f"duplicate node id {node.id!r}")
            self._index[node.id] = node
            self._parent[node.id] = parent
            stack.extend((c, node.id) for c in node.children)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._index

    def node(self, node_id: str) -> PageNode:
        try:
            return self._index[node_id]
        except KeyError:
            raise UnknownRef("Ref detached from the DOM") from None

    def parent(self, node_id: str) -> PageNode | None:
        pid = self._parent.get(node_id)
        return None if pid is None else self._index[pid]

    def ancestors(self, node_id: str) -> Iterator[PageNode]:
        pid = self._parent.get(node_id)
        while pid is not None:
            yield self._index[pid]
            pid = self._parent[pid]

    def walk(self) -> Iterator[PageNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def is_visible(self, node_id: str) -> bool:
        node = self.node(node_id)
        return not node.hidden and not any(a.hidden for a in self.ancestors(node_id))

    def visible_nodes(self) -> Iterator[PageNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.hidden:
                continue
            yield node
            stack.extend(reversed(node.children))

    def is_occluded(self, node_id: str) -> bool:
        if not self.open_dialogs:
            return False
        top = self.open_dialogs[-1]
        return node_id != top and all(a.id != top for a in self.ancestors(node_id))

    # -- dialogs ------------------------------------------------------------
    def open_dialog(self, dialog_id: str) -> list[str]:
        dialog = self.node(dialog_id)
        dialog.hidden = False
        if dialog_id not in self.open_dialogs:
            self.open_dialogs.append(dialog_id)
        return [dialog_id]

    def close_top_dialog(self) -> list[str]:
        if not self.open_dialogs:
            return []
        dialog_id = self.open_dialogs.pop()
        self.node(dialog_id).hidden = True
        return [dialog_id]

    # -- focus --------------------------------------------------------------
    @property
    def focused_id(self) -> str | None:
        for node in self.walk():
            if "focused" in node.states:
                return node.id
        return None

    def set_focus(self, node_id: str | None) -> list[str]:
        changed = []
        for node in self.walk():
            if "focused" in node.states and node.id != node_id:
                node.states.discard("focused")
                changed.append(node.id)
        if node_id is not None:
            node = self.node(node_id)
            if "focused" not in node.states:
                node.states.add("focused")
                changed.append(node_id)
        return changed

    # -- time ---------------------------------------------------------------
    def schedule(self, tick: int, label: str, effect: Effect) -> None:
        self._seq += 1
        self.scheduled.append(ScheduledEvent(tick, self._seq, label, effect))
        self.scheduled.sort()

    # -- text ---------------------------------------------------------------
    def contains_text(self, text: str) -> bool:
        return any(
            text in t
            for node in self.visible_nodes()
            for t in (node.name, node.description or "", node.value or "")
        )

    def to_tree(self, occlude_all: bool = False) -> AccessibilityNode:
        """Agent-visible tree: hidden nodes dropped, occlusion flags applied."""
        top = self.open_dialogs[-1] if self.open_dialogs else None

        def convert(node: PageNode, inside_top: bool) -> AccessibilityNode:
            inside = inside_top or node.id == top
            states = set(node.states)
            if occlude_all or (top is not None and not inside):
                states.add("occluded")
            kids = tuple(convert(c, inside) for c in node.children if not c.hidden)
            return AccessibilityNode(
                node.role,
                node.name,
                node.description,
                frozenset(states),
                node.level,
                node.value,
                kids,
                node_id=node.id,
            )

        return convert(self.root, False)
