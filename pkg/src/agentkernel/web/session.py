"""Browser session for the virtual backend: tabs, clock, native dialogs, actions."""

from __future__ import annotations

import math
import posixpath
from dataclasses import dataclass, field
from typing import Protocol

from agentkernel.errors import (
    ElementDisabled,
    ElementObscured,
    InvalidAction,
    NoDialogPending,
    NoSuchTab,
    NotInteractive,
)
from agentkernel.snapshot import AccessibilityNode, NodeRole, build_snapshot, serialize_snapshot
from agentkernel.web.page import NativeDialogSpec, PageNode, VirtualPage, el
from agentkernel.web.templates import PageTemplate, instantiate

NATIVE_DIALOG_ID = "__native_dialog__"
VIEWPORT_ID = "__viewport__"

SCROLL_KEYS = frozenset({"ArrowUp", "ArrowDown", "ArrowLeft", "ArrowRight", "PageUp", "PageDown", "Home", "End"})
_NAMED_KEYS = SCROLL_KEYS | {"Tab", "Shift+Tab", "Enter", "Escape", "Space", "Backspace"}
_MODIFIERS = {"cmd": "Mod", "meta": "Mod", "ctrl": "Mod", "control": "Mod", "alt": "Alt", "shift": "Shift"}
_SCROLL_STEP = {
    "ArrowUp": (0, -40), "ArrowDown": (0, 40), "ArrowLeft": (-40, 0), "ArrowRight": (40, 0),
    "PageUp": (0, -600), "PageDown": (0, 600),
}


def normalize_key(key: str) -> str:
    """Canonical key name; chords become e.g. ``Mod+C`` for Cmd/Ctrl/Meta+C."""
    key = key.strip()
    if key in _NAMED_KEYS:
        return key
    if key.lower() == "space" or key == " ":
        return "Space"
    parts = key.split("+")
    if len(parts) >= 2:
        mods = []
        for m in parts[:-1]:
            if m.lower() not in _MODIFIERS:
                raise InvalidAction(f"unsupported modifier {m!r} in key {key!r}")
            mods.append(_MODIFIERS[m.lower()])
        last = parts[-1]
        if len(last) == 1 and last.isalnum():
            return "+".join(sorted(set(mods))) + "+" + last.upper()
        if mods == ["Shift"] and last == "Tab":
            return "Shift+Tab"
    if len(key) == 1 and key.isprintable():
        return key
    raise InvalidAction(f"unsupported key {key!r}")


@dataclass(frozen=True)
class MutationReport:
    changed: tuple[str, ...] = ()
    rebuild_required: bool = True
    navigated_to: str | None = None


@dataclass
class Tab:
    id: int
    page: VirtualPage
    back_stack: list[str] = field(default_factory=list)


class Backend(Protocol):
    """Surface the execution layer drives. Only the virtual backend exists."""

    clock: int

    def page_tree(self) -> AccessibilityNode: ...
    def apply_page_action(self, node_id: str | None, kind: str, payload: dict) -> MutationReport: ...
    def advance_clock(self, ticks: int) -> list[str]: ...
    def navigate(self, url: str) -> MutationReport: ...


class BrowserSession:
    """Deterministic stand-in for a browser with tabs and a virtual clock.

    One tick is one simulated second. Everything random derives from
    ``rng_seed`` through template instantiation.
    """

    def __init__(self, rng_seed: int = 0, routes: dict[str, PageTemplate] | None = None):
        self.rng_seed = rng_seed
        self.routes = dict(routes or {})
        self.tabs: list[Tab] = []
        self.active_tab: int | None = None
        self.clock = 0
        self.pending_native_dialog: NativeDialogSpec | None = None
        self.clipboard = ""
        self._next_tab_id = 1

    # -- tabs -----------------------------------------------------------------
    def _tab(self, tab_id: int | None = None) -> Tab:
        tab_id = self.active_tab if tab_id is None else tab_id
        for tab in self.tabs:
            if tab.id == tab_id:
                return tab
        raise NoSuchTab(f"No tab with id {tab_id}; open tabs: {[t.id for t in self.tabs]}")

    @property
    def page(self) -> VirtualPage:
        if not self.tabs:
            raise NoSuchTab("No open tabs; create one with browser_tabs(action='create')")
        return self._tab().page

    def page_for_url(self, url: str) -> VirtualPage:
        template = self.routes.get(url)
        if template is None:
            for pattern, tmpl in self.routes.items():
                if pattern.endswith("*") and url.startswith(pattern[:-1]):
                    template = tmpl
                    break
        if template is None:
            page = instantiate(PageTemplate("blank"), self.rng_seed, url)
            page.title = url
            return page
        return instantiate(template, self.rng_seed, url)

    def create_tab(self, url: str | None = None, template: PageTemplate | None = None) -> Tab:
        if template is not None:
            page = instantiate(template, self.rng_seed, url)
        else:
            page = self.page_for_url(url or "about:blank")
        tab = Tab(self._next_tab_id, page)
        self._next_tab_id += 1
        self.tabs.append(tab)
        self.active_tab = tab.id
        return tab

    def switch_tab(self, tab_id: int) -> Tab:
        tab = self._tab(tab_id)
        self.active_tab = tab.id
        return tab

    def close_tab(self, tab_id: int | None = None) -> None:
        tab = self._tab(tab_id)
        pos = self.tabs.index(tab)
        self.tabs.remove(tab)
        if not self.tabs:
            self.active_tab = None
        elif self.active_tab == tab.id:
            self.active_tab = self.tabs[max(0, pos - 1)].id

    def load_template(self, template: PageTemplate, url: str | None = None) -> VirtualPage:
        """Replace the active tab's page (opening a tab if none exists)."""
        page = instantiate(template, self.rng_seed, url)
        if not self.tabs:
            self.tabs.append(Tab(self._next_tab_id, page))
            self.active_tab = self._next_tab_id
            self._next_tab_id += 1
        else:
            self._tab().page = page
        page.load_state = "ready"
        return page

    # -- navigation -------------------------------------------------------------
    def navigate(self, url: str) -> MutationReport:
        tab = self._tab()
        tab.back_stack.append(tab.page.url)
        tab.page = self.page_for_url(url)
        self.pending_native_dialog = None
        return MutationReport(("page",), True, url)

    def navigate_back(self) -> MutationReport:
        tab = self._tab()
        if not tab.back_stack:
            return MutationReport((), True)
        url = tab.back_stack.pop()
        tab.page = self.page_for_url(url)
        self.pending_native_dialog = None
        return MutationReport(("page",), True, url)

    # -- perception -------------------------------------------------------------
    def page_tree(self) -> AccessibilityNode:
        page = self.page
        dialog = self.pending_native_dialog
        tree = page.to_tree(occlude_all=dialog is not None)
        if dialog is None:
            return tree
        native = AccessibilityNode(
            NodeRole.DIALOG,
            f"{dialog.kind}: {dialog.message}",
            description="Native browser dialog; respond with handle_dialog",
            node_id=NATIVE_DIALOG_ID,
        )
        return AccessibilityNode(
            tree.role, tree.name, tree.description, tree.states, tree.level, tree.value,
            tree.children + (native,), node_id=tree.node_id,
        )

    def page_state_text(self) -> str:
        """Canonical serialization of every tab, used for state comparisons."""
        parts = []
        for tab in self.tabs:
            marker = "*" if tab.id == self.active_tab else " "
            tree = tab.page.to_tree()
            text = serialize_snapshot(build_snapshot(tree, 0), max_chars=10**9)
            parts.append(f"[tab {tab.id}{marker} {tab.page.url}]\n{text}")
        if self.pending_native_dialog:
            parts.append(f"[native {self.pending_native_dialog.kind}: {self.pending_native_dialog.message}]\n")
        return "".join(parts)

    # -- time -------------------------------------------------------------------
    def advance_clock(self, ticks: int) -> list[str]:
        if ticks < 1:
            raise ValueError("ticks must be >= 1")
        target = self.clock + ticks
        fired = []
        while True:
            due = [
                (ev, tab.page)
                for tab in self.tabs
                for ev in tab.page.scheduled
                if ev.tick <= target
            ]
            if not due:
                break
            ev, page = min(due, key=lambda pair: (pair[0].tick, pair[0].seq))
            page.scheduled.remove(ev)
            self.clock = max(self.clock, ev.tick)
            ev.effect(page, None, self)
            fired.append(ev.label)
        self.clock = target
        return fired

    # -- dialogs ----------------------------------------------------------------
    def handle_dialog(self, accept: bool, prompt_text: str | None = None) -> MutationReport:
        dialog = self.pending_native_dialog
        if dialog is None:
            raise NoDialogPending("No native dialog is open")
        self.pending_native_dialog = None
        page = self.page
        page.state["prompt_text"] = prompt_text if accept else None
        effect = dialog.on_accept if accept else dialog.on_dismiss
        changed = [NATIVE_DIALOG_ID]
        if effect:
            changed += page.effects[effect](page, None, self) or []
        return MutationReport(tuple(changed))

    # -- actions ----------------------------------------------------------------
    def _guard(self, node_id: str, allow_disabled: bool = False) -> PageNode:
        page = self.page
        if self.pending_native_dialog is not None:
            d = self.pending_native_dialog
            raise ElementObscured(
                f"A native {d.kind} dialog ('{d.message}') blocks the page; use handle_dialog first"
            )
        node = page.node(node_id)
        if not page.is_visible(node_id):
            raise NotInteractive("Element is not visible")
        if page.is_occluded(node_id):
            top = page.node(page.open_dialogs[-1])
            raise ElementObscured(
                f"Element not clickable: it is covered by the open dialog '{top.name}'"
            )
        if "disabled" in node.states and not allow_disabled:
            raise ElementDisabled(f"Element '{node.name}' is disabled")
        return node

    def apply_page_action(self, node_id: str | None, kind: str, payload: dict | None = None) -> MutationReport:
        """Apply one interaction to the active page.

        Raises before touching any state if the target is obscured, disabled
        or has no behavior for this kind of action.
        """
        payload = payload or {}
        if kind == "press_key":
            return self.press_key(payload["key"])
        if kind == "pan":
            return self._pan(node_id, payload.get("deltaX", 0), payload.get("deltaY", 0))
        if node_id == NATIVE_DIALOG_ID:
            raise NotInteractive("Native dialogs only respond to handle_dialog")
        if kind == "hover":
            node = self._guard(node_id, allow_disabled=True)
            return self._hover(node)
        node = self._guard(node_id)
        handler = {
            "click": self._click,
            "type": self._type,
            "select_option": self._select,
            "upload_file": self._upload,
            "drag": self._drag,
            "focus": self._focus,
        }.get(kind)
        if handler is None:
            raise InvalidAction(f"{kind} is not a page action")
        return handler(node, payload)

    def _click(self, node: PageNode, payload: dict) -> MutationReport:
        page = self.page
        b = node.behavior
        if payload.get("rightClick"):
            if not b.on_context:
                raise NotInteractive(f"Element '{node.name}' has no context menu")
            return MutationReport(tuple(page.effects[b.on_context](page, node, self) or ()))
        if not b.clickable() and "focusable" not in node.states:
            raise NotInteractive(f"Element not clickable: '{node.name}' ({node.role}) has no click behavior")
        changed: list[str] = []
        navigated = None
        for _ in range(2 if payload.get("doubleClick") else 1):
            if "focusable" in node.states:
                changed += page.set_focus(node.id)
            if b.toggle:
                node.states ^= {"checked"}
                changed.append(node.id)
            if b.radio_group:
                for other in page.walk():
                    if other.behavior.radio_group == b.radio_group:
                        other.states.discard("checked")
                node.states.add("checked")
                changed.append(b.radio_group)
            if b.popup_options:
                changed += self._toggle_popup(node)
            if b.popup_choice_for:
                owner = page.node(b.popup_choice_for)
                owner.value = node.name
                changed += self._toggle_popup(owner)
                changed.append(owner.id)
            if b.opens_dialog:
                changed += page.open_dialog(b.opens_dialog)
            if b.closes_dialog:
                changed += page.close_top_dialog()
            if b.native_dialog:
                self.pending_native_dialog = b.native_dialog
                changed.append(NATIVE_DIALOG_ID)
            if b.on_click:
                changed += page.effects[b.on_click](page, node, self) or []
            if b.href:
                self.navigate(b.href)
                navigated = b.href
                break
        return MutationReport(tuple(changed), True, navigated)

    def _toggle_popup(self, owner: PageNode) -> list[str]:
        page = self.page
        popup_id = f"{owner.id}-popup"
        parent = page.parent(owner.id)
        if popup_id in page:
            parent.children = [c for c in parent.children if c.id != popup_id]
        else:
            opts = [
                el(f"{owner.id}-opt{i}", "option", choice, states={"focusable"}, popup_choice_for=owner.id)
                for i, choice in enumerate(owner.behavior.popup_options)
            ]
            pos = parent.children.index(owner)
            parent.children.insert(pos + 1, el(popup_id, "listbox", owner.name, *opts))
        page.reindex()
        return [popup_id]

    def _type(self, node: PageNode, payload: dict) -> MutationReport:
        if not node.behavior.editable:
            raise NotInteractive(f"Element '{node.name}' ({node.role}) is not editable")
        text = payload.get("text", "")
        node.value = text if payload.get("shouldClear") else (node.value or "") + text
        return MutationReport(tuple([node.id, *self.page.set_focus(node.id)]))

    def _select(self, node: PageNode, payload: dict) -> MutationReport:
        b = node.behavior
        values = list(payload.get("values", []))
        if b.options is None:
            raise NotInteractive(
                f"Element '{node.name}' is not a native select; open it with click and choose an option"
            )
        missing = [v for v in values if v not in b.options]
        if missing or not values:
            raise NotInteractive(
                f"Option(s) {missing or values} not available in '{node.name}'; choices: {list(b.options)}"
            )
        if len(values) > 1 and not b.multiple:
            raise NotInteractive(f"'{node.name}' accepts a single value")
        node.value = ", ".join(values)
        return MutationReport(tuple([node.id, *self.page.set_focus(node.id)]))

    def _upload(self, node: PageNode, payload: dict) -> MutationReport:
        if not node.behavior.accepts_files:
            raise NotInteractive(f"Element '{node.name}' is not a file input")
        paths = payload.get("filePaths", [])
        node.value = ", ".join(posixpath.basename(p) for p in paths)
        return MutationReport((node.id,))

    def _drag(self, node: PageNode, payload: dict) -> MutationReport:
        page = self.page
        end = self._guard(payload["end_node_id"])
        parent = page.parent(node.id)
        if parent is None or page.parent(end.id) is not parent or not parent.behavior.reorderable:
            raise NotInteractive("drag needs two items of the same reorderable list")
        kids = parent.children
        target = kids.index(end)
        kids.remove(node)
        kids.insert(target, node)
        page.reindex()
        return MutationReport((parent.id,))

    def _focus(self, node: PageNode, payload: dict) -> MutationReport:
        if "focusable" not in node.states:
            raise NotInteractive(f"Element '{node.name}' is not focusable")
        return MutationReport(tuple(self.page.set_focus(node.id)))

    def _hover(self, node: PageNode) -> MutationReport:
        page = self.page
        page.state["hovered"] = node.id
        changed = [node.id]
        if node.behavior.on_hover:
            changed += page.effects[node.behavior.on_hover](page, node, self) or []
        return MutationReport(tuple(changed))

    def _pan(self, node_id: str | None, dx: int, dy: int) -> MutationReport:
        page = self.page
        target = VIEWPORT_ID
        if node_id is not None:
            node = self._guard(node_id, allow_disabled=True)
            for cand in (node, *page.ancestors(node.id)):
                if cand.behavior.scrollable:
                    target = cand.id
                    break
        x, y = page.scroll.get(target, (0, 0))
        page.scroll[target] = (max(0, x + int(dx)), max(0, y + int(dy)))
        return MutationReport((target,))

    def focusable_order(self) -> list[str]:
        page = self.page
        return [
            n.id
            for n in page.visible_nodes()
            if "focusable" in n.states and "disabled" not in n.states and not page.is_occluded(n.id)
        ]

    def press_key(self, key: str) -> MutationReport:
        key = normalize_key(key)
        page = self.page
        if self.pending_native_dialog is not None:
            if key == "Escape":
                return self.handle_dialog(False)
            if key == "Enter":
                return self.handle_dialog(True)
            raise ElementObscured("A native dialog blocks the page; use handle_dialog first")
        focused = page.focused_id
        if key in ("Tab", "Shift+Tab"):
            order = self.focusable_order()
            if not order:
                return MutationReport(())
            if focused in order:
                step = 1 if key == "Tab" else -1
                nxt = order[(order.index(focused) + step) % len(order)]
            else:
                nxt = order[0] if key == "Tab" else order[-1]
            return MutationReport(tuple(page.set_focus(nxt)))
        if key in ("Enter", "Space"):
            if focused is None:
                return MutationReport(())
            return self._click(self._guard(focused), {})
        if key == "Escape":
            return MutationReport(tuple(page.close_top_dialog()))
        if key in _SCROLL_STEP:
            dx, dy = _SCROLL_STEP[key]
            return self._pan(None, dx, dy)
        if key in ("Home", "End"):
            x, _ = page.scroll.get(VIEWPORT_ID, (0, 0))
            page.scroll[VIEWPORT_ID] = (x, 0 if key == "Home" else 10**6)
            return MutationReport((VIEWPORT_ID,))
        node = page.node(focused) if focused else None
        if key == "Backspace":
            if node is None or not node.behavior.editable or not node.value:
                return MutationReport(())
            node.value = node.value[:-1]
            return MutationReport((node.id,))
        if key == "Mod+C":
            if node is not None:
                self.clipboard = node.value or node.name
            return MutationReport(())
        if key == "Mod+V":
            if node is None or not node.behavior.editable:
                return MutationReport(())
            node.value = (node.value or "") + self.clipboard
            return MutationReport((node.id,))
        if len(key) == 1:
            if node is None or not node.behavior.editable:
                return MutationReport(())
            node.value = (node.value or "") + key
            return MutationReport((node.id,))
        return MutationReport(())

    def screenshot(self, node_id: str | None = None, full_page: bool = False) -> dict:
        """Stub screenshot descriptor; no pixels are produced."""
        page = self.page
        return {
            "kind": "screenshot",
            "url": page.url,
            "viewport": {"width": 1280, "height": 800, "scroll": list(page.scroll.get(VIEWPORT_ID, (0, 0)))},
            "full_page": bool(full_page),
            "element": node_id,
            "tick": self.clock,
        }


def hold_ticks(hold_ms: int | float | None) -> int:
    """Extra press duration in whole ticks (1 tick = 1000 ms, rounded up)."""
    if not hold_ms:
        return 0
    return math.ceil(hold_ms / 1000)
