"""Deterministic virtual-web backend."""

from __future__ import annotations

from agentkernel.snapshot import AccessibilityNode
from agentkernel.web.page import Behavior, NativeDialogSpec, PageNode, VirtualPage, el
from agentkernel.web.session import (
    NATIVE_DIALOG_ID,
    SCROLL_KEYS,
    Backend,
    BrowserSession,
    MutationReport,
    Tab,
    normalize_key,
)
from agentkernel.web.templates import DEFAULT_URLS, TEMPLATES, PageTemplate, instantiate, product_prices


def load_template(session: BrowserSession, template: PageTemplate, url: str | None = None) -> VirtualPage:
    return session.load_template(template, url)


def apply_page_action(
    session: BrowserSession, node: AccessibilityNode | str, kind: str, payload: dict | None = None
) -> MutationReport:
    node_id = node if isinstance(node, str) or node is None else node.node_id
    return session.apply_page_action(node_id, kind, payload)


def advance_clock(session: BrowserSession, ticks: int) -> list[str]:
    return session.advance_clock(ticks)


__all__ = [
    "Backend", "Behavior", "BrowserSession", "DEFAULT_URLS", "MutationReport", "NATIVE_DIALOG_ID",
    "NativeDialogSpec", "PageNode", "PageTemplate", "SCROLL_KEYS", "TEMPLATES", "Tab", "VirtualPage",
    "advance_clock", "apply_page_action", "el", "instantiate", "load_template", "normalize_key",
    "product_prices",
]
