"""Page templates for the virtual backend.

Instantiation is a pure function of ``(template name, params, rng_seed)``.
Templates register their click effects on the page they build, so a page is
self-contained once created.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Any, Mapping

from agentkernel.errors import InvalidParams, UnknownTemplate
from agentkernel.web.page import NativeDialogSpec, PageNode, VirtualPage, el

DEFAULT_URLS = {
    "form": "https://forms.example/shipping",
    "products": "https://shop.example/products",
    "dialog-stack": "https://app.example/settings",
    "article": "https://news.example/article",
    "blank": "about:blank",
}


@dataclass(frozen=True)
class PageTemplate:
    name: str
    params: Mapping[str, Any] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, data: Mapping) -> PageTemplate:
        if isinstance(data, str):
            return cls(data, {})
        return cls(data["name"], dict(data.get("params", {})))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": dict(self.params)}


def _rng(*parts) -> random.Random:
    return random.Random(":".join(str(p) for p in parts))


_WORDS = (
    "alpha amber basic bright canvas cedar classic compact copper crisp daily delta "
    "durable eco elegant ember field flex fresh granite harbor ivory jade kinetic "
    "linen lunar maple matte metro modern nimbus oak orbit pacific pebble pine prime "
    "quartz rapid rustic sage sierra silver sleek solar sonic spruce steel summit "
    "tidal urban velvet vista willow zephyr"
).split()


def _words(rng: random.Random, count: int) -> str:
    return " ".join(rng.choice(_WORDS) for _ in range(count))


def _fixed_text(rng: random.Random, width: int) -> str:
    text = ""
    while len(text) < width:
        text += rng.choice(_WORDS) + " "
    return text[: width - 1] + "."


# ---------------------------------------------------------------------------
# form
# ---------------------------------------------------------------------------

# Shipping form used for the 28-field bulk/sequential comparison. Field 16 is
# the weight field, which lands on refs 38/39 in the built snapshot.
DEFAULT_FORM_FIELDS: tuple[tuple[str, str, tuple[str, ...]], ...] = (
    ("Full name", "textbox", ()),
    ("Email", "textbox", ()),
    ("Phone", "textbox", ()),
    ("Company", "textbox", ()),
    ("Street address", "textbox", ()),
    ("Apartment or suite", "textbox", ()),
    ("City", "textbox", ()),
    ("State or province", "combobox", ("California", "New York", "Ontario", "Texas")),
    ("Postal code", "textbox", ()),
    ("Country", "combobox", ("USA", "Canada", "Mexico", "Germany")),
    ("Residential address?", "radio", ("Yes", "No")),
    ("Package count", "textbox", ()),
    ("Package type", "combobox", ("Box", "Envelope", "Pallet", "Tube")),
    ("Fragile contents?", "radio", ("Yes", "No")),
    ("Declared value (USD)", "textbox", ()),
    ("Insurance required?", "radio", ("Yes", "No")),
    ("Total Weight (kg)", "textbox", ()),
    ("Length (cm)", "textbox", ()),
    ("Width (cm)", "textbox", ()),
    ("Height (cm)", "textbox", ()),
    ("Shipping speed", "combobox", ("Standard", "Express", "Overnight")),
    ("Pickup date", "textbox", ()),
    ("Pickup window", "combobox", ("Morning", "Afternoon", "Evening")),
    ("Delivery instructions", "textbox", ()),
    ("Recipient name", "textbox", ()),
    ("Recipient phone", "textbox", ()),
    ("Reference number", "textbox", ()),
    ("Customs description", "textbox", ()),
)

FIELD_KINDS = ("textbox", "combobox", "custom-select", "radio", "checkbox")
_DEFAULT_CHOICES = ("Option A", "Option B", "Option C")


def _form_fields(params: Mapping) -> list[tuple[str, str, tuple[str, ...]]]:
    count = params.get("field_count", 28)
    if not isinstance(count, int) or count < 1:
        raise InvalidParams("form.field_count must be a positive integer")
    kinds = params.get("kinds")
    labels = params.get("labels")
    fields = []
    for i in range(count):
        if kinds is None and labels is None:
            label, kind, choices = DEFAULT_FORM_FIELDS[i % len(DEFAULT_FORM_FIELDS)]
            if i >= len(DEFAULT_FORM_FIELDS):
                label = f"{label} {i // len(DEFAULT_FORM_FIELDS) + 1}"
        else:
            kind = kinds[i % len(kinds)] if kinds else "textbox"
            label = labels[i] if labels and i < len(labels) else f"Field {i + 1}"
            choices = ("Yes", "No") if kind == "radio" else _DEFAULT_CHOICES
        if kind not in FIELD_KINDS:
            raise InvalidParams(f"form field kind {kind!r} not in {FIELD_KINDS}")
        if kind == "custom-select" and not choices:
            choices = _DEFAULT_CHOICES
        fields.append((label, kind, tuple(choices)))
    return fields


def build_form(params: Mapping, rng_seed: int, url: str) -> VirtualPage:
    fields = _form_fields(params)
    required = params.get("required", True)
    focus_label = params.get("focus_field", "Total Weight (kg)")
    order_number = str(params.get("order_number", "12345"))
    delay = params.get("confirm_delay", 6)
    if not isinstance(delay, int) or delay < 0:
        raise InvalidParams("form.confirm_delay must be a non-negative integer")

    children: list[PageNode] = [el("title", "heading", "Shipping details", level=1)]
    controls: list[tuple[str, str]] = []  # (kind, control or group id)
    for i, (label, kind, choices) in enumerate(fields):
        shown = f"{label} Required question" if required else label
        desc = "Required question" if required else None
        children.append(el(f"f{i}-label", "heading", shown, level=3, description=desc))
        req_desc = "This is a required question" if required else None
        base_states = {"focusable"} | ({"required"} if required else set())
        if label == focus_label:
            base_states.add("focused")
        if kind == "textbox":
            children.append(
                el(f"f{i}", "textbox", shown, description=req_desc, states=base_states, editable=True)
            )
        elif kind == "combobox":
            children.append(
                el(f"f{i}", "combobox", shown, description=req_desc, states=base_states, options=choices)
            )
        elif kind == "custom-select":
            children.append(
                el(f"f{i}", "combobox", shown, description=req_desc, states=base_states, popup_options=choices)
            )
        elif kind == "checkbox":
            children.append(el(f"f{i}", "checkbox", shown, states=base_states, toggle=True))
        else:
            for j, choice in enumerate(choices):
                children.append(
                    el(f"f{i}-r{j}", "radio", choice, states={"focusable"}, radio_group=f"f{i}")
                )
        controls.append((kind, f"f{i}"))
    children.append(el("submit", "button", "Submit", states={"focusable"}, on_click="submit"))
    children.append(el("status", "text", "", hidden=True))
    page = VirtualPage(url, el("form-root", "generic-container", "Shipping form", *children), "Shipping form")

    def filled(kind: str, cid: str) -> bool:
        if kind == "radio":
            return any(
                "checked" in n.states
                for n in page.walk()
                if n.behavior.radio_group == cid
            )
        if kind == "checkbox":
            return "checked" in page.node(cid).states
        return bool(page.node(cid).value)

    def submit(page_: VirtualPage, node, session) -> list[str]:
        status = page_.node("status")
        status.hidden = False
        missing = [cid for kind, cid in controls if required and not filled(kind, cid)]
        if missing:
            status.name = f"Please complete {len(missing)} required fields"
            return ["status"]
        status.name = "Submitting..."
        page_.state["submitted"] = True

        def confirm(p, _node, _session):
            p.node("status").name = f"Order #{order_number} confirmed"
            return ["status"]

        page_.schedule(session.clock + delay, "order-confirmed", confirm)
        return ["status"]

    page.effects["submit"] = submit
    page.state["fields"] = fields
    return page


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def product_prices(params: Mapping, rng_seed: int) -> list[int]:
    """Seeded price vector for every product across all listing pages."""
    pages = params.get("page_count", 1)
    per_page = params.get("items_per_page", 10)
    lo, hi = params.get("price_range", (100, 999))
    rng = _rng("prices", rng_seed, params.get("price_seed", 0))
    return [rng.randint(lo, hi) for _ in range(pages * per_page)]


def build_products(params: Mapping, rng_seed: int, url: str) -> VirtualPage:
    pages = params.get("page_count", 1)
    per_page = params.get("items_per_page", 10)
    if not isinstance(pages, int) or pages < 1:
        raise InvalidParams("products.page_count must be >= 1")
    if not isinstance(per_page, int) or per_page < 0:
        raise InvalidParams("products.items_per_page must be >= 0")
    lo, hi = params.get("price_range", (100, 999))
    if lo > hi or lo < 0:
        raise InvalidParams("products.price_range must be (low, high) with 0 <= low <= high")
    with_actions = params.get("item_actions", True)
    desc_words = params.get("description_words", 8)
    prices = product_prices(params, rng_seed)
    desc_rng = _rng("descriptions", rng_seed, params.get("price_seed", 0))
    descriptions = [_words(desc_rng, desc_words) for _ in prices]

    def item(n: int) -> PageNode:
        name = f"Product {n:04d}"
        price = el(f"p{n}-price", "text", f"Price: ${prices[n - 1]}")
        desc = el(f"p{n}-desc", "text", descriptions[n - 1].capitalize())
        if with_actions:
            add = el(f"p{n}-add", "button", "Add to cart", description=name,
                     states={"focusable"}, on_click="add_to_cart")
            return el(f"p{n}", "listitem", name, price, desc, add)
        photo = el(f"p{n}-img", "image", f"{name} photo")
        return el(f"p{n}", "listitem", name, photo, price, desc)

    listing = el("product-list", "list", "Products")
    prev_btn = el("prev", "button", "Previous", states={"focusable"}, on_click="prev_page")
    page_text = el("page-indicator", "text", "")
    next_btn = el("next", "button", "Next", states={"focusable"}, on_click="next_page")
    root = el(
        "shop-root", "generic-container", "Shop",
        el("shop-title", "heading", "Product listing", level=1),
        el("home", "link", "Home", states={"focusable"}, href=url),
        el("cart-count", "text", "Cart items", value="0"),
        listing,
        el("pagination", "generic-container", "Pagination", prev_btn, page_text, next_btn),
    )
    page = VirtualPage(url, root, "Product listing")
    page.state.update(current_page=1, page_count=pages, cart=[], prices=prices)

    def render(p: VirtualPage) -> list[str]:
        cur = p.state["current_page"]
        first = (cur - 1) * per_page + 1
        listing.children = [item(n) for n in range(first, first + per_page)]
        page_text.name = f"Page {cur} of {pages}"
        for btn, off in ((prev_btn, cur == 1), (next_btn, cur == pages)):
            btn.states.discard("disabled")
            if off:
                btn.states.add("disabled")
        p.reindex()
        return ["product-list", "page-indicator", "prev", "next"]

    def turn(delta: int):
        def effect(p: VirtualPage, node, session) -> list[str]:
            p.state["current_page"] = min(max(1, p.state["current_page"] + delta), pages)
            return render(p)
        return effect

    def add_to_cart(p: VirtualPage, node: PageNode, session) -> list[str]:
        product = int(node.id[1:].split("-")[0])
        p.state["cart"].append(product)
        p.node("cart-count").value = str(len(p.state["cart"]))
        return ["cart-count"]

    page.effects.update(prev_page=turn(-1), next_page=turn(1), add_to_cart=add_to_cart)
    render(page)
    return page


# ---------------------------------------------------------------------------
# dialog-stack
# ---------------------------------------------------------------------------


def build_dialog_stack(params: Mapping, rng_seed: int, url: str) -> VirtualPage:
    count = params.get("dialog_count", 2)
    open_count = params.get("open_count", 0)
    if not isinstance(count, int) or count < 1 or not 0 <= open_count <= count:
        raise InvalidParams("dialog-stack needs dialog_count >= 1 and 0 <= open_count <= dialog_count")
    status = el("status", "text", "", hidden=True)
    dialogs = []
    for i in range(1, count + 1):
        kids = [el(f"d{i}-text", "text", f"Dialog {i} content")]
        if i < count:
            kids.append(el(f"d{i}-open", "button", f"Open dialog {i + 1}",
                           states={"focusable"}, opens_dialog=f"dialog-{i + 1}"))
        kids.append(el(f"d{i}-remember", "checkbox", f"Remember choice {i}",
                       states={"focusable"}, toggle=True))
        kids.append(el(f"d{i}-close", "button", f"Close dialog {i}",
                       states={"focusable"}, closes_dialog=True))
        dialogs.append(el(f"dialog-{i}", "dialog", f"Dialog {i}", *kids, hidden=True))
    root = el(
        "app-root", "generic-container", "Settings page",
        el("app-title", "heading", "Account settings", level=1),
        el("save", "button", "Save profile", states={"focusable"}, on_click="save"),
        el("open-1", "button", "Open dialog 1", states={"focusable"}, opens_dialog="dialog-1"),
        el("theme", "combobox", "Theme", states={"focusable"},
           popup_options=("Light", "Dark", "System")),
        el("newsletter", "checkbox", "Subscribe to newsletter", states={"focusable"}, toggle=True),
        el("archived", "button", "Export data", states={"focusable", "disabled"}, on_click="save"),
        el("delete", "button", "Delete account", states={"focusable"},
           native_dialog=NativeDialogSpec("confirm", "Delete account permanently?", on_accept="deleted")),
        el("refund", "button", "Request refund", states={"focusable"}, on_click="refund"),
        status,
        *dialogs,
    )
    page = VirtualPage(url, root, "Account settings")

    def set_status(text):
        def effect(p, node, session):
            node_ = p.node("status")
            node_.hidden = False
            node_.name = text
            return ["status"]
        return effect

    page.effects.update(
        save=set_status("Profile saved"),
        deleted=set_status("Account deleted"),
        refund=set_status("Refund requested"),
    )
    for i in range(1, open_count + 1):
        page.open_dialog(f"dialog-{i}")
    return page


# ---------------------------------------------------------------------------
# article
# ---------------------------------------------------------------------------


def build_article(params: Mapping, rng_seed: int, url: str) -> VirtualPage:
    paragraphs = params.get("paragraph_count", 12)
    width = params.get("paragraph_chars", 160)
    pages = params.get("page_count", 1)
    messaging = params.get("messaging_panel", 0)
    title = params.get("title", "Field notes")
    if not isinstance(paragraphs, int) or paragraphs < 0:
        raise InvalidParams("article.paragraph_count must be >= 0")
    if not isinstance(width, int) or width < 8:
        raise InvalidParams("article.paragraph_chars must be >= 8")
    if not isinstance(pages, int) or pages < 1:
        raise InvalidParams("article.page_count must be >= 1")
    digits = len(str(pages))

    body = el("body", "generic-container", "Article body")
    heading = el("article-title", "heading", "", level=1)
    indicator = el("page-indicator", "text", "")
    prev_btn = el("prev", "button", "Previous", states={"focusable"}, on_click="prev_page")
    next_btn = el("next", "button", "Next", states={"focusable"}, on_click="next_page")
    kids = [
        el("nav", "generic-container", "Site navigation",
           el("nav-home", "link", "Home", states={"focusable"}, href=url),
           el("nav-sections", "link", "Sections", states={"focusable"}, href=url)),
        heading,
        body,
        el("pagination", "generic-container", "Pagination", prev_btn, indicator, next_btn),
    ]
    if messaging:
        convs = []
        for i in range(1, messaging + 1):
            convs.append(el(f"conv-{i}", "listitem", f"Conversation {i}",
                            el(f"conv-{i}-last", "text", f"Private message {i}: see you at the interview")))
        kids.append(el("messaging", "generic-container", "Messaging",
                       el("messaging-title", "heading", "Messaging inbox", level=2),
                       el("messaging-list", "list", "Inbox", *convs)))
    page = VirtualPage(url, el("article-root", "generic-container", title, *kids), title)
    page.state.update(current_page=1, page_count=pages)

    def render(p: VirtualPage) -> list[str]:
        cur = p.state["current_page"]
        rng = _rng("article", rng_seed, cur)
        heading.name = f"{title} part {cur:0{digits}d}"
        indicator.name = f"Page {cur:0{digits}d} of {pages}"
        body.children = [
            el(f"para-{i}", "text", _fixed_text(rng, width)) for i in range(1, paragraphs + 1)
        ]
        for btn, off in ((prev_btn, cur == 1), (next_btn, cur == pages)):
            btn.states.discard("disabled")
            if off:
                btn.states.add("disabled")
        p.reindex()
        return ["body", "article-title", "page-indicator"]

    def turn(delta):
        def effect(p, node, session):
            p.state["current_page"] = min(max(1, p.state["current_page"] + delta), pages)
            return render(p)
        return effect

    page.effects.update(prev_page=turn(-1), next_page=turn(1))
    render(page)
    return page


def build_blank(params: Mapping, rng_seed: int, url: str) -> VirtualPage:
    return VirtualPage(url, el("blank-root", "generic-container", "Blank page"), "Blank page")


TEMPLATES = {
    "form": build_form,
    "products": build_products,
    "dialog-stack": build_dialog_stack,
    "article": build_article,
    "blank": build_blank,
}


def instantiate(template: PageTemplate, rng_seed: int, url: str | None = None) -> VirtualPage:
    try:
        builder = TEMPLATES[template.name]
    except KeyError:
        raise UnknownTemplate(f"unknown template {template.name!r}; known: {sorted(TEMPLATES)}") from None
    try:
        return builder(template.params, rng_seed, url or DEFAULT_URLS[template.name])
    except InvalidParams:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise InvalidParams(f"bad params for template {template.name!r}: {exc}") from exc
