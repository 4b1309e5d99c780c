import json

from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from agentkernel.actions import Action, BulkRequest
from agentkernel.context import apply_trim, heuristic_trim
from agentkernel.execution import ExecutionLayer, execute, execute_bulk
from agentkernel.harness.runner import replay, run_scenario
from agentkernel.harness.scenario import Scenario, asset_path
from agentkernel.safety import CONFIRM, AgentProfile, check_action, preset
from agentkernel.snapshot import (
    MIN_SNAPSHOT_CHARS,
    STATE_FLAGS,
    AccessibilityNode,
    FilterRule,
    NodeRole,
    build_snapshot,
    extract_range,
    filter_snapshot,
    iter_preorder,
    parse_markers,
    parse_snapshot_text,
    serialize_snapshot,
)
from agentkernel.web.session import BrowserSession
from agentkernel.web.templates import PageTemplate

UNLIMITED = 10**9
WORDS = ["Save", "Next", "Product", "Message", "secret", "Cart", "Page", "Help", "item"]

texts = st.text(st.characters(blacklist_categories=("Cs",)), max_size=12)
names = st.one_of(texts, st.lists(st.sampled_from(WORDS), min_size=1, max_size=3).map(" ".join))


@st.composite
def nodes(draw, children=st.just(())):
    role = draw(st.sampled_from(list(NodeRole)))
    return AccessibilityNode(
        role,
        draw(names),
        description=draw(st.none() | names),
        states=frozenset(draw(st.sets(st.sampled_from(STATE_FLAGS), max_size=2))),
        level=draw(st.none() | st.integers(1, 6)) if role is NodeRole.HEADING else None,
        value=draw(st.none() | texts),
        children=tuple(draw(children)),
    )


trees = st.recursive(nodes(), lambda kids: nodes(st.lists(kids, max_size=6)), max_leaves=60)


def listing(count):
    """A container with a long run of same-shaped items, like a product grid."""
    items = [AccessibilityNode(NodeRole.LISTITEM, f"Item {i}", children=(
        AccessibilityNode(NodeRole.TEXT, f"Price {i}"),
        AccessibilityNode(NodeRole.BUTTON, "Add to cart", description=f"Item {i}"),
    )) for i in range(count)]
    return AccessibilityNode(NodeRole.LIST, "Items", children=tuple(items))


trees_with_lists = st.builds(
    lambda tree, count: AccessibilityNode(NodeRole.GENERIC_CONTAINER, "page", children=(tree, listing(count))),
    trees, st.integers(0, 40),
)


def form_layer(profile=None):
    session = BrowserSession(0)
    session.load_template(PageTemplate("form", {}))
    layer = ExecutionLayer(session, profile or AgentProfile("open"))
    layer.refresh()
    return layer


FORM_TEXTBOXES = [line.ref for line in parse_snapshot_text(form_layer().view_text()) if line.role is NodeRole.TEXTBOX]


@settings(max_examples=1000, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(
    edits=st.lists(st.tuples(st.sampled_from(FORM_TEXTBOXES), st.text("abcxyz", max_size=5)), min_size=1, max_size=4),
    data=st.data(),
)
def test_old_version_never_mutates(edits, data):
    layer = form_layer()
    for ref, text in edits:
        assert execute(layer, Action("type", {"ref": f"{layer.version}:{ref}", "text": text}, memory="m")).ok
    before, version = layer.session.page_state_text(), layer.version
    stale = data.draw(st.integers(1, version - 1))
    kind = data.draw(st.sampled_from(["click", "type", "hover", "select_option"]))
    ref = data.draw(st.integers(1, layer.snapshot.max_ref))
    params = {"ref": f"{stale}:{ref}"}
    if kind == "type":
        params["text"] = "zzz"
    if kind == "select_option":
        params["values"] = ["USA"]
    result = execute(layer, Action(kind, params, memory="m"))
    assert result.error_code == "StaleRef"
    assert layer.session.page_state_text() == before
    assert layer.version == version


@settings(max_examples=300, deadline=None)
@given(
    keyword=st.text("abcdefghij", min_size=2, max_size=8),
    flips=st.lists(st.booleans(), min_size=8, max_size=8),
    prefix=st.text("abcdefghij ", max_size=6),
    suffix=st.text("abcdefghij ", max_size=6),
    where=st.sampled_from(["name", "description"]),
)
def test_injected_keyword_always_gated(keyword, flips, prefix, suffix, where):
    cased = "".join(c.upper() if flip else c for c, flip in zip(keyword, flips + [False] * len(keyword)))
    text = prefix + cased + suffix
    button = AccessibilityNode(NodeRole.BUTTON, text if where == "name" else "Go",
                               description=text if where == "description" else None)
    snap = build_snapshot(AccessibilityNode(NodeRole.GENERIC_CONTAINER, "page", children=(button,)), 0)
    profile = AgentProfile("p", sensitive_keywords=(keyword.upper(),))
    assert check_action(profile, Action("click", {"ref": "1:2"}, memory="m"), snap).decision == CONFIRM

@settings(max_examples=300, deadline=None)
@given(name=st.text("abcdefghij ", max_size=12), keyword=st.text("abcdefghij", min_size=2, max_size=4))
def test_gate_fires_exactly_on_containment(name, keyword):
    snap = build_snapshot(AccessibilityNode(NodeRole.GENERIC_CONTAINER, "page", children=(
        AccessibilityNode(NodeRole.BUTTON, name),)), 0)
    profile = AgentProfile("p", sensitive_keywords=(keyword,))
    verdict = check_action(profile, Action("click", {"ref": "1:2"}, memory="m"), snap)
    assert (verdict.decision == CONFIRM) == (keyword in name)


@settings(max_examples=300, deadline=None)
@given(trees_with_lists)
def test_interactive_refs_survive(tree):
    snap = build_snapshot(tree, 0)
    text = serialize_snapshot(snap, UNLIMITED)
    directive = heuristic_trim(text)
    for line in parse_snapshot_text(text):
        if line.interactive:
            assert directive.covers(line.ref)

@settings(max_examples=300, deadline=None)
@given(trees_with_lists)
def test_markers_expand_back_to_full_text(tree):
    snap = build_snapshot(tree, 0)
    trimmed = apply_trim(snap, heuristic_trim(serialize_snapshot(snap, UNLIMITED)))
    rebuilt = []
    for raw in trimmed.splitlines(keepends=True):
        marker = parse_markers(raw)
        rebuilt.append(extract_range(snap, *marker[0]) if marker else raw)
    assert "".join(rebuilt) == serialize_snapshot(snap, UNLIMITED)


@settings(max_examples=300, deadline=None)
@given(trees)
def test_deterministic_and_dense(tree):
    a, b = build_snapshot(tree, 0), build_snapshot(tree, 0)
    assert serialize_snapshot(a, UNLIMITED) == serialize_snapshot(b, UNLIMITED)
    refs = [node.ref for node in a.nodes()]
    assert refs == list(range(1, len(list(iter_preorder(tree))) + 1))

@settings(max_examples=300, deadline=None)
@given(trees)
def test_text_round_trips(tree):
    snap = build_snapshot(tree, 0)
    lines = parse_snapshot_text(serialize_snapshot(snap, UNLIMITED))
    assert len(lines) == snap.node_count
    for line, node in zip(lines, snap.nodes()):
        assert (line.ref, line.role, line.name, line.level, line.states) == (
            node.ref, node.role, node.name, node.level, node.states)
        assert line.description == (node.description or None)
        assert line.value == (node.value or None)

@settings(max_examples=200, deadline=None)
@given(trees, st.integers(MIN_SNAPSHOT_CHARS, 4000))
def test_budget_cut_is_whole_lines(tree, budget):
    snap = build_snapshot(tree, 0)
    text = serialize_snapshot(snap, budget)
    full = serialize_snapshot(snap, UNLIMITED)
    if text != full:
        assert len(text) <= budget
        kept = text.splitlines(keepends=True)[:-1]
        assert full.startswith("".join(kept))
        assert parse_markers(text)[-1][1] == snap.max_ref


@settings(max_examples=300, deadline=None)
@given(trees, st.sampled_from(WORDS), st.sampled_from(list(NodeRole)), st.booleans())
def test_matched_subtrees_vanish(tree, word, role, by_name):
    snap = build_snapshot(tree, 0)
    rule = FilterRule("name-contains", word) if by_name else FilterRule("role-equals", role.value)
    hidden = set()

    def mark(node, inside):
        inside = inside or rule.matches(node)
        if inside:
            hidden.add(node.ref)
        for child in node.children:
            mark(child, inside)

    mark(snap.root, False)
    view = filter_snapshot(snap, [rule])
    if snap.root.ref in hidden:
        assert view.node_count == 1 and not view.root.name
        return
    seen = [node.ref for node in view.nodes()]
    assert seen == [ref for ref in range(1, snap.max_ref + 1) if ref not in hidden]
    if by_name:
        assert word.lower() not in serialize_snapshot(view, UNLIMITED).lower()


CLICKABLE = [3, 4, 5, 6, 7, 8, 9]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.sampled_from(CLICKABLE), min_size=1, max_size=6))
def test_bulk_equals_sequential_prefix(refs):
    def fresh():
        session = BrowserSession(0)
        session.load_template(PageTemplate("dialog-stack", {}))
        layer = ExecutionLayer(session, preset("data-entry"))
        layer.refresh()
        return layer

    bulk_layer = fresh()
    start = bulk_layer.snapshot
    calls = tuple(Action("click", {"ref": f"1:{ref}"}) for ref in refs)
    result = execute_bulk(bulk_layer, BulkRequest(calls, memory="batch"))
    statuses = [r.status for r in result.results]
    failed = result.failed_index
    if failed is None:
        assert statuses == ["ok"] * len(refs)
    else:
        assert statuses == ["ok"] * failed + ["error"] + ["skipped"] * (len(refs) - failed - 1)

    seq = fresh()
    executed = refs if failed is None else refs[:failed]
    for ref in executed:
        node_id = start.ref_index[ref].node_id
        current = seq.snapshot.find(node_id)
        assert execute(seq, Action("click", {"ref": f"{seq.version}:{current.ref}"}, memory="m")).ok
    assert seq.session.page_state_text() == bulk_layer.session.page_state_text()


@settings(max_examples=200, deadline=None)
@given(st.sampled_from(["click", "type", "hover", "press_key", "drag"]), st.integers(1, 60))
def test_assistant_denials_do_not_mutate(kind, ref):
    layer = form_layer(preset("assistant"))
    before = layer.session.page_state_text()
    params = {"click": {"ref": f"1:{ref}"}, "type": {"ref": f"1:{ref}", "text": "x"},
              "hover": {"ref": f"1:{ref}"}, "press_key": {"key": "Enter"},
              "drag": {"startRef": f"1:{ref}", "endRef": "1:4"}}[kind]
    result = execute(layer, Action(kind, params, memory="m"))
    if not result.ok:
        assert layer.session.page_state_text() == before
        assert layer.version == 1


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_seeded_runs_replay(seed):
    scenario = Scenario.load(asset_path("scenarios", "cheapest_product.json"))
    a, b = run_scenario(scenario, seed), run_scenario(scenario, seed)
    assert a.trace_jsonl() == b.trace_jsonl()
    report = replay([json.loads(line) for line in a.trace_jsonl().splitlines()])
    assert report.matches
