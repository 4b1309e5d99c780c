import pytest

from agentkernel.actions import TOOL_KINDS, Action, BulkRequest, parse_call
from agentkernel.errors import InvalidAction
from agentkernel.snapshot import VersionedRef


def test_sixteen_tools():
    assert len(TOOL_KINDS) == 16
    assert "bulk_actions" not in TOOL_KINDS


def test_refs_are_parsed():
    action = Action("click", {"ref": "2:5"})
    assert action.params["ref"] == VersionedRef(2, 5)
    assert action.refs() == {"ref": VersionedRef(2, 5)}


def test_drag_has_two_refs():
    action = Action("drag", {"startRef": "1:4", "endRef": "1:7"})
    assert action.refs() == {"startRef": VersionedRef(1, 4), "endRef": VersionedRef(1, 7)}


def test_snapshot_range_takes_plain_ints():
    action = Action("snapshot", {"startRef": 10, "endRef": 20})
    assert action.refs() == {}
    assert not action.mutating


@pytest.mark.parametrize(
    "wire, message",
    [
        ({"kind": "fly"}, "unknown tool"),
        ({"kind": "click", "params": {}}, "requires ref"),
        ({"kind": "click", "params": {"ref": "1:2", "zzz": 1}}, "does not take"),
        ({"kind": "type", "params": {"ref": "x", "text": "a"}}, "version:ref"),
    ],
)
def test_invalid_calls(wire, message):
    with pytest.raises(InvalidAction, match=message):
        parse_call(wire)


def test_digest_format():
    assert Action("click", {"ref": "1:42"}).digest() == "click(ref=42)"
    assert Action("type", {"ref": "1:42", "text": "John Doe"}).digest() == 'type(ref=42, "John Doe")'


def test_wire_round_trip():
    action = Action("type", {"ref": "3:9", "text": "hi", "shouldClear": True}, memory="typing", next_goal="submit")
    assert parse_call(action.to_wire()) == action


def test_flat_wire_form():
    assert parse_call({"type": "click", "ref": "2:5"}) == Action("click", {"ref": "2:5"})


def test_memo_fields():
    action = Action("wait_for", {"time": 2}).with_memo(memory="waiting")
    assert action.memo()["memory"] == "waiting"
    assert action.mutating


class TestBulk:
    def test_wire_and_digest(self):
        bulk = BulkRequest(
            (Action("type", {"ref": "1:1", "text": "hello"}), Action("select_option", {"ref": "1:3", "values": ["USA"]})),
            memory="filling",
        )
        wire = bulk.to_wire()
        assert wire["kind"] == "bulk_actions"
        assert parse_call(wire) == bulk
        assert bulk.digest() == 'type(ref=1, "hello"), select_option(ref=3, ["USA"])'

