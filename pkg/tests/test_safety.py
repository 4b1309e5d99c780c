import pytest

from agentkernel.actions import TOOL_KINDS, Action
from agentkernel.errors import MalformedUrl, ProfileError
from agentkernel.harness.scenario import asset_path
from agentkernel.safety import (
    ALLOW,
    CONFIRM,
    DENY,
    AgentProfile,
    check_action,
    check_navigation,
    host_matches,
    load_profile,
    preset,
    profile_from_dict,
    profile_snapshot_view,
    url_host,
)
from agentkernel.snapshot import FilterRule, build_snapshot, serialize_snapshot
from agentkernel.web.session import BrowserSession
from agentkernel.web.templates import PageTemplate


def snapshot_of(template, **params):
    session = BrowserSession(0)
    session.load_template(PageTemplate(template, params))
    return build_snapshot(session.page_tree(), 0)


@pytest.fixture
def settings():
    return snapshot_of("dialog-stack")  # ref 3 Save profile, 8 Delete account, 9 Request refund


def click(ref):
    return Action("click", {"ref": f"1:{ref}"}, memory="m")


class TestKeywordGate:
    def test_refund_needs_confirmation(self, settings):
        verdict = check_action(preset("data-entry"), click(9), settings)
        assert verdict.decision == CONFIRM
        assert verdict.keyword == "refund"
        assert "Request refund" in verdict.reason

    def test_plain_button_allowed(self, settings):
        assert check_action(preset("data-entry"), click(3), settings).decision == ALLOW

    def test_grant_and_deny(self, settings):
        asked = []

        def provider(name, kind):
            asked.append((name, kind))
            return "refund" in name.lower()

        profile = preset("data-entry").with_confirmation(provider)
        assert check_action(profile, click(9), settings).decision == ALLOW
        assert check_action(profile, click(8), settings).decision == CONFIRM
        assert asked == [("Request refund", "click"), ("Delete account", "click")]

    def test_description_is_scanned_too(self):
        snap = snapshot_of("products", items_per_page=1, description_words=3)
        profile = preset("data-entry", sensitive_keywords=("product 0001",))
        assert check_action(profile, click(9), snap).decision == CONFIRM  # Add to cart, described as "Product 0001"

    def test_read_only_tools_skip_the_gate(self, settings):
        action = Action("snapshot", {"ref": "1:9"})
        assert check_action(preset("data-entry"), action, settings).decision == ALLOW


class TestScope:
    def test_assistant_cannot_type(self):
        snap = snapshot_of("form")
        verdict = check_action(preset("assistant"), Action("type", {"ref": "1:39", "text": "x"}, memory="m"), snap)
        assert verdict.decision == DENY

    def test_assistant_preset_is_read_only(self):
        tools = preset("assistant").allowed_tools
        assert tools <= {"snapshot", "take_screenshot", "wait_for", "press_key"}
        assert not tools & {"click", "type", "navigate", "browser_tabs"}

    def test_assistant_keys_are_scroll_only(self, settings):
        profile = preset("assistant")
        assert check_action(profile, Action("press_key", {"key": "PageDown"}, memory="m"), settings).allowed
        assert check_action(profile, Action("press_key", {"key": "Enter"}, memory="m"), settings).decision == DENY

    def test_data_entry_is_locked(self):
        profile = preset("data-entry")
        assert profile.navigation_locked
        assert "navigate" not in profile.allowed_tools

    def test_scope_monotonicity(self, settings):
        full = AgentProfile("full")
        actions = [click(3), Action("hover", {"ref": "1:4"}, memory="m"), Action("press_key", {"key": "Tab"}, memory="m")]
        for removed in TOOL_KINDS:
            narrower = AgentProfile("narrow", allowed_tools=full.allowed_tools - {removed})
            for action in actions:
                if check_action(narrower, action, settings).allowed:
                    assert check_action(full, action, settings).allowed

    def test_search_bar_only_typing(self):
        snap = snapshot_of("form")
        profile = preset("research", type_targets=(FilterRule("name-contains", "Full name"),))
        assert check_action(profile, Action("type", {"ref": "1:4", "text": "x"}, memory="m"), snap).allowed
        assert not check_action(profile, Action("type", {"ref": "1:6", "text": "x"}, memory="m"), snap).allowed


class TestNavigation:
    HOSTS = ["a.news.example", "news.example", "x.a.news.example", "evilnews.example",
             "linkedin.example", "www.linkedin.example", "attacker.example", "news.example.attacker.example"]

    def recruiter(self):
        return load_profile(asset_path("profiles", "recruiter.json"))

    def test_wildcard_subdomain(self):
        assert check_navigation(self.recruiter(), "https://a.news.example/story").decision == ALLOW

    def test_attacker_site(self):
        assert check_navigation(self.recruiter(), "https://attacker.example/").decision == DENY

    def test_same_host_under_lock(self):
        profile = preset("data-entry")
        assert check_navigation(profile, "https://crm.example/page2", "https://crm.example/").decision == ALLOW
        assert check_navigation(profile, "https://other.example/", "https://crm.example/").decision == DENY

    @pytest.mark.parametrize("pattern", ["*.news.example", "linkedin.example"])
    def test_matcher_against_oracle(self, pattern):
        def oracle(host):
            if pattern.startswith("*."):
                suffix = pattern[1:]
                return host.endswith(suffix) and len(host) > len(suffix)
            return host == pattern

        for host in self.HOSTS:
            assert host_matches(host, pattern) == oracle(host), host

    @pytest.mark.parametrize("bad", ["a*.b", "*", "news.*", "*.*.x"])
    def test_rich_patterns_rejected(self, bad):
        with pytest.raises(ProfileError):
            AgentProfile("x", domain_allowlist=frozenset({bad}))

    def test_url_host(self):
        assert url_host("https://Shop.Example:8443/a?b") == "shop.example"
        with pytest.raises(MalformedUrl):
            url_host("not a url")


class TestFilters:
    def test_recruiter_never_sees_messages(self):
        snap = snapshot_of("article", messaging_panel=40)
        profile = load_profile(asset_path("profiles", "recruiter.json"))
        text = serialize_snapshot(profile_snapshot_view(profile, snap))
        assert "Messaging" not in text
        assert "Private message" not in text

    def test_no_filters_identity(self, settings):
        assert profile_snapshot_view(preset("data-entry"), settings) is settings

    def test_nested_filters_idempotent(self):
        snap = snapshot_of("dialog-stack", open_count=2)
        profile = AgentProfile("p", snapshot_filters=(FilterRule("role-equals", "dialog"), FilterRule("name-contains", "remember")))
        once = profile_snapshot_view(profile, snap)
        twice = profile_snapshot_view(profile, once)
        assert serialize_snapshot(once) == serialize_snapshot(twice)


class TestProfileFiles:
    def test_round_trip(self):
        profile = load_profile(asset_path("profiles", "support_operator.json"))
        assert profile_from_dict(profile.to_dict()) == profile

    def test_preset_base_with_overrides(self):
        profile = profile_from_dict({"name": "ops", "preset": "data-entry", "sensitive_keywords": ["wire"]})
        assert profile.name == "ops"
        assert profile.navigation_locked
        assert profile.sensitive_keywords == ("wire",)

    @pytest.mark.parametrize("data", [{}, {"name": "x", "allowed_tools": ["teleport"]}, {"name": "x", "preset": "root"}])
    def test_invalid(self, data):
        with pytest.raises(ProfileError):
            profile_from_dict(data)

    def test_all_builtin_profiles_load(self):
        for path in asset_path("profiles").glob("*.json"):
            assert load_profile(path).name
