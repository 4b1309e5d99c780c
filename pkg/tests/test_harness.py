import json

import pytest

from agentkernel.errors import IncomparableRuns, ScenarioError
from agentkernel.harness.cli import main
from agentkernel.harness.runner import compare_runs, read_trace, replay, run_scenario
from agentkernel.harness.scenario import Scenario, asset_path, builtin_scenarios
from agentkernel.web.templates import PageTemplate, product_prices


def load(name):
    return Scenario.load(asset_path("scenarios", name))


class TestScenarios:
    @pytest.mark.parametrize("name", builtin_scenarios())
    def test_round_trip(self, name):
        scenario = load(name)
        assert Scenario.from_dict(scenario.to_dict()) == scenario

    def test_unknown_policy(self):
        data = load("form28_bulk.json").to_dict()
        data["policy"] = "guess"
        with pytest.raises(ScenarioError):
            Scenario.from_dict(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ScenarioError):
            Scenario.load(tmp_path / "nope.json")


class TestPolicies:
    @pytest.mark.parametrize("seed", [0, 1, 5])
    def test_cheapest_product_matches_exhaustive_scan(self, seed):
        scenario = load("cheapest_product.json")
        result = run_scenario(scenario, seed)
        assert result.metrics.outcome == "success"
        prices = product_prices(scenario.template.params, seed)
        best = sorted(range(len(prices)), key=lambda i: (prices[i], i))[:3]
        assert sorted(result.metrics.answer["chosen"]) == sorted(f"Product {i + 1:04d}" for i in best)
        assert 'text "Cart items" value="3"' in result.final_state

    def test_refund_denied_stops_run(self):
        result = run_scenario(load("refund_gate.json"), confirm="auto-deny")
        assert result.metrics.outcome == "policy_denied"
        assert result.exit_code == 2
        assert "Refund requested" not in result.final_state

    def test_refund_granted_completes(self):
        result = run_scenario(load("refund_gate.json"), confirm="auto-grant")
        assert result.exit_code == 0
        assert "Refund requested" in result.final_state

    def test_custom_dropdown_falls_back_to_clicks(self):
        base = load("form28_bulk.json")
        scenario = Scenario.from_dict({
            **base.to_dict(),
            "name": "custom-dropdown",
            "template": PageTemplate("form", {"field_count": 2, "kinds": ["textbox", "custom-select"]}).to_dict(),
            "policy": "sequential-form-fill",
            "policy_params": {"values": {"Field 1": "hello", "Field 2": "Option B"}, "confirmation_text": "Order #"},
        })
        result = run_scenario(scenario)
        assert result.metrics.outcome == "success", result.metrics.failure
        assert result.metrics.errors >= 1
        kinds = [e["call"]["kind"] for e in result.trace if e["event"] == "call"]
        assert "select_option" in kinds
        assert kinds.index("select_option") < len(kinds) - 1

    def test_form_state_is_mode_independent(self):
        digests = set()
        for name in ("form28_sequential.json", "form28_bulk.json"):
            for history in ("full", "compressed"):
                for trim in ("off", "heuristic"):
                    result = run_scenario(load(name).with_modes(history=history, trim=trim))
                    assert result.metrics.outcome == "success"
                    digests.add(result.metrics.final_state_digest)
        assert len(digests) == 1


class TestReplayAndCompare:
    def test_same_seed_same_trace(self):
        a = run_scenario(load("cheapest_product.json"), 3)
        b = run_scenario(load("cheapest_product.json"), 3)
        assert a.trace_jsonl() == b.trace_jsonl()

    def test_replay_matches(self, tmp_path):
        result = run_scenario(load("form28_bulk.json"))
        path = tmp_path / "trace.jsonl"
        path.write_text(result.trace_jsonl())
        report = replay(path)
        assert report.matches and report.first_divergence is None

    def test_tampered_trace_diverges(self):
        events = json.loads(json.dumps(run_scenario(load("refund_gate.json"), confirm="auto-grant").trace))
        for event in events:
            if event["event"] == "call":
                event["result"] = "tampered"
                break
        report = replay(events)
        assert not report.matches
        assert report.first_divergence == 0

    def test_compare_identical_runs(self):
        a = run_scenario(load("form28_bulk.json")).metrics
        b = run_scenario(load("form28_bulk.json")).metrics
        report = compare_runs(a, b)
        assert all(report[key]["delta"] == 0 for key in ("tool_calls", "total_tokens", "elapsed_ticks"))
        assert report["same_final_state"]

    def test_compare_family(self):
        seq = run_scenario(load("form28_sequential.json")).metrics
        bulk = run_scenario(load("form28_bulk.json")).metrics
        report = compare_runs(seq, bulk)
        assert report["tool_calls"]["delta"] == -28
        assert report["same_final_state"]

    def test_compare_different_scenarios(self):
        a = run_scenario(load("form28_bulk.json")).metrics
        b = run_scenario(load("refund_gate.json")).metrics
        with pytest.raises(IncomparableRuns):
            compare_runs(a, b)


class TestCli:
    def run(self, tmp_path, scenario, *extra):
        report = tmp_path / f"{scenario}.json"
        code = main(["run", "--scenario", scenario, "--report", str(report), *extra])
        return code, report

    def test_run_writes_report_csv_and_trace(self, tmp_path):
        csv, trace = tmp_path / "cost.csv", tmp_path / "trace.jsonl"
        code, report = self.run(tmp_path, "form28_bulk.json", "--csv", str(csv), "--trace", str(trace))
        assert code == 0
        data = json.loads(report.read_text())
        assert data["tool_calls"] == 10
        assert csv.read_text().startswith("step,input,cached,output,cost")
        assert read_trace(trace)[0]["event"] == "start"
        assert main(["replay", str(trace)]) == 0

    def test_denied_exit_code(self, tmp_path):
        assert self.run(tmp_path, "refund_gate.json")[0] == 2
        assert self.run(tmp_path, "refund_gate.json", "--confirm", "auto-grant")[0] == 0

    def test_missing_scenario_exit_code(self, tmp_path, capsys):
        assert self.run(tmp_path, "missing.json")[0] == 3
        assert "error" in capsys.readouterr().err

    def test_mode_overrides(self, tmp_path):
        code, report = self.run(tmp_path, "form28_bulk.json", "--history", "full", "--trim", "heuristic")
        assert code == 0
        assert json.loads(report.read_text())["modes"]["history"] == "full"

    def test_compare_command(self, tmp_path, capsys):
        _, a = self.run(tmp_path, "form28_sequential.json")
        _, b = self.run(tmp_path, "form28_bulk.json")
        capsys.readouterr()
        assert main(["compare", str(a), str(b)]) == 0
        assert "tool_calls" in capsys.readouterr().out

    def test_compare_incomparable(self, tmp_path):
        _, a = self.run(tmp_path, "form28_bulk.json")
        _, b = self.run(tmp_path, "refund_gate.json")
        assert main(["compare", str(a), str(b)]) == 3

    def test_list(self, capsys):
        assert main(["list"]) == 0
        assert "form28_bulk.json" in capsys.readouterr().out
