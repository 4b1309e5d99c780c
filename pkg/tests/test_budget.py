import json

import pytest

from agentkernel.budget import (
    LAYER_ORDER,
    PriceTable,
    PromptLayer,
    TokenLedger,
    assemble_prompt,
    cached_tokens,
    compute_cost,
    estimate_tokens,
    shared_layers,
    workflow_cost_projection,
)
from agentkernel.errors import InvalidLedger


def layers(**overrides):
    base = {kind: f"{kind} text\n" for kind in LAYER_ORDER}
    base.update(overrides)
    return assemble_prompt(base)


class TestTokens:
    @pytest.mark.parametrize("text, tokens", [("", 0), ("x" * 12, 3), ("x" * 13, 4), ("x" * 50_000, 12_500)])
    def test_estimate(self, text, tokens):
        assert estimate_tokens(text) == tokens


class TestAssembly:
    def test_empty_layers_only_delimiters(self):
        prompt = assemble_prompt({kind: "" for kind in LAYER_ORDER})
        expected = "".join(f"<{k}>\n</{k}>\n" for k in LAYER_ORDER)
        assert prompt.text == expected
        assert assemble_prompt({kind: "" for kind in reversed(LAYER_ORDER)}).text == expected

    def test_missing_and_duplicate_layers(self):
        with pytest.raises(ValueError):
            assemble_prompt({"system_prompt": "x"})
        with pytest.raises(ValueError):
            assemble_prompt([PromptLayer("history", "a"), PromptLayer("history", "b")])

    def test_snapshot_change_keeps_four_layer_prefix(self):
        a, b = layers(snapshot="v1\n"), layers(snapshot="v2\n")
        assert shared_layers(a, b) == 4
        assert cached_tokens(a, b) == estimate_tokens(b.prefix_text(4))
        common = 0
        while common < min(len(a.text), len(b.text)) and a.text[common] == b.text[common]:
            common += 1
        assert b.offsets[4] <= common  # the cached prefix is part of the byte-level common prefix

    def test_system_prompt_change_kills_cache(self):
        assert cached_tokens(layers(), layers(system_prompt="edited\n")) == 0

    def test_identical_prompts_fully_cached(self):
        assert cached_tokens(layers(), layers()) == layers().tokens

    def test_first_request(self):
        assert cached_tokens(None, layers()) == 0

    @pytest.mark.parametrize("k", range(len(LAYER_ORDER)))
    def test_order_of_layers_law(self, k):
        prev = layers()
        cur = layers(**{LAYER_ORDER[k]: "changed\n"})
        expected = sum(estimate_tokens(layer.rendered) for layer in cur.layers[:k])
        assert abs(cached_tokens(prev, cur) - expected) <= k  # per-layer ceil rounding


class TestCost:
    def test_reference_session(self):
        report = compute_cost(TokenLedger.single(265_104, 198_528, 3_639), PriceTable())
        assert report.total == pytest.approx(0.1454, abs=1e-4)
        assert report.uncached_input_cost == pytest.approx(0.0832, abs=1e-4)
        assert report.cached_input_cost == pytest.approx(0.0258, abs=1e-4)
        assert report.output_cost == pytest.approx(0.0364, abs=1e-4)
        tokens, dollars = report.per_step(30)
        assert round(tokens) == 8958
        assert round(dollars, 4) == 0.0048

    def test_zero_ledger(self):
        assert compute_cost(TokenLedger()).total == 0

    def test_additivity(self):
        ledger = TokenLedger()
        for i in range(10):
            ledger.add(1000 + i * 37, i * 50, 20 + i)
        whole = compute_cost(ledger).total
        parts = sum(compute_cost(TokenLedger.single(e.input_tokens, e.cached_tokens, e.output_tokens)).total
                    for e in ledger.entries)
        assert whole == pytest.approx(parts, abs=1e-12)

    def test_more_caching_never_costs_more(self):
        costs = [compute_cost(TokenLedger.single(10_000, cached, 100)).total for cached in range(0, 10_001, 500)]
        assert costs == sorted(costs, reverse=True)

    def test_invalid_entries(self):
        with pytest.raises(InvalidLedger):
            TokenLedger().add(10, 11, 0)
        with pytest.raises(InvalidLedger):
            TokenLedger().add(-1, 0, 0)

    def test_csv_columns(self):
        ledger = TokenLedger()
        ledger.add(100, 0, 10)
        ledger.add(120, 100, 12)
        rows = compute_cost(ledger).to_csv().splitlines()
        assert rows[0] == "step,input,cached,output,cost"
        assert len(rows) == 3

    def test_json_round_trips(self, tmp_path):
        prices = PriceTable(2.0, 0.5, 8.0, "other")
        path = tmp_path / "prices.json"
        path.write_text(json.dumps(prices.to_dict()))
        assert PriceTable.load(path) == prices
        ledger = TokenLedger.single(10, 5, 1)
        assert TokenLedger.from_dict(json.loads(json.dumps(ledger.to_dict()))).entries == ledger.entries

    def test_cached_rate_must_be_cheaper(self):
        with pytest.raises(ValueError):
            PriceTable(1.0, 2.0, 1.0)


class TestProjection:
    def test_static_prefix(self):
        projection = workflow_cost_projection(20_000, 100)
        assert projection.uncached_cost == pytest.approx(2.50, abs=1e-12)
        assert projection.cached_cost == pytest.approx(0.2824, abs=1e-4)
        assert projection.reduction == pytest.approx(0.887, abs=0.005)

    def test_single_request(self):
        assert workflow_cost_projection(20_000, 1).reduction == 0

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            workflow_cost_projection(0, 10)
