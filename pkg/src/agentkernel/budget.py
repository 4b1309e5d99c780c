"""Prompt assembly, token estimates, prefix-cache accounting and cost.

Prompts are assembled from five layers ordered from most to least stable, so
that whatever did not change since the previous request forms a cacheable
prefix. Caching is accounted per whole layer.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from agentkernel.errors import InvalidLedger

LAYER_ORDER = ("system_prompt", "session_context", "tab_state", "history", "snapshot")


def estimate_tokens(text: str) -> int:
    """Rough token count: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class PromptLayer:
    kind: str
    text: str = ""

    def __post_init__(self):
        if self.kind not in LAYER_ORDER:
            raise ValueError(f"layer kind must be one of {LAYER_ORDER}, got {self.kind!r}")

    @property
    def rendered(self) -> str:
        return f"<{self.kind}>\n{self.text}</{self.kind}>\n"


@dataclass(frozen=True)
class AssembledPrompt:
    layers: tuple[PromptLayer, ...]
    text: str
    offsets: tuple[int, ...]  # start of each layer within ``text``

    @property
    def tokens(self) -> int:
        return estimate_tokens(self.text)

    def layer_tokens(self) -> dict[str, int]:
        return {layer.kind: estimate_tokens(layer.rendered) for layer in self.layers}

    def prefix_text(self, layer_count: int) -> str:
        end = self.offsets[layer_count] if layer_count < len(self.layers) else len(self.text)
        return self.text[:end]


def assemble_prompt(layers: Iterable[PromptLayer] | dict[str, str]) -> AssembledPrompt:
    """Concatenate the five layers in cache order, whatever order they arrive in."""
    if isinstance(layers, dict):
        layers = [PromptLayer(k, v) for k, v in layers.items()]
    by_kind = {}
    for layer in layers:
        if layer.kind in by_kind:
            raise ValueError(f"duplicate layer {layer.kind!r}")
        by_kind[layer.kind] = layer
    missing = [k for k in LAYER_ORDER if k not in by_kind]
    if missing:
        raise ValueError(f"missing prompt layers: {missing}")
    ordered = tuple(by_kind[k] for k in LAYER_ORDER)
    offsets = []
    parts = []
    pos = 0
    for layer in ordered:
        offsets.append(pos)
        parts.append(layer.rendered)
        pos += len(layer.rendered)
    return AssembledPrompt(ordered, "".join(parts), tuple(offsets))


def shared_layers(previous: AssembledPrompt | None, current: AssembledPrompt) -> int:
    """How many leading layers are byte-identical between two prompts."""
    if previous is None:
        return 0
    count = 0
    for a, b in zip(previous.layers, current.layers):
        if a != b:
            break
        count += 1
    return count


def cached_tokens(previous: AssembledPrompt | None, current: AssembledPrompt) -> int:
    return estimate_tokens(current.prefix_text(shared_layers(previous, current)))


# -- prices and ledgers ---------------------------------------------------------------


@dataclass(frozen=True)
class PriceTable:
    """Dollars per million tokens for uncached input, cached input and output."""

    input_per_million: float = 1.25
    cached_input_per_million: float = 0.13
    output_per_million: float = 10.00
    name: str = "default"

    def __post_init__(self):
        if not 0 <= self.cached_input_per_million < self.input_per_million:
            raise ValueError("cached input must be cheaper than uncached input")
        if self.output_per_million < 0:
            raise ValueError("prices must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> PriceTable:
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> PriceTable:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        return asdict(self)


# Small trimming model; priced separately from the primary agent model.
LITE_PRICES = PriceTable(0.10, 0.01, 0.40, "trimmer-lite")


@dataclass(frozen=True)
class LedgerEntry:
    input_tokens: int
    cached_tokens: int
    output_tokens: int
    label: str = ""

    def check(self) -> None:
        if min(self.input_tokens, self.cached_tokens, self.output_tokens) < 0:
            raise InvalidLedger(f"negative token count in {self}")
        if self.cached_tokens > self.input_tokens:
            raise InvalidLedger(
                f"cached tokens ({self.cached_tokens}) exceed input tokens ({self.input_tokens})"
            )


@dataclass
class TokenLedger:
    entries: list[LedgerEntry] = field(default_factory=list)

    def add(self, input_tokens: int, cached: int, output_tokens: int, label: str = "") -> LedgerEntry:
        entry = LedgerEntry(input_tokens, cached, output_tokens, label)
        entry.check()
        self.entries.append(entry)
        return entry

    @property
    def input_tokens(self) -> int:
        return sum(e.input_tokens for e in self.entries)

    @property
    def cached_tokens(self) -> int:
        return sum(e.cached_tokens for e in self.entries)

    @property
    def output_tokens(self) -> int:
        return sum(e.output_tokens for e in self.entries)

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def to_dict(self) -> dict:
        return {"entries": [asdict(e) for e in self.entries]}

    @classmethod
    def from_dict(cls, data: dict) -> TokenLedger:
        ledger = cls()
        for e in data.get("entries", []):
            ledger.add(e["input_tokens"], e["cached_tokens"], e["output_tokens"], e.get("label", ""))
        return ledger

    @classmethod
    def single(cls, input_tokens: int, cached: int, output_tokens: int) -> TokenLedger:
        ledger = cls()
        ledger.add(input_tokens, cached, output_tokens)
        return ledger


def _dollars(tokens: int, per_million: float) -> float:
    return tokens * per_million / 1_000_000


@dataclass(frozen=True)
class CostReport:
    uncached_input_cost: float
    cached_input_cost: float
    output_cost: float
    input_tokens: int
    cached_tokens: int
    output_tokens: int
    steps: int
    rows: tuple[dict, ...] = ()

    @property
    def total(self) -> float:
        return self.uncached_input_cost + self.cached_input_cost + self.output_cost

    def share(self, component: str) -> float:
        value = getattr(self, f"{component}_cost")
        return value / self.total if self.total else 0.0

    @property
    def cache_ratio(self) -> float:
        return self.cached_tokens / self.input_tokens if self.input_tokens else 0.0

    def per_step(self, steps: int | None = None) -> tuple[float, float]:
        """Average (tokens, dollars) per step."""
        steps = steps or self.steps
        if not steps:
            return 0.0, 0.0
        return (self.input_tokens + self.output_tokens) / steps, self.total / steps

    def to_dict(self) -> dict:
        tokens, dollars = self.per_step()
        return {
            "total": self.total,
            "uncached_input": self.uncached_input_cost,
            "cached_input": self.cached_input_cost,
            "output": self.output_cost,
            "shares": {k: self.share(k) for k in ("uncached_input", "cached_input", "output")},
            "input_tokens": self.input_tokens,
            "cached_tokens": self.cached_tokens,
            "output_tokens": self.output_tokens,
            "cache_ratio": self.cache_ratio,
            "steps": self.steps,
            "per_step_tokens": tokens,
            "per_step_cost": dollars,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=["step", "input", "cached", "output", "cost"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()


def entry_cost(entry: LedgerEntry, prices: PriceTable) -> float:
    return (
        _dollars(entry.input_tokens - entry.cached_tokens, prices.input_per_million)
        + _dollars(entry.cached_tokens, prices.cached_input_per_million)
        + _dollars(entry.output_tokens, prices.output_per_million)
    )


def compute_cost(ledger: TokenLedger, prices: PriceTable = PriceTable()) -> CostReport:
    for entry in ledger.entries:
        entry.check()
    rows = tuple(
        {
            "step": i,
            "input": e.input_tokens,
            "cached": e.cached_tokens,
            "output": e.output_tokens,
            "cost": round(entry_cost(e, prices), 8),
        }
        for i, e in enumerate(ledger.entries, 1)
    )
    inp, cached, out = ledger.input_tokens, ledger.cached_tokens, ledger.output_tokens
    return CostReport(
        _dollars(inp - cached, prices.input_per_million),
        _dollars(cached, prices.cached_input_per_million),
        _dollars(out, prices.output_per_million),
        inp,
        cached,
        out,
        len(ledger.entries),
        rows,
    )


@dataclass(frozen=True)
class CachingProjection:
    uncached_cost: float
    cached_cost: float
    reduction: float  # fraction, 0..1


def workflow_cost_projection(
    static_prefix_tokens: int, request_count: int, prices: PriceTable = PriceTable()
) -> CachingProjection:
    """Cost of resending a fixed prefix ``request_count`` times, with and without caching."""
    if static_prefix_tokens <= 0 or request_count <= 0:
        raise ValueError("prefix size and request count must be positive")
    uncached = _dollars(request_count * static_prefix_tokens, prices.input_per_million)
    cached = _dollars(static_prefix_tokens, prices.input_per_million) + _dollars(
        (request_count - 1) * static_prefix_tokens, prices.cached_input_per_million
    )
    return CachingProjection(uncached, cached, 1 - cached / uncached)


def sum_reports(reports: Sequence[CostReport]) -> float:
    return sum(r.total for r in reports)
