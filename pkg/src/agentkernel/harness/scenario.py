"""Scenario files: which page to load, which profile to apply, which policy to run."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from agentkernel.budget import PriceTable
from agentkernel.errors import ProfileError, ScenarioError
from agentkernel.safety import PRESETS, AgentProfile, load_profile, preset, profile_from_dict
from agentkernel.web.templates import DEFAULT_URLS, PageTemplate

POLICIES = (
    "sequential-form-fill",
    "bulk-form-fill",
    "cheapest-product",
    "trim-stress",
    "history-stress",
    "script",
)
HISTORY_MODES = ("full", "compressed")
TRIM_MODES = ("off", "heuristic")


def asset_path(*parts: str) -> Path:
    return Path(str(resources.files("agentkernel").joinpath("assets", *parts)))


def read_asset(name: str) -> str:
    return asset_path(name).read_text()


@dataclass(frozen=True)
class Scenario:
    name: str
    template: PageTemplate
    policy: str
    profile: Any = "data-entry"  # preset name, path, or inline profile object
    url: str | None = None
    policy_params: Mapping[str, Any] = field(default_factory=dict)
    history: str = "compressed"
    trim: str = "off"
    per_action_latency_ticks: int = 4
    bulk_increment_ticks: int = 1
    wait_timeout_ticks: int = 30
    initial_request: str = ""
    session_context: str = "locale: en-US\ntimezone: UTC\n"
    raw_buffer_capacity: int = 45
    summary_capacity: int = 45
    max_steps: int = 200
    routes: Mapping[str, PageTemplate] = field(default_factory=dict)
    prices: PriceTable = PriceTable()
    base_dir: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ScenarioError(f"scenario {self.name!r}: policy must be one of {POLICIES}")
        if self.history not in HISTORY_MODES:
            raise ScenarioError(f"scenario {self.name!r}: history must be one of {HISTORY_MODES}")
        if self.trim not in TRIM_MODES:
            raise ScenarioError(f"scenario {self.name!r}: trim must be one of {TRIM_MODES}")
        if self.per_action_latency_ticks < 1:
            raise ScenarioError("per_action_latency_ticks must be >= 1")

    @property
    def start_url(self) -> str:
        return self.url or DEFAULT_URLS[self.template.name]

    def with_modes(self, **changes) -> Scenario:
        data = self.to_dict()
        data.update({k: v for k, v in changes.items() if v is not None})
        return Scenario.from_dict(data, self.base_dir)

    def resolve_profile(self, override: AgentProfile | None = None) -> AgentProfile:
        if override is not None:
            return override
        ref = self.profile
        try:
            if isinstance(ref, Mapping):
                return profile_from_dict(ref)
            if ref in PRESETS:
                return preset(ref)
            path = Path(ref)
            if not path.is_absolute() and self.base_dir:
                candidate = Path(self.base_dir) / path
                path = candidate if candidate.exists() else path
            if not path.exists():
                path = asset_path("profiles", str(ref))
            return load_profile(path)
        except ProfileError as exc:
            raise ScenarioError(f"scenario {self.name!r}: {exc.message}") from None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "template": self.template.to_dict(),
            "url": self.url,
            "profile": self.profile,
            "policy": self.policy,
            "policy_params": dict(self.policy_params),
            "history": self.history,
            "trim": self.trim,
            "per_action_latency_ticks": self.per_action_latency_ticks,
            "bulk_increment_ticks": self.bulk_increment_ticks,
            "wait_timeout_ticks": self.wait_timeout_ticks,
            "initial_request": self.initial_request,
            "session_context": self.session_context,
            "raw_buffer_capacity": self.raw_buffer_capacity,
            "summary_capacity": self.summary_capacity,
            "max_steps": self.max_steps,
            "routes": {url: t.to_dict() for url, t in self.routes.items()},
            "prices": self.prices.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping, base_dir: str | None = None) -> Scenario:
        try:
            data = dict(data)
            data.pop("description", None)
            data.pop("calibration", None)
            data["template"] = PageTemplate.from_dict(data["template"])
            data["routes"] = {u: PageTemplate.from_dict(t) for u, t in (data.get("routes") or {}).items()}
            if "prices" in data:
                data["prices"] = PriceTable.from_dict(data["prices"])
            return cls(**data, base_dir=base_dir)
        except ScenarioError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ScenarioError(f"invalid scenario: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> Scenario:
        path = Path(path)
        if not path.exists():
            builtin = asset_path("scenarios", path.name)
            if builtin.exists():
                path = builtin
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ScenarioError(f"cannot read scenario {path}: {exc}") from None
        return cls.from_dict(data, str(path.parent))


def builtin_scenarios() -> list[str]:
    return sorted(p.name for p in asset_path("scenarios").glob("*.json"))
