"""Execution kernel for browser agents, with a deterministic virtual web to run it against."""

from agentkernel.actions import TOOL_KINDS, Action, BulkRequest, parse_call
from agentkernel.budget import PriceTable, PromptLayer, TokenLedger, assemble_prompt, compute_cost, estimate_tokens
from agentkernel.context import HistoryLog, TrimDirective, apply_trim, heuristic_trim
from agentkernel.errors import KernelError
from agentkernel.execution import ActionResult, BulkResult, ExecutionLayer
from agentkernel.safety import AgentProfile, SafetyVerdict, check_action, check_navigation, preset
from agentkernel.snapshot import AccessibilitySnapshot, VersionedRef, build_snapshot, serialize_snapshot

__version__ = "0.1.0"

__all__ = [
    "TOOL_KINDS", "AccessibilitySnapshot", "Action", "ActionResult", "AgentProfile", "BulkRequest",
    "BulkResult", "ExecutionLayer", "HistoryLog", "KernelError", "PriceTable", "PromptLayer",
    "SafetyVerdict", "TokenLedger", "TrimDirective", "VersionedRef", "apply_trim", "assemble_prompt",
    "build_snapshot", "check_action", "check_navigation", "compute_cost", "estimate_tokens",
    "heuristic_trim", "parse_call", "preset", "serialize_snapshot",
]
