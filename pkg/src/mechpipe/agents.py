"""Agent definitions, pluggable inference backends, and the structured-output
decode boundary.

An agent is a scope prompt + tool list + append-only memory + backend.  The
backends shipped here are pure: a deterministic rule backend (a registered
python callable) and a replay backend (recorded outputs loaded from fixture
files).  An external model client can be registered with the same interface
but is never required by the test suite.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Sequence

from .ledger import LedgerView

SYNTHETIC_BYTES_PER_TOKEN = 4


# ---------------------------------------------------------------------------
# Structured decode boundary
# ---------------------------------------------------------------------------

DECODE_ERROR_CLASSES = (
    "malformed-syntax",
    "unit-mismatch",
    "out-of-schema-field",
    "missing-required-field",
)


class DecodeError(ValueError):
    """Typed decode failure; `category` is one of DECODE_ERROR_CLASSES and
    `path` names the offending field (empty for document-level failures)."""

    def __init__(self, category: str, path: str, message: str):
        assert category in DECODE_ERROR_CLASSES
        self.category = category
        self.path = path
        super().__init__(f"{category} at {path or '<document>'}: {message}")


# A schema is a mapping field-name -> spec dict with keys:
#   type: "number" | "string" | "list" | "object"
#   unit: expected unit string for numbers carried with a unit tag (optional)
#   required: bool (default True)
_SCHEMAS: dict[str, dict[str, dict]] = {}


def register_schema(schema_id: str, fields: dict[str, dict]) -> None:
    _SCHEMAS[schema_id] = fields


def schema_ids() -> tuple[str, ...]:
    return tuple(_SCHEMAS)


_UNIT_VALUE_RE = re.compile(r"^\s*([-+]?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)\s*([A-Za-z/%°·^0-9]*)\s*$")

_TYPE_CHECKS: dict[str, Callable[[Any], bool]] = {
    "number": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
    "string": lambda v: isinstance(v, str),
    "list": lambda v: isinstance(v, list),
    "object": lambda v: isinstance(v, dict),
}


def _coerce_unit_value(raw: Any, expected_unit: str, path: str) -> float:
    """Accept a bare number (assumed in schema units), a "value unit" string,
    or a {value, unit} pair; reject any other unit with a unit-mismatch."""
    if isinstance(raw, (int, float)) and not isinstance(raw, bool):
        return float(raw)
    if isinstance(raw, str):
        match = _UNIT_VALUE_RE.match(raw)
        if not match:
            raise DecodeError("malformed-syntax", path, f"cannot parse quantity {raw!r}")
        value, unit = float(match.group(1)), match.group(2)
        if unit and unit != expected_unit:
            raise DecodeError(
                "unit-mismatch", path, f"expected {expected_unit!r}, got {unit!r}"
            )
        return value
    if isinstance(raw, dict) and "value" in raw:
        unit = raw.get("unit", expected_unit)
        if unit != expected_unit:
            raise DecodeError(
                "unit-mismatch", path, f"expected {expected_unit!r}, got {unit!r}"
            )
        return _coerce_unit_value(raw["value"], expected_unit, path)
    raise DecodeError("malformed-syntax", path, f"cannot parse quantity {raw!r}")


def decode_structured(raw_output: str | bytes | Mapping[str, Any], schema_id: str) -> dict:
    """Parse and validate agent output against a registered schema.

    Total over arbitrary bytes: every input either yields a validated
    document or raises a classified DecodeError.
    """
    if schema_id not in _SCHEMAS:
        raise KeyError(f"schema {schema_id!r} not registered")
    schema = _SCHEMAS[schema_id]

    if isinstance(raw_output, Mapping):
        doc: Any = dict(raw_output)
    else:
        if isinstance(raw_output, bytes):
            try:
                raw_output = raw_output.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DecodeError("malformed-syntax", "", str(exc)) from exc
        try:
            doc = json.loads(raw_output)
        except json.JSONDecodeError as exc:
            raise DecodeError("malformed-syntax", "", str(exc)) from exc
    if not isinstance(doc, dict):
        raise DecodeError("malformed-syntax", "", "top-level value must be an object")

    for name in doc:
        if name not in schema:
            raise DecodeError("out-of-schema-field", name, "field not in schema")

    out: dict[str, Any] = {}
    for name, spec in schema.items():
        if name not in doc:
            if spec.get("required", True):
                raise DecodeError("missing-required-field", name, "required field absent")
            continue
        value = doc[name]
        expected_type = spec.get("type", "object")
        if expected_type == "number" and "unit" in spec:
            out[name] = _coerce_unit_value(value, spec["unit"], name)
            continue
        if not _TYPE_CHECKS[expected_type](value):
            raise DecodeError(
                "malformed-syntax", name, f"expected {expected_type}, got {type(value).__name__}"
            )
        out[name] = value
    return out


# ---------------------------------------------------------------------------
# Memory
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemoryRule:
    """One remembered lesson: on inputs matching the trigger, prefer the
    recorded value over whatever the backend would produce."""

    rule_id: str
    trigger_description: str
    preferred_value: dict
    provenance: str  # "engineer-correction" | "gate-feedback"
    created_at_cycle: int
    correction_ref: Optional[int] = None  # ledger seq of the Correction record

    def __post_init__(self) -> None:
        if self.provenance not in ("engineer-correction", "gate-feedback"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.provenance == "engineer-correction" and self.correction_ref is None:
            raise ValueError("engineer-correction rules must reference a correction record")


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BackendResult:
    output: dict
    tokens_in: int
    tokens_out: int
    tool_calls: tuple[str, ...] = ()
    usage_kind: str = "synthetic"  # "synthetic" | "recorded"


class AgentBackend:
    """Invocation contract: (prompt, context view, memory, input) -> result."""

    kind = "external-model-client"
    concurrent_safe = False

    def invoke(
        self,
        system_prompt: str,
        context_view: LedgerView,
        memory: Sequence[MemoryRule],
        payload_input: Optional[dict] = None,
    ) -> BackendResult:
        raise NotImplementedError


def _synthetic_usage(output: dict, prompt: str) -> tuple[int, int]:
    tokens_in = max(1, len(prompt.encode()) // SYNTHETIC_BYTES_PER_TOKEN)
    tokens_out = max(1, len(json.dumps(output, sort_keys=True).encode()) // SYNTHETIC_BYTES_PER_TOKEN)
    return tokens_in, tokens_out


def apply_memory_overrides(output: dict, memory: Sequence[MemoryRule]) -> dict:
    """Overlay memory rules onto a structured output.

    Rules carrying {"param": name, "value": v} replace the matching entry in
    an output's `parameters` map.  Later rules win on trigger collision.
    """
    if not memory:
        return output
    out = json.loads(json.dumps(output))  # deep copy, keeps outputs immutable
    params = out.get("parameters")
    for rule in memory:
        target = rule.preferred_value.get("param")
        if target is None:
            continue
        if isinstance(params, dict) and target in params:
            entry = params[target]
            value = rule.preferred_value["value"]
            entry["value"] = value
            entry["band"] = [value, value]
            entry["band_kind"] = "measured"
            entry["density"] = {"family": "none"}
    return out


class DeterministicRuleBackend(AgentBackend):
    """Pure rule backend: output is a function of (context view, memory, input).

    Token usage is synthesized from byte length unless a recorded usage
    profile is supplied (used in replay plans so run statistics reproduce
    the recorded totals).
    """

    kind = "deterministic-rule"
    concurrent_safe = True

    def __init__(
        self,
        rule: Callable[[LedgerView, Sequence[MemoryRule], Optional[dict]], dict],
        recorded_usage: Optional[dict] = None,
    ):
        self._rule = rule
        self._recorded_usage = recorded_usage

    def invoke(self, system_prompt, context_view, memory, payload_input=None) -> BackendResult:
        output = self._rule(context_view, memory, payload_input)
        output = apply_memory_overrides(output, memory)
        if self._recorded_usage is not None:
            return BackendResult(
                output=output,
                tokens_in=self._recorded_usage["tokens_in"],
                tokens_out=self._recorded_usage["tokens_out"],
                tool_calls=tuple(self._recorded_usage.get("tool_calls", ())),
                usage_kind="recorded",
            )
        tokens_in, tokens_out = _synthetic_usage(output, system_prompt)
        return BackendResult(output, tokens_in, tokens_out, usage_kind="synthetic")


class ReplayBackend(AgentBackend):
    """Replays a recorded structured output with its recorded token counts."""

    kind = "replay-fixture"
    concurrent_safe = True

    def __init__(self, fixture: Mapping[str, Any]):
        self._output = dict(fixture["output"])
        usage = fixture.get("usage", {})
        self._tokens_in = int(usage.get("tokens_in", 0))
        self._tokens_out = int(usage.get("tokens_out", 0))
        self._tool_calls = tuple(fixture.get("tool_calls", ()))

    def invoke(self, system_prompt, context_view, memory, payload_input=None) -> BackendResult:
        output = apply_memory_overrides(self._output, memory)
        return BackendResult(
            output=output,
            tokens_in=self._tokens_in,
            tokens_out=self._tokens_out,
            tool_calls=self._tool_calls,
            usage_kind="recorded",
        )


# ---------------------------------------------------------------------------
# Agent definition and invocation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AgentDef:
    agent_id: str
    role: str
    system_prompt: str
    tool_ids: tuple[str, ...] = ()
    memory: tuple[MemoryRule, ...] = ()
    backend: Optional[AgentBackend] = None
    output_schema: Optional[str] = None


def memory_append(agent: AgentDef, rules: Sequence[MemoryRule]) -> AgentDef:
    """Return a new AgentDef with `rules` appended; the input is unchanged."""
    if not rules:
        raise ValueError("memory_append requires at least one rule")
    return replace(agent, memory=agent.memory + tuple(rules))


def memory_filter_cycle(agent: AgentDef, cycle: int) -> AgentDef:
    """Drop all rules created at `cycle` (the evolver's reversibility hook)."""
    kept = tuple(r for r in agent.memory if r.created_at_cycle != cycle)
    return replace(agent, memory=kept)


class BackendFailure(RuntimeError):
    """Retriable backend error."""


def invoke_agent(
    agent: AgentDef,
    context_view: LedgerView,
    payload_input: Optional[dict] = None,
) -> tuple[dict, dict, tuple[str, ...]]:
    """Run an agent's backend and validate its output.

    Returns (output document, usage dict, tool-call trace).  Output is
    validated against the agent's declared schema when one is registered.
    """
    if agent.backend is None:
        raise BackendFailure(f"agent {agent.agent_id!r} has no backend registered")
    result = agent.backend.invoke(agent.system_prompt, context_view, agent.memory, payload_input)
    output = result.output
    if agent.output_schema is not None:
        output = decode_structured(output, agent.output_schema)
    usage = {
        "tokens_in": result.tokens_in,
        "tokens_out": result.tokens_out,
        "usage_kind": result.usage_kind,
    }
    return output, usage, result.tool_calls
