"""Single-cycle engineer-feedback evolver.

Corrections supplied by the reviewing engineer become one memory rule each
on the target agent; recurring themes across correction notes become a
prompt amendment appended as a structured trailer.  No backend is retrained
and the whole operation is reversible by filtering out the cycle's rules.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .agents import AgentDef, MemoryRule, memory_append, memory_filter_cycle
from .ledger import ContextLedger

CORRECTION_SOURCES = ("physical-measurement", "judgement")
THEME_RECURRENCE_MIN = 2

AMENDMENT_HEADER = "[amendment cycle {cycle}]"

# theme = the residual-direction keyword the engineer used in the note
_THEME_RE = re.compile(r"\b(under-estimated|over-estimated)\b")


class EvolveRefused(RuntimeError):
    """Second cycle attempted without new engineer input (single-cycle scope)."""


class DanglingReference(ValueError):
    """A correction points at a ledger record that does not exist."""


@dataclass(frozen=True)
class Correction:
    target_agent: str
    param: str
    true_value: float
    note: str
    source: str
    record_ref: Optional[int] = None

    def __post_init__(self) -> None:
        if self.source not in CORRECTION_SOURCES:
            raise ValueError(f"unknown correction source {self.source!r}")


@dataclass(frozen=True)
class PromptAmendment:
    agent_id: str
    instruction: str
    theme: str
    members: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.members) < THEME_RECURRENCE_MIN:
            raise ValueError("amendments require a recurring theme (>= 2 corrections)")


def rule_to_doc(rule: MemoryRule) -> dict:
    return {
        "rule_id": rule.rule_id,
        "trigger_description": rule.trigger_description,
        "preferred_value": dict(rule.preferred_value),
        "provenance": rule.provenance,
        "created_at_cycle": rule.created_at_cycle,
        "correction_ref": rule.correction_ref,
    }


def rule_from_doc(doc: Mapping) -> MemoryRule:
    return MemoryRule(
        rule_id=doc["rule_id"],
        trigger_description=doc["trigger_description"],
        preferred_value=dict(doc["preferred_value"]),
        provenance=doc["provenance"],
        created_at_cycle=doc["created_at_cycle"],
        correction_ref=doc.get("correction_ref"),
    )


def load_corrections(path: str | Path) -> list[Correction]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [
        Correction(
            target_agent=c["target_agent"],
            param=c["param"],
            true_value=c["true_value"],
            note=c.get("note", ""),
            source=c.get("source", "judgement"),
            record_ref=c.get("record_ref"),
        )
        for c in doc["corrections"]
    ]


def _resolve_refs(corrections: Sequence[Correction], ledger: ContextLedger) -> list[Correction]:
    """Pin each correction to the extraction record that produced the
    estimate it corrects; explicit out-of-range references are an error."""
    extraction_seq = None
    for record in ledger.records():
        if record.kind == "extraction":
            extraction_seq = record.seq
    resolved = []
    for c in corrections:
        ref = c.record_ref
        if ref is None:
            ref = extraction_seq
        if ref is None or ref >= len(ledger):
            raise DanglingReference(f"correction {c.param!r} references missing record {ref}")
        resolved.append(Correction(c.target_agent, c.param, c.true_value, c.note, c.source, ref))
    return resolved


def detect_themes(corrections: Sequence[Correction]) -> dict[tuple[str, str], list[Correction]]:
    """Group corrections by (agent, note keyword); deterministic, no model
    inference."""
    groups: dict[tuple[str, str], list[Correction]] = {}
    for c in corrections:
        match = _THEME_RE.search(c.note)
        if match:
            groups.setdefault((c.target_agent, match.group(1)), []).append(c)
    return groups


def apply_feedback(
    corrections: Sequence[Correction],
    agents: Mapping[str, AgentDef],
    ledger: ContextLedger,
    cycle: int = 1,
) -> tuple[dict[str, AgentDef], list[PromptAmendment], dict]:
    """One memory rule per correction plus one amendment per recurring theme.

    Refuses to run when the target agents already carry rules for this cycle
    covering the same parameters (the single-cycle scope rule).
    """
    updated = dict(agents)
    if not corrections:
        return updated, [], {"rules": 0, "amendments": 0}
    corrections = _resolve_refs(corrections, ledger)

    for c in corrections:
        agent = agents.get(c.target_agent)
        if agent is None:
            raise KeyError(f"correction targets unknown agent {c.target_agent!r}")
        for rule in agent.memory:
            if (
                rule.provenance == "engineer-correction"
                and rule.preferred_value.get("param") == c.param
            ):
                raise EvolveRefused(
                    f"agent {c.target_agent!r} already evolved for {c.param!r}; "
                    "a further cycle requires new engineer input"
                )

    rules_by_agent: dict[str, list[MemoryRule]] = {}
    for c in corrections:
        rules_by_agent.setdefault(c.target_agent, []).append(
            MemoryRule(
                rule_id=f"cycle{cycle}-{c.param}",
                trigger_description=(
                    f"for inputs resembling this one, prefer {c.true_value!r} over the "
                    f"extracted {c.param}"
                ),
                preferred_value={"param": c.param, "value": c.true_value},
                provenance="engineer-correction",
                created_at_cycle=cycle,
                correction_ref=c.record_ref,
            )
        )

    amendments: list[PromptAmendment] = []
    for (agent_id, theme), members in sorted(detect_themes(corrections).items()):
        if len(members) < THEME_RECURRENCE_MIN:
            continue
        names = ", ".join(c.param for c in members)
        amendments.append(
            PromptAmendment(
                agent_id=agent_id,
                instruction=(
                    f"Across corrections, length-like quantities were {theme} "
                    f"({names}); re-examine the scale reference before committing "
                    "such estimates."
                ),
                theme=theme,
                members=tuple(c.param for c in members),
            )
        )

    for agent_id, rules in rules_by_agent.items():
        updated[agent_id] = memory_append(updated[agent_id], rules)
    for amendment in amendments:
        agent = updated[amendment.agent_id]
        trailer = (
            f"\n\n{AMENDMENT_HEADER.format(cycle=cycle)} {amendment.instruction}"
        )
        updated[amendment.agent_id] = AgentDef(
            agent_id=agent.agent_id,
            role=agent.role,
            system_prompt=agent.system_prompt + trailer,
            tool_ids=agent.tool_ids,
            memory=agent.memory,
            backend=agent.backend,
            output_schema=agent.output_schema,
        )

    summary = {
        "rules": sum(len(v) for v in rules_by_agent.values()),
        "amendments": len(amendments),
        "cycle": cycle,
    }
    return updated, amendments, summary


def revert_cycle(agents: Mapping[str, AgentDef], cycle: int) -> dict[str, AgentDef]:
    """Drop the cycle's rules and prompt trailers, restoring prior behavior."""
    header = AMENDMENT_HEADER.format(cycle=cycle)
    out = {}
    for agent_id, agent in agents.items():
        agent = memory_filter_cycle(agent, cycle)
        prompt = agent.system_prompt
        if header in prompt:
            prompt = prompt.split(f"\n\n{header}")[0]
            agent = AgentDef(
                agent_id=agent.agent_id,
                role=agent.role,
                system_prompt=prompt,
                tool_ids=agent.tool_ids,
                memory=agent.memory,
                backend=agent.backend,
                output_schema=agent.output_schema,
            )
        out[agent_id] = agent
    return out


# ---------------------------------------------------------------------------
# Corrected replay
# ---------------------------------------------------------------------------


def extraction_diff(before: Mapping, after: Mapping) -> dict:
    """Parameter-level diff between two extraction records."""
    diff: dict[str, dict] = {}
    params_before = before["parameters"]
    params_after = after["parameters"]
    for name in params_after:
        old = params_before.get(name, {}).get("value")
        new = params_after[name]["value"]
        if old != new:
            diff[name] = {"before": old, "after": new}
    derived = {
        "mass_g_exact": {
            "before": before["derived"]["mass_g_exact"],
            "after": after["derived"]["mass_g_exact"],
        },
        "self_weight_N_exact": {
            "before": before["derived"]["self_weight_N_exact"],
            "after": after["derived"]["self_weight_N_exact"],
        },
    }
    return {"parameters": diff, "derived": derived}


def diff_text(diff: Mapping) -> str:
    lines = ["corrected-replay diff:"]
    for name, entry in diff["parameters"].items():
        lines.append(f"  {name}: {entry['before']:g} -> {entry['after']:g}")
    for name, entry in diff["derived"].items():
        lines.append(f"  {name}: {entry['before']:.4g} -> {entry['after']:.4g}")
    return "\n".join(lines)
