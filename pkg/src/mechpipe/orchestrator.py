"""Pipeline assembly and dispatch: stage ordering, gate-retry control with a
bounded budget, feedback routing, cost accounting, and run statistics
recounted from the ledger trace.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from .agents import BackendFailure, DecodeError
from .ledger import (
    ContextLedger,
    GATE_IDS,
    GateLevel,
    GateOutcome,
    Verdict,
    pipeline_verdict,
)


@dataclass(frozen=True)
class PlanStage:
    agent_id: str
    role: str
    gates: tuple[str, ...] = ()


@dataclass(frozen=True)
class PipelinePlan:
    stages: tuple[PlanStage, ...]
    n_max: int = 5
    redesign_budget: int = 1

    def __post_init__(self) -> None:
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")
        if self.redesign_budget < 0:
            raise ValueError("redesign budget must be non-negative")
        seen: set[str] = set()
        for stage in self.stages:
            for gate in stage.gates:
                if gate not in GATE_IDS:
                    raise ValueError(f"unknown gate {gate!r}")
                if gate in seen:
                    raise ValueError(f"gate {gate!r} appears more than once in the plan")
                seen.add(gate)

    @classmethod
    def from_doc(cls, doc: Mapping) -> "PipelinePlan":
        stages = tuple(
            PlanStage(s["agent_id"], s["role"], tuple(s.get("gates", ())))
            for s in doc["stages"]
        )
        return cls(stages, doc.get("n_max", 5), doc.get("redesign_budget", 1))

    @classmethod
    def load(cls, path: str | Path) -> "PipelinePlan":
        return cls.from_doc(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CostModel:
    label: str
    price_in: float  # currency per token
    price_out: float
    tool_costs: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.price_in < 0 or self.price_out < 0 or any(
            v < 0 for v in self.tool_costs.values()
        ):
            raise ValueError("prices must be non-negative")


PRICE_PROFILES = {
    "opus": CostModel("opus", 5.0e-6, 25.0e-6),
    "sonnet": CostModel("sonnet", 3.0e-6, 15.0e-6),
}


def parse_price_profile(text: str) -> CostModel:
    """'opus' | 'sonnet' | 'custom:IN,OUT' with IN/OUT in currency per
    million tokens."""
    if text in PRICE_PROFILES:
        return PRICE_PROFILES[text]
    if text.startswith("custom:"):
        try:
            p_in, p_out = (float(x) for x in text.removeprefix("custom:").split(","))
        except ValueError as exc:
            raise ValueError(f"malformed custom price profile {text!r}") from exc
        return CostModel(text, p_in * 1e-6, p_out * 1e-6)
    raise ValueError(f"unknown price profile {text!r}")


def estimate_cost(usage: Mapping, model: CostModel) -> float:
    """Linear cost: tokens_in * price_in + tokens_out * price_out plus any
    per-tool costs for the recorded tool-use counts."""
    tokens_in = usage.get("tokens_in", 0)
    tokens_out = usage.get("tokens_out", 0)
    if tokens_in < 0 or tokens_out < 0:
        raise ValueError("token totals must be non-negative")
    amount = tokens_in * model.price_in + tokens_out * model.price_out
    for tool_id, count in usage.get("tool_use", {}).items():
        amount += model.tool_costs.get(tool_id, 0.0) * count
    return amount


# ---------------------------------------------------------------------------
# Run statistics (recounted from the ledger)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RunStatistics:
    wall_clock_s: float
    agents_invoked: int
    tool_calls: int
    tokens_in: int
    tokens_out: int
    files_generated: int
    gate_iterations: Mapping[str, int]
    costs: Mapping[str, float]

    @property
    def total_tokens(self) -> int:
        return self.tokens_in + self.tokens_out

    def to_doc(self) -> dict:
        return {
            "wall_clock_s": self.wall_clock_s,
            "agents_invoked": self.agents_invoked,
            "tool_calls": self.tool_calls,
            "tokens_in": self.tokens_in,
            "tokens_out": self.tokens_out,
            "total_tokens": self.total_tokens,
            "files_generated": self.files_generated,
            "gate_iterations": dict(self.gate_iterations),
            "costs": dict(self.costs),
        }


def statistics_from_ledger(
    ledger: ContextLedger, price_models: Sequence[CostModel] = ()
) -> RunStatistics:
    traces = [r.payload for r in ledger.records() if r.kind == "trace"]
    gate_iterations: dict[str, int] = {}
    for record in ledger.records():
        if record.kind == "gate-outcome":
            gate = record.payload["gate_id"]
            gate_iterations[gate] = gate_iterations.get(gate, 0) + 1
    tokens_in = sum(t["tokens_in"] for t in traces)
    tokens_out = sum(t["tokens_out"] for t in traces)
    usage = {"tokens_in": tokens_in, "tokens_out": tokens_out}
    models = list(price_models) or list(PRICE_PROFILES.values())
    return RunStatistics(
        wall_clock_s=sum(t.get("duration_s", 0) for t in traces),
        agents_invoked=len(traces),
        tool_calls=sum(t.get("tool_calls", 0) for t in traces),
        tokens_in=tokens_in,
        tokens_out=tokens_out,
        files_generated=sum(t.get("files_produced", 0) for t in traces),
        gate_iterations=gate_iterations,
        costs={m.label: estimate_cost(usage, m) for m in models},
    )


# ---------------------------------------------------------------------------
# Feedback routing and dispatch
# ---------------------------------------------------------------------------


class NextAction(Enum):
    REINVOKE = "reinvoke"
    PROCEED = "proceed"
    ESCALATE = "escalate"


def route_feedback(outcome: GateOutcome, reinvocations_used: int, n_max: int) -> NextAction:
    """Reject re-invokes the authoring stage while budget remains, then
    escalates; conditional proceeds with its warning persisted; pass
    proceeds."""
    if outcome.level is not GateLevel.REJECT:
        return NextAction.PROCEED
    if reinvocations_used < n_max:
        return NextAction.REINVOKE
    return NextAction.ESCALATE


class EscalationHalt(RuntimeError):
    def __init__(self, stage: PlanStage, diagnosis: str):
        self.stage = stage
        self.diagnosis = diagnosis
        super().__init__(f"stage {stage.agent_id} escalated: {diagnosis}")


@dataclass
class PipelineState:
    ledger: ContextLedger
    clock_s: float = 0.0
    extra: dict = field(default_factory=dict)


@dataclass
class PipelineResult:
    verdict: Verdict
    gate_outcomes: list[GateOutcome]
    state: PipelineState
    escalated: bool = False


StageHandler = Callable[[str, str, PipelineState], object]


def execute_pipeline(
    plan: PipelinePlan,
    handlers,
    ledger: Optional[ContextLedger] = None,
) -> PipelineResult:
    """Run the plan's stages in order with gate-retry control.

    `handlers` exposes handle(agent_id, role, state) -> StageResult.  A
    rejecting gate (or a decode/backend failure, which is treated as a
    reject) triggers corrective feedback and re-invocation of the same
    stage, up to n_max re-invocations, after which a single escalation
    record is appended and the run halts as rejected.
    """
    state = PipelineState(ledger=ledger if ledger is not None else ContextLedger())
    all_outcomes: list[GateOutcome] = []

    for stage in plan.stages:
        reinvocations = 0
        while True:
            try:
                result = handlers.handle(stage.agent_id, stage.role, state)
                outcomes = list(result.gates)
            except (DecodeError, BackendFailure) as exc:
                diagnosis = str(exc)
                if route_feedback(
                    _synthetic_reject(stage, diagnosis), reinvocations, plan.n_max
                ) is NextAction.ESCALATE:
                    _append_escalation(state, stage, diagnosis, reinvocations)
                    return PipelineResult(Verdict.REJECTED, all_outcomes, state, escalated=True)
                reinvocations += 1
                _append_corrective(state, stage, diagnosis)
                continue

            for outcome in outcomes:
                state.ledger.append(
                    stage.agent_id, "gate-outcome", outcome.to_payload(), timestamp=state.clock_s
                )

            rejects = [o for o in outcomes if o.level is GateLevel.REJECT]
            conditionals = [o for o in outcomes if o.level is GateLevel.CONDITIONAL]
            for outcome in conditionals:
                state.ledger.append(
                    stage.agent_id,
                    "warning",
                    {
                        "type": "conditional-gate",
                        "gate": outcome.gate_id,
                        "warnings": list(outcome.warnings),
                    },
                    timestamp=state.clock_s,
                )
            all_outcomes.extend(outcomes)
            if not rejects:
                break
            diagnosis = "; ".join(w for o in rejects for w in o.warnings) or rejects[0].gate_id
            if route_feedback(rejects[0], reinvocations, plan.n_max) is NextAction.ESCALATE:
                _append_escalation(state, stage, diagnosis, reinvocations)
                return PipelineResult(Verdict.REJECTED, all_outcomes, state, escalated=True)
            reinvocations += 1
            _append_corrective(state, stage, diagnosis)

    if all_outcomes:
        verdict = pipeline_verdict(all_outcomes)
    else:
        verdict = Verdict.UNCONDITIONAL_SUCCESS
    return PipelineResult(verdict, all_outcomes, state)


def _synthetic_reject(stage: PlanStage, diagnosis: str) -> GateOutcome:
    gate_id = stage.gates[0] if stage.gates else GATE_IDS[0]
    return GateOutcome(gate_id, GateLevel.REJECT, (diagnosis,))


def _append_corrective(state: PipelineState, stage: PlanStage, diagnosis: str) -> None:
    state.ledger.append(
        "orchestrator",
        "warning",
        {
            "type": "corrective-feedback",
            "stage": stage.agent_id,
            "role": stage.role,
            "diagnosis": diagnosis,
        },
        timestamp=state.clock_s,
    )


def _append_escalation(
    state: PipelineState, stage: PlanStage, diagnosis: str, reinvocations: int
) -> None:
    state.ledger.append(
        "orchestrator",
        "escalation",
        {
            "stage": stage.agent_id,
            "role": stage.role,
            "diagnosis": diagnosis,
            "reinvocations": reinvocations,
        },
        timestamp=state.clock_s,
    )
