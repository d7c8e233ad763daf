"""Code-compliance assessment and autonomous redesign.

Three limit states are checked: strength (engineering bend stress against
the factored yield allowable), stiffness (tip deflection against a span
ratio), and bearing at the fastener holes.  The strength verdict
distinguishes an engineering failure (stressed past yield) from a merely
code-marginal state (below yield but above the factored allowable), which
is reported as conditional rather than a fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .analysis import AnalysisRun
from .ledger import GateLevel, GateOutcome
from .rounding import fos_display, round_half_up


@dataclass(frozen=True)
class ComplianceLimits:
    yield_strength: float = 200.0  # MPa
    ultimate_strength: float = 340.0  # MPa
    gamma: float = 1.5
    span_ratio: float = 50.0  # deflection limit = L / span_ratio
    arm_length: float = 125.0  # mm

    @property
    def allowable_stress(self) -> float:
        return self.yield_strength / self.gamma

    @property
    def deflection_limit(self) -> float:
        return self.arm_length / self.span_ratio

    def bearing_allowable(self, thickness: float) -> float:
        # code-style bearing resistance 2.5 * f_u * t / gamma, quoted in the
        # same per-hole stress units as the demand
        return 2.5 * self.ultimate_strength * thickness / self.gamma


@dataclass(frozen=True)
class ComplianceCheck:
    name: str  # "strength" | "stiffness" | "bearing"
    value: float
    limit: float
    verdict: str  # "PASS" | "CONDITIONAL" | "FAIL"
    fos: float  # capacity / demand for the governing capacity
    note: str = ""

    @property
    def fos_text(self) -> str:
        return fos_display(self.fos)

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "limit": self.limit,
            "verdict": self.verdict,
            "fos": self.fos,
            "fos_display": self.fos_text,
            "note": self.note,
        }


def _strength_check(stress: float, limits: ComplianceLimits) -> ComplianceCheck:
    fos_yield = limits.yield_strength / stress
    fos_code = limits.allowable_stress / stress
    if fos_code >= 1.0:
        verdict, note = "PASS", ""
    elif fos_yield >= 1.0:
        verdict = "CONDITIONAL"
        note = (
            f"below yield (FoS_y = {fos_display(fos_yield)}) but above the "
            f"gamma = {limits.gamma:g} code allowable "
            f"(FoS_code = {fos_display(fos_code)})"
        )
    else:
        verdict = "FAIL"
        note = f"stressed past yield: FoS = {fos_display(fos_yield)}"
    return ComplianceCheck("strength", stress, limits.allowable_stress, verdict, fos_yield, note)


def _stiffness_check(deflection: float, limits: ComplianceLimits) -> ComplianceCheck:
    limit = limits.deflection_limit
    fos = limit / deflection
    verdict = "PASS" if fos >= 1.0 else "FAIL"
    return ComplianceCheck("stiffness", deflection, limit, verdict, fos)


def _bearing_check(bearing_stress: float, thickness: float, limits: ComplianceLimits) -> ComplianceCheck:
    allowable = limits.bearing_allowable(thickness)
    fos = allowable / bearing_stress
    verdict = "PASS" if fos >= 1.0 else "FAIL"
    return ComplianceCheck("bearing", bearing_stress, allowable, verdict, fos)


def compliance_assess(
    run: AnalysisRun,
    limits: ComplianceLimits,
    bearing_stress: Optional[float] = None,
) -> list[ComplianceCheck]:
    """Assess one run against the strength, stiffness and (when a bearing
    stress is supplied) bearing limit states."""
    checks = [
        _strength_check(run.engineering_bend_stress, limits),
        _stiffness_check(run.max_deflection, limits),
    ]
    if bearing_stress is not None:
        checks.append(_bearing_check(bearing_stress, run.spec.thickness, limits))
    return checks


def compliance_gate(checks: Sequence[ComplianceCheck]) -> GateOutcome:
    """Gate 4 summarises the check set: any FAIL dominates, then any
    CONDITIONAL.  An engineering FAIL is a valid verdict, not a protocol
    violation; the gate itself still reports at the conditional level when
    the pipeline executed correctly but the design is inadequate."""
    verdicts = [c.verdict for c in checks]
    warnings = tuple(
        f"{c.name}: {c.value:g} vs limit {c.limit:g} -> {c.verdict}"
        + (f" ({c.note})" if c.note else "")
        for c in checks
        if c.verdict != "PASS"
    )
    if "FAIL" in verdicts or "CONDITIONAL" in verdicts:
        level = GateLevel.CONDITIONAL
    else:
        level = GateLevel.PASS
    diagnosis = {"checks": [c.to_doc() for c in checks]}
    return GateOutcome("G4-compliance", level, warnings, diagnosis)


# ---------------------------------------------------------------------------
# Maximum safe load
# ---------------------------------------------------------------------------


def max_safe_load(
    applied_load: float,
    checks: Sequence[ComplianceCheck],
    consider: Sequence[str] = ("strength", "stiffness"),
) -> tuple[float, str]:
    """Linear scaling: each limit state caps the load at P * limit / value;
    the governing state is the minimum.  Returns (load, governing name)."""
    candidates = [(applied_load * c.limit / c.value, c.name) for c in checks if c.name in consider]
    if not candidates:
        raise ValueError("no limit states to scale against")
    return min(candidates)


# ---------------------------------------------------------------------------
# Redesign proposals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RedesignProposal:
    label: str
    parameter: str
    new_value: float
    stress_multiplier: float  # predicted gross-section stress ratio (new/old)
    deflection_multiplier: float
    rationale: str

    def to_doc(self) -> dict:
        return {
            "label": self.label,
            "parameter": self.parameter,
            "new_value": self.new_value,
            "stress_multiplier": self.stress_multiplier,
            "deflection_multiplier": self.deflection_multiplier,
            "rationale": self.rationale,
        }


def propose_redesign(
    current_thickness: float, candidate_thicknesses: Sequence[float] = (4.0, 5.0)
) -> list[RedesignProposal]:
    """Thickness is the top redesign lever: gross-section bend stress scales
    as 1/t^2 and deflection as 1/t^3.  The predicted multipliers here are
    gross-section quantities; a solver-reported local peak at a fillet also
    carries a stress-concentration change with t and is never compared
    against these numbers directly."""
    from .mechanics import scaling_predict

    proposals = []
    for t_new in candidate_thicknesses:
        stress_ratio, defl_ratio = scaling_predict(current_thickness, t_new)
        proposals.append(
            RedesignProposal(
                label=f"thicken-to-{t_new:g}mm",
                parameter="thickness",
                new_value=t_new,
                stress_multiplier=1.0 / stress_ratio,
                deflection_multiplier=1.0 / defl_ratio,
                rationale=(
                    f"t = {t_new:g} mm cuts gross bend stress to "
                    f"{1.0 / stress_ratio:.0%} and deflection to "
                    f"{1.0 / defl_ratio:.0%} of baseline"
                ),
            )
        )
    proposals.append(
        RedesignProposal(
            label="diagonal-gusset",
            parameter="topology",
            new_value=0.0,
            stress_multiplier=0.1,
            deflection_multiplier=0.1,
            rationale="triangulating the arms moves the load path from bending to axial",
        )
    )
    proposals.append(
        RedesignProposal(
            label="derate-to-light-duty",
            parameter="rated_load",
            new_value=0.0,
            stress_multiplier=1.0,
            deflection_multiplier=1.0,
            rationale="keep the geometry and reclassify for the stiffness-governed safe load",
        )
    )
    return proposals


@dataclass
class RedesignResult:
    proposal: RedesignProposal
    runs: list[AnalysisRun]
    checks_by_run: dict[str, list[ComplianceCheck]]
    verdict: str  # worst verdict across checked runs
    iterations_used: int


def redesign_iterate(
    proposals: Sequence[RedesignProposal],
    execute,  # callable(proposal) -> (runs, checks_by_run)
    budget: int = 1,
) -> list[RedesignResult]:
    """Execute the most promising proposals in order, bounded by the
    iteration budget.  The loop stops early on a full PASS."""
    if budget < 0:
        raise ValueError("redesign budget must be non-negative")
    order = {"PASS": 0, "CONDITIONAL": 1, "FAIL": 2}
    results: list[RedesignResult] = []
    for i, proposal in enumerate(proposals[:budget], start=1):
        runs, checks_by_run = execute(proposal)
        worst = max(
            (c.verdict for checks in checks_by_run.values() for c in checks),
            key=order.__getitem__,
            default="PASS",
        )
        results.append(RedesignResult(proposal, list(runs), dict(checks_by_run), worst, i))
        if worst == "PASS":
            break
    return results
