"""Task-dependent conservatism: direction-tagged limit states, conservative
envelopes over discrete variant sets, factor-of-safety ranges, and
simultaneous adequacy.

Which bound of an uncertain response is "safe" depends on the limit state:
stress-like responses trigger failure when large (envelope = max), capacity-
like responses when small (envelope = min).  Under displacement control the
direction reverses, which is why the direction is data, not convention.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable, Mapping, Optional, Sequence

from .rounding import fos_display


class Direction(Enum):
    TRIGGERED_BY_LARGE = "triggered-by-large"
    TRIGGERED_BY_SMALL = "triggered-by-small"


class LoadingType(Enum):
    LOAD_CONTROLLED = "load-controlled"
    DISPLACEMENT_CONTROLLED = "displacement-controlled"


# Direction table per (limit-state class, loading type).  The displacement-
# controlled column follows the reversal rule; no numeric fixture exists for
# it, so it is exercised by property tests only.
DIRECTION_TABLE: dict[tuple[str, LoadingType], Direction] = {
    ("demand", LoadingType.LOAD_CONTROLLED): Direction.TRIGGERED_BY_LARGE,
    ("demand", LoadingType.DISPLACEMENT_CONTROLLED): Direction.TRIGGERED_BY_SMALL,
    ("capacity", LoadingType.LOAD_CONTROLLED): Direction.TRIGGERED_BY_SMALL,
    ("capacity", LoadingType.DISPLACEMENT_CONTROLLED): Direction.TRIGGERED_BY_LARGE,
}


@dataclass(frozen=True)
class LimitState:
    limit_id: str  # e.g. "strength-ULS", "stiffness-SLS", "bearing"
    response_key: str  # which scalar of an analysis run this reads
    direction: Direction
    capacity: float
    capacity_expression: str = ""
    loading_type: LoadingType = LoadingType.LOAD_CONTROLLED


@dataclass(frozen=True)
class VariantSet:
    """The discrete exploration of the uncertain parameter set: one entry per
    analysis run, each a mapping of response scalars plus a run id."""

    runs: tuple[Mapping, ...]

    def __post_init__(self) -> None:
        if not self.runs:
            raise ValueError("variant set must be non-empty")

    def responses(self, key: str) -> list[tuple[str, float]]:
        out = []
        for run in self.runs:
            if key not in run:
                raise KeyError(f"run {run.get('run_id', '?')} lacks response {key!r}")
            out.append((run.get("run_id", "?"), float(run[key])))
        return out


@dataclass(frozen=True)
class ConservativeEnvelope:
    limit_id: str
    value: float
    governing_runs: tuple[str, ...]
    fos_min: float
    fos_max: float

    def to_doc(self) -> dict:
        return {
            "limit_id": self.limit_id,
            "value": self.value,
            "governing_runs": list(self.governing_runs),
            "fos_min": self.fos_min,
            "fos_max": self.fos_max,
        }


def envelope(variants: VariantSet, limit_state: LimitState) -> ConservativeEnvelope:
    """Max (or min, per direction) of the limit state's response over the
    variant set; ties report all governing run ids."""
    pairs = variants.responses(limit_state.response_key)
    values = [v for _, v in pairs]
    pick = max(values) if limit_state.direction is Direction.TRIGGERED_BY_LARGE else min(values)
    governing = tuple(run_id for run_id, v in pairs if v == pick)
    fos_min, fos_max, _ = fos_range(variants, limit_state.capacity, limit_state)
    return ConservativeEnvelope(
        limit_id=limit_state.limit_id,
        value=pick,
        governing_runs=governing,
        fos_min=fos_min,
        fos_max=fos_max,
    )


def fos_range(
    variants: VariantSet, capacity: float, limit_state: LimitState
) -> tuple[float, float, list[tuple[str, float]]]:
    """Per-run factors of safety and their min/max.

    For demand-type (triggered-by-large) states FoS_i = capacity/response_i;
    for capacity-type states FoS_i = response_i/capacity (the response itself
    is the capacity-like quantity, e.g. a buckling load vs applied load).
    """
    if capacity <= 0:
        raise ValueError("capacity must be positive")
    per_run: list[tuple[str, float]] = []
    for run_id, response in variants.responses(limit_state.response_key):
        if response <= 0:
            raise ValueError(f"run {run_id}: non-positive response {response}")
        if limit_state.direction is Direction.TRIGGERED_BY_LARGE:
            per_run.append((run_id, capacity / response))
        else:
            per_run.append((run_id, response / capacity))
    values = [f for _, f in per_run]
    return min(values), max(values), per_run


VERDICTS = ("PASS", "CONDITIONAL", "FAIL")


@dataclass(frozen=True)
class CheckResult:
    limit_id: str
    verdict: str  # PASS | CONDITIONAL | FAIL
    note: str = ""

    def __post_init__(self) -> None:
        if self.verdict not in VERDICTS:
            raise ValueError(f"unknown verdict {self.verdict!r}")


def simultaneous_adequacy(checks: Sequence[CheckResult]) -> str:
    """Adequacy requires every limit state simultaneously: any FAIL fails;
    otherwise any CONDITIONAL keeps the verdict conditional; all PASS passes."""
    if not checks:
        raise ValueError("no checks supplied")
    verdicts = {c.verdict for c in checks}
    if "FAIL" in verdicts:
        return "FAIL"
    if "CONDITIONAL" in verdicts:
        return "CONDITIONAL"
    return "PASS"


def check_against_limit(
    limit_id: str,
    demand: float,
    limit: float,
    direction: Direction = Direction.TRIGGERED_BY_LARGE,
    conditional_when: Optional[Callable[[float, float], bool]] = None,
) -> CheckResult:
    """Single limit-state check with an optional marginal-band rule.

    `conditional_when(demand, limit)` may reclassify a hard violation as
    CONDITIONAL (e.g. FoS against unfactored yield >= 1 while the factored
    code allowable is marginally exceeded).
    """
    if direction is Direction.TRIGGERED_BY_LARGE:
        violated = demand > limit
    else:
        violated = demand < limit
    if not violated:
        return CheckResult(limit_id, "PASS")
    if conditional_when is not None and conditional_when(demand, limit):
        return CheckResult(limit_id, "CONDITIONAL", note="marginal against factored limit")
    return CheckResult(limit_id, "FAIL")
