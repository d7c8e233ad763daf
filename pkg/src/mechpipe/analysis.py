"""Solver-execution boundary: run-matrix assembly, execution against a
backend (recorded fixtures or the analytic reduced solver), and the
convergence (G2) and analytical-bound (G3) gates over the results.

No actual solver runs here: fixture results are replayed verbatim, and the
analytic backend evaluates the beam-theory closed forms.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import mechanics
from .ledger import GateLevel, GateOutcome

BC_VARIANTS = ("nominal", "stiff", "flexible")
MESH_VARIANTS = ("fine", "coarse", "redesign")


@dataclass(frozen=True)
class RunSpec:
    run_id: str
    bc_variant: str
    load_case: str
    load_factor: float = 1.0
    e_modulus: float = 200000.0  # MPa
    yield_strength: float = 200.0  # MPa
    mesh_variant: str = "fine"
    thickness: float = 2.5  # mm
    cons_for: str = ""

    def __post_init__(self) -> None:
        if self.bc_variant not in BC_VARIANTS:
            raise ValueError(f"unknown BC variant {self.bc_variant!r}")
        if self.mesh_variant not in MESH_VARIANTS:
            raise ValueError(f"unknown mesh variant {self.mesh_variant!r}")

    def to_doc(self) -> dict:
        return {
            "run_id": self.run_id,
            "bc_variant": self.bc_variant,
            "load_case": self.load_case,
            "load_factor": self.load_factor,
            "e_modulus": self.e_modulus,
            "yield_strength": self.yield_strength,
            "mesh_variant": self.mesh_variant,
            "thickness": self.thickness,
            "cons_for": self.cons_for,
        }


@dataclass(frozen=True)
class AnalysisRun:
    spec: RunSpec
    peak_vm_stress: float  # MPa
    engineering_bend_stress: float  # MPa
    max_deflection: float  # mm
    singularity_flag: bool = False
    peak_location: str = ""
    provenance: str = "fixture"  # "fixture" | "analytic"
    mesh_nodes: Optional[int] = None
    mesh_elements: Optional[int] = None

    def __post_init__(self) -> None:
        if min(self.peak_vm_stress, self.engineering_bend_stress, self.max_deflection) < 0:
            raise ValueError("responses must be non-negative")
        if self.provenance == "fixture" and self.mesh_nodes is None:
            raise ValueError("fixture runs must carry mesh node/element counts")

    def to_doc(self) -> dict:
        return {
            "spec": self.spec.to_doc(),
            "peak_vm_stress": self.peak_vm_stress,
            "engineering_bend_stress": self.engineering_bend_stress,
            "max_deflection": self.max_deflection,
            "singularity_flag": self.singularity_flag,
            "peak_location": self.peak_location,
            "provenance": self.provenance,
            "mesh_nodes": self.mesh_nodes,
            "mesh_elements": self.mesh_elements,
        }


# ---------------------------------------------------------------------------
# Matrix assembly
# ---------------------------------------------------------------------------


def build_matrix(
    bc_variants: Sequence[str],
    load_cases: Sequence[str],
    sensitivity_variants: Sequence[Mapping] = (),
    thickness: float = 2.5,
    id_prefix: str = "R",
    id_suffix: str = "",
) -> list[RunSpec]:
    """Baseline grid plus tagged sensitivity rows.

    The baseline run is (first BC, first load case); the remaining BC
    variants and load cases are swept one factor at a time; sensitivity
    variants then modify the baseline run.  The L-bracket configuration,
    3 BCs x 2 load cases + 3 sensitivities, yields exactly 7 specs.
    """
    if not bc_variants or not load_cases:
        raise ValueError("need at least one BC variant and one load case")
    specs: list[RunSpec] = []

    def next_id() -> str:
        return f"{id_prefix}{len(specs) + 1}{id_suffix}"

    base_bc, base_lc = bc_variants[0], load_cases[0]
    specs.append(
        RunSpec(next_id(), base_bc, base_lc, thickness=thickness, cons_for="Baseline")
    )
    for bc in bc_variants[1:]:
        cons = "Stiffness" if bc == "flexible" else ""
        specs.append(RunSpec(next_id(), bc, base_lc, thickness=thickness, cons_for=cons))
    for lc in load_cases[1:]:
        specs.append(
            RunSpec(next_id(), base_bc, lc, thickness=thickness, cons_for="Strength")
        )
    for variant in sensitivity_variants:
        specs.append(
            RunSpec(
                next_id(),
                base_bc,
                base_lc,
                load_factor=variant.get("load_factor", 1.0),
                e_modulus=variant.get("e_modulus", 200000.0),
                mesh_variant=variant.get("mesh_variant", "fine"),
                thickness=thickness,
                cons_for=variant.get("cons_for", ""),
            )
        )
    return specs


def redesign_matrix(
    base_specs: Sequence[RunSpec], run_ids: Sequence[str], thickness: float, suffix: str = "_rd"
) -> list[RunSpec]:
    """Re-execute selected baseline specs at a new thickness, keeping their
    identities (R1 -> R1_rd, ...)."""
    by_id = {s.run_id: s for s in base_specs}
    out = []
    for run_id in run_ids:
        base = by_id[run_id]
        out.append(
            replace(base, run_id=base.run_id + suffix, thickness=thickness, mesh_variant="redesign")
        )
    return out


# ---------------------------------------------------------------------------
# Execution backends
# ---------------------------------------------------------------------------


class FixtureMissing(KeyError):
    pass


class FixtureRunBackend:
    """Returns recorded run results verbatim."""

    def __init__(self, results: Mapping[str, Mapping] | str | Path):
        if isinstance(results, (str, Path)):
            results = json.loads(Path(results).read_text(encoding="utf-8"))
        self._results = dict(results)

    def execute(self, spec: RunSpec) -> AnalysisRun:
        if spec.run_id not in self._results:
            raise FixtureMissing(f"no recorded result for run {spec.run_id!r}")
        doc = self._results[spec.run_id]
        return AnalysisRun(
            spec=spec,
            peak_vm_stress=doc["peak_vm_stress"],
            engineering_bend_stress=doc["engineering_bend_stress"],
            max_deflection=doc["max_deflection"],
            singularity_flag=doc.get("singularity_flag", False),
            peak_location=doc.get("peak_location", ""),
            provenance="fixture",
            mesh_nodes=doc.get("mesh_nodes"),
            mesh_elements=doc.get("mesh_elements"),
        )


class AnalyticRunBackend:
    """Reduced solver: beam-theory closed forms from the mechanics oracle.

    Engineering and peak stress coincide (no mesh, no singularity)."""

    def __init__(self, geometry: Mapping[str, float], load_cases: Mapping[str, Mapping]):
        self._geometry = dict(geometry)
        self._load_cases = {k: dict(v) for k, v in load_cases.items()}

    def execute(self, spec: RunSpec) -> AnalysisRun:
        lc_doc = self._load_cases[spec.load_case]
        load = mechanics.LoadCase(
            load_id=spec.load_case,
            kind=lc_doc["kind"],
            magnitude=lc_doc["magnitude"] * spec.load_factor,
            arm_length=self._geometry["arm_length"],
        )
        section = mechanics.section_properties(self._geometry["width"], spec.thickness)
        _, stress, deflection = mechanics.bend_stress_and_deflection(
            section, load, spec.e_modulus
        )
        return AnalysisRun(
            spec=spec,
            peak_vm_stress=stress,
            engineering_bend_stress=stress,
            max_deflection=deflection,
            singularity_flag=False,
            provenance="analytic",
        )


def execute_run(spec: RunSpec, backend) -> AnalysisRun:
    return backend.execute(spec)


def execute_matrix(specs: Sequence[RunSpec], backend) -> list[AnalysisRun]:
    """Runs are independent; results are gathered in run-id order."""
    return [backend.execute(spec) for spec in specs]


# ---------------------------------------------------------------------------
# Gate 2: mesh convergence
# ---------------------------------------------------------------------------


def convergence_check(
    fine: AnalysisRun,
    coarse: AnalysisRun,
    tol_displacement: float = 0.02,
    tol_stress: float = 0.05,
) -> GateOutcome:
    """Compare fine vs coarse results; relative change uses the fine value as
    denominator.

    Displacement within tolerance passes; within twice the tolerance is
    marginal (conditional).  Stress divergence at a peak tagged as a BC
    singularity is logged as a warning, never a reject.
    """
    same_axes = (
        fine.spec.bc_variant == coarse.spec.bc_variant
        and fine.spec.load_case == coarse.spec.load_case
        and fine.spec.load_factor == coarse.spec.load_factor
    )
    if not same_axes or fine.spec.mesh_variant == coarse.spec.mesh_variant:
        raise ValueError("convergence check needs the same spec at two mesh densities")

    warnings: list[str] = []
    disp_change = abs(fine.max_deflection - coarse.max_deflection) / fine.max_deflection
    stress_change = abs(fine.peak_vm_stress - coarse.peak_vm_stress) / fine.peak_vm_stress

    if disp_change <= tol_displacement:
        level = GateLevel.PASS
    elif disp_change <= 2.0 * tol_displacement:
        level = GateLevel.CONDITIONAL
        warnings.append(
            f"displacement converges to {disp_change:.1%}, marginal at the "
            f"{tol_displacement:.0%} threshold"
        )
    else:
        level = GateLevel.REJECT
        warnings.append(f"displacement non-convergence {disp_change:.1%}")

    if stress_change > tol_stress:
        exempt = fine.singularity_flag and "BC" in fine.peak_location
        if exempt:
            warnings.append(
                f"{stress_change:.0%} peak-stress non-convergence at tagged BC "
                "singularity; excluded from the design check"
            )
        else:
            level = GateLevel.REJECT
            warnings.append(f"peak-stress non-convergence {stress_change:.1%} (untagged peak)")

    diagnosis = {
        "displacement_change": disp_change,
        "stress_change": stress_change,
        "fine_run": fine.spec.run_id,
        "coarse_run": coarse.spec.run_id,
    }
    return GateOutcome("G2-convergence", level, tuple(warnings), diagnosis)


# ---------------------------------------------------------------------------
# Gate 3: analytical bound verification
# ---------------------------------------------------------------------------


def bound_check(
    runs: Sequence[AnalysisRun],
    bounds: Mapping,
    diagnoses: Mapping[str, str] | None = None,
    prediction_tol: float = 0.10,
) -> GateOutcome:
    """Check engineering responses against the analytic envelopes and the
    per-load-case beam predictions.

    Inside the envelope and near the beam prediction passes; a documented
    physical diagnosis (bend compliance, singularity) downgrades an
    exceedance to conditional; an undiagnosed envelope exceedance rejects.
    """
    diagnoses = dict(diagnoses or {})
    nominal = {
        step["step"].removeprefix("load-case-"): step
        for step in bounds.get("working", ())
        if step["step"].startswith("load-case-")
    }
    level = GateLevel.PASS
    warnings: list[str] = []

    def assess(kind: str, value: float, lo: float, hi: float, predicted: Optional[float], run_id: str):
        nonlocal level
        outside_envelope = not lo <= value <= hi
        beyond_prediction = predicted is not None and value > predicted * (1.0 + prediction_tol)
        if not outside_envelope and not beyond_prediction:
            return
        diagnosis = diagnoses.get(kind)
        if diagnosis is None and outside_envelope:
            level = GateLevel.REJECT
            warnings.append(
                f"{run_id}: {kind} {value:g} outside [{lo:g}, {hi:g}] with no diagnosis"
            )
            return
        if level is not GateLevel.REJECT:
            level = GateLevel.CONDITIONAL
        reference = f"envelope [{lo:g}, {hi:g}]" if outside_envelope else f"beam prediction {predicted:g}"
        warnings.append(f"{run_id}: {kind} {value:g} exceeds {reference}: {diagnosis or 'n/a'}")

    for run in runs:
        step = nominal.get(run.spec.load_case)
        factor = run.spec.load_factor
        e_ratio = 200000.0 / run.spec.e_modulus
        predicted_stress = step["sigma_MPa"] * factor if step else None
        predicted_defl = step["delta_mm"] * factor * e_ratio if step else None
        assess(
            "stress",
            run.engineering_bend_stress,
            bounds["stress"]["lo"],
            bounds["stress"]["hi"],
            predicted_stress,
            run.spec.run_id,
        )
        assess(
            "deflection",
            run.max_deflection,
            bounds["deflection"]["lo"],
            bounds["deflection"]["hi"],
            predicted_defl,
            run.spec.run_id,
        )

    diagnosis_doc = {"diagnoses": diagnoses} if warnings else None
    return GateOutcome("G3-bounds", level, tuple(warnings), diagnosis_doc)


# ---------------------------------------------------------------------------
# Input-deck emission stub
# ---------------------------------------------------------------------------


def write_deck_summary(spec: RunSpec, out_path: str | Path) -> Path:
    """Write a human-readable solver input-deck summary (no solver is ever
    invoked); the header carries the reproducibility metadata."""
    out_path = Path(out_path)
    lines = [
        f"** input-deck summary for run {spec.run_id}",
        f"** bc-variant={spec.bc_variant} load-case={spec.load_case} "
        f"load-factor={spec.load_factor:g}",
        f"** E={spec.e_modulus:g} MPa  sigma_y={spec.yield_strength:g} MPa  "
        f"t={spec.thickness:g} mm  mesh={spec.mesh_variant}",
        "** static linear-elastic step; emitted for traceability only",
    ]
    out_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return out_path
