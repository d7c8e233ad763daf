"""The nine pipeline roles as stage handlers over the shared ledger.

Each handler wraps one agent: it builds the agent definition from the
declarative config, invokes its backend (replay fixture or deterministic
rule), appends the resulting records plus a trace record, and returns the
gate outcomes it owns.  Handlers never mutate earlier records.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Optional, Sequence

from . import analysis, assessment, mechanics
from .agents import (
    AgentDef,
    DeterministicRuleBackend,
    MemoryRule,
    ReplayBackend,
    decode_structured,
    invoke_agent,
    register_schema,
)
from .conservatism import Direction, LimitState, VariantSet, envelope, fos_range
from .ledger import GateLevel, GateOutcome
from .mechanics import GRAVITY_M_PER_S2
from .perception import (
    MaterialHypothesis,
    DOMINANT_MEMBERSHIP_MIN,
    GeometrySpec,
    consensus_scale,
    validate_hypothesis_set,
)
from .rounding import fos_display, round_half_up

STEEL_DENSITY_KG_M3 = 7850.0
E_NOMINAL_MPA = 200000.0
DERIVED_BAND_FRACTION = 0.20

BOUND_DIAGNOSES = {
    "deflection": "compliance at the bend and BC hole fixation",
    "stress": "peak above gross-section prediction at stress concentrations",
}


class FixtureError(FileNotFoundError):
    """A required fixture file or entry is missing; message names it."""


register_schema(
    "extraction-v1",
    {
        "parameters": {"type": "object"},
        "geometry": {"type": "object"},
        "material_hypotheses": {"type": "list"},
        "consensus": {"type": "object", "required": False},
        "metadata": {"type": "object", "required": False},
    },
)
register_schema(
    "mesh-summary-v1",
    {
        "fine": {"type": "object"},
        "coarse": {"type": "object"},
        "redesign": {"type": "object", "required": False},
        "refinement_zones_mm": {"type": "list"},
        "features": {"type": "object"},
    },
)
register_schema(
    "bc-spec-v1",
    {
        "load_cases": {"type": "object"},
        "bc_variants": {"type": "object"},
        "limits": {"type": "object"},
        "bearing_stress": {"type": "number", "unit": "MPa"},
        "loading_type": {"type": "string", "required": False},
    },
)


def load_fixture(fixtures_dir: str | Path, name: str) -> dict:
    path = Path(fixtures_dir) / name
    if not path.exists():
        raise FixtureError(f"fixture missing: {path}")
    return json.loads(path.read_text(encoding="utf-8"))


class StageResult:
    def __init__(self, gates: Sequence[GateOutcome] = ()):
        self.gates = tuple(gates)


class RoleHandlers:
    """Builds and dispatches the nine role handlers for one case directory."""

    def __init__(
        self,
        fixtures_dir: str | Path,
        analytic_only: bool = False,
        redesign_budget: int = 1,
        memory: Optional[Mapping[str, Sequence[MemoryRule]]] = None,
        agents_config: Optional[str | Path | Mapping] = None,
    ):
        self.fixtures_dir = Path(fixtures_dir)
        self.analytic_only = analytic_only
        self.redesign_budget = redesign_budget
        self.memory = {k: tuple(v) for k, v in (memory or {}).items()}
        if agents_config is None:
            self.config = load_fixture(fixtures_dir, "agents.json")["agents"]
        elif isinstance(agents_config, (str, Path)):
            self.config = json.loads(Path(agents_config).read_text(encoding="utf-8"))["agents"]
        else:
            self.config = dict(agents_config)
        # an evolved agents config carries serialized memory rules
        from .evolver import rule_from_doc

        for agent_id, cfg in self.config.items():
            if cfg.get("memory"):
                stored = tuple(rule_from_doc(d) for d in cfg["memory"])
                self.memory[agent_id] = stored + self.memory.get(agent_id, ())
        self.run_meta = load_fixture(fixtures_dir, "run_meta.json")
        self._dispatch = {
            "geometry-analyst": self._geometry_analyst,
            "mesh-modeller": self._mesh_modeller,
            "mesh-reviewer": self._mesh_reviewer,
            "bc-load-specifier": self._bc_load_specifier,
            "analytical-bounder": self._analytical_bounder,
            "fea-executor": self._fea_executor,
            "uncertainty-analyst": self._uncertainty_analyst,
            "design-recommender": self._design_recommender,
            "report-writer": self._report_writer,
        }

    def roles(self) -> tuple[str, ...]:
        return tuple(self._dispatch)

    def handle(self, agent_id: str, role: str, state) -> StageResult:
        if role not in self._dispatch:
            raise KeyError(f"unregistered role {role!r}")
        return self._dispatch[role](agent_id, state)

    # -- agent assembly ----------------------------------------------------

    def _agent(self, agent_id: str, schema: Optional[str], rule=None) -> AgentDef:
        cfg = self.config[agent_id]
        usage = dict(cfg["usage"])
        usage["tool_calls"] = cfg.get("tool_calls", [])
        if rule is not None:
            backend = DeterministicRuleBackend(rule, recorded_usage=usage)
        else:
            fixture = load_fixture(self.fixtures_dir, cfg["fixture"])
            fixture = {
                "output": fixture["output"],
                "usage": cfg["usage"],
                "tool_calls": cfg.get("tool_calls", []),
            }
            backend = ReplayBackend(fixture)
        return AgentDef(
            agent_id=agent_id,
            role=cfg["role"],
            system_prompt=cfg["prompt"],
            tool_ids=tuple(cfg.get("tool_calls", ())),
            memory=self.memory.get(agent_id, ()),
            backend=backend,
            output_schema=schema,
        )

    def _invoke(self, state, agent: AgentDef, payload=None) -> dict:
        output, usage, tool_calls = invoke_agent(agent, state.ledger.snapshot(), payload)
        cfg = self.config[agent.agent_id]
        state.clock_s += cfg.get("duration_s", 0)
        state.ledger.append(
            agent.agent_id,
            "trace",
            {
                "agent": agent.agent_id,
                "role": agent.role,
                "tokens_in": usage["tokens_in"],
                "tokens_out": usage["tokens_out"],
                "tool_calls": len(tool_calls),
                "tool_call_ids": list(tool_calls),
                "duration_s": cfg.get("duration_s", 0),
                "files_produced": cfg.get("files_produced", 0),
            },
            timestamp=state.clock_s,
        )
        return output

    # -- stage 1: geometry analyst ------------------------------------------

    def _geometry_analyst(self, agent_id: str, state) -> StageResult:
        agent = self._agent(agent_id, "extraction-v1")
        output = self._invoke(state, agent)
        warnings: list[str] = []

        geometry = GeometrySpec.from_doc(output["geometry"])
        warnings.extend(geometry.sanity_warnings())

        hypotheses = [
            MaterialHypothesis(h["label"], h["membership"], h["properties"])
            for h in output["material_hypotheses"]
        ]
        dominant = validate_hypothesis_set(hypotheses)
        if dominant.membership < DOMINANT_MEMBERSHIP_MIN:
            warnings.append(
                f"no dominant material hypothesis (max membership {dominant.membership})"
            )

        consensus = output.get("consensus")
        if consensus:
            accepted, spread, ok = consensus_scale(consensus["estimates"])
            consensus = dict(consensus, accepted=accepted, spread=spread, agreed=ok)
            if not ok:
                warnings.append(f"scale consensus spread {spread:.0%} exceeds limit")

        parameters = {k: dict(v) for k, v in output["parameters"].items()}
        geom_values = self._geometry_values(parameters)
        mass_exact, weight_exact = mechanics.self_weight(geom_values, STEEL_DENSITY_KG_M3)
        mass_disp = round_half_up(mass_exact, 0)
        weight_disp = round_half_up(mass_disp * 1e-3 * GRAVITY_M_PER_S2, 2)
        for name, value, unit in (("mass_g", mass_disp, "g"), ("self_weight_N", weight_disp, "N")):
            parameters[name] = {
                "name": name,
                "value": value,
                "band": [
                    value * (1.0 - DERIVED_BAND_FRACTION),
                    value * (1.0 + DERIVED_BAND_FRACTION),
                ],
                "unit": unit,
                "density": {"family": "none"},
                "confidence": 0.5,
                "band_kind": "self-reported-plausibility",
            }
        # engineer corrections override the derived rows like any other
        for rule in agent.memory:
            target = rule.preferred_value.get("param")
            if target in ("mass_g", "self_weight_N"):
                value = rule.preferred_value["value"]
                parameters[target].update(
                    value=value, band=[value, value], band_kind="measured"
                )

        state.ledger.append(
            agent_id,
            "extraction",
            {
                "parameters": parameters,
                "geometry": geometry.to_doc(),
                "material_hypotheses": output["material_hypotheses"],
                "dominant_material": dominant.label,
                "consensus": consensus,
                "derived": {
                    "mass_g_exact": mass_exact,
                    "self_weight_N_exact": weight_exact,
                    "density_kg_m3": STEEL_DENSITY_KG_M3,
                },
                "metadata": output.get("metadata", {}),
                "warnings": warnings,
            },
            timestamp=state.clock_s,
        )
        return StageResult()

    @staticmethod
    def _geometry_values(parameters: Mapping[str, Mapping]) -> dict:
        value = lambda name: float(parameters[name]["value"])
        # outer radius follows from inner radius + thickness so derived
        # quantities stay consistent when either is corrected
        return {
            "arm_length": value("arm_length"),
            "width": value("width"),
            "thickness": value("thickness"),
            "r_inner": value("r_inner"),
            "hole_diameter": value("hole_diameter"),
            "hole_count": 6,
            "countersink_diameter": value("countersink_diameter"),
        }

    # -- stage 2: mesh modeller ----------------------------------------------

    def _mesh_modeller(self, agent_id: str, state) -> StageResult:
        agent = self._agent(agent_id, "mesh-summary-v1")
        output = self._invoke(state, agent)
        state.ledger.append(agent_id, "geometry-spec", dict(output), timestamp=state.clock_s)
        return StageResult()

    # -- stage 3: mesh reviewer (Gate 1) --------------------------------------

    def _mesh_reviewer(self, agent_id: str, state) -> StageResult:
        def rule(view, memory, payload):
            mesh = view.last_of_kind("geometry-spec").payload
            extraction = view.last_of_kind("extraction").payload
            features = mesh["features"]
            expected_holes = sum(
                1 for op in extraction["geometry"]["operations"] if op["op"] == "hole"
            )
            checklist = features["checklist"]
            findings = {
                "hole-count-matches": features["hole_count"] == expected_holes,
                "countersink-per-hole": features["countersink_count"] == features["hole_count"],
                "junctions-flush": all(features["junction_flags"].values()),
                "profile-continuous": bool(features["profile_continuous"]),
                "checklist-complete": all(checklist.values()),
            }
            return {
                "findings": findings,
                "checklist_done": sum(checklist.values()),
                "checklist_total": len(checklist),
            }

        agent = self._agent(agent_id, None, rule=rule)
        output = self._invoke(state, agent)
        failed = [name for name, ok in output["findings"].items() if not ok]
        level = GateLevel.PASS if not failed else GateLevel.REJECT
        outcome = GateOutcome(
            "G1-mesh-review",
            level,
            tuple(f"mesh audit failed: {name}" for name in failed),
            {
                "findings": output["findings"],
                "feature_checklist": f"{output['checklist_done']}/{output['checklist_total']}",
            },
        )
        state.ledger.append(
            agent_id,
            "assessment",
            {"stage": "mesh-review", **output},
            timestamp=state.clock_s,
        )
        return StageResult([outcome])

    # -- stage 4: BC / load specifier -----------------------------------------

    def _bc_load_specifier(self, agent_id: str, state) -> StageResult:
        agent = self._agent(agent_id, "bc-spec-v1")
        output = self._invoke(state, agent)
        state.ledger.append(agent_id, "bc-spec", dict(output), timestamp=state.clock_s)
        return StageResult()

    # -- stage 5: analytical bounder --------------------------------------------

    def _analytical_bounder(self, agent_id: str, state) -> StageResult:
        def rule(view, memory, payload):
            extraction = view.last_of_kind("extraction").payload
            bc = view.last_of_kind("bc-spec").payload
            geometry = self._geometry_values(extraction["parameters"])
            loads = [
                mechanics.LoadCase(lc_id, doc["kind"], doc["magnitude"], geometry["arm_length"])
                for lc_id, doc in sorted(bc["load_cases"].items())
            ]
            bounds = mechanics.analytical_bounds(geometry, loads, E_NOMINAL_MPA)
            section = mechanics.section_properties(geometry["width"], geometry["thickness"])
            buckling = mechanics.euler_buckling(section, geometry["arm_length"], E_NOMINAL_MPA)
            return {**bounds, "e_modulus": E_NOMINAL_MPA, "euler_buckling_N": buckling}

        agent = self._agent(agent_id, None, rule=rule)
        output = self._invoke(state, agent)
        state.ledger.append(agent_id, "bounds", dict(output), timestamp=state.clock_s)
        return StageResult()

    # -- stage 6: run-matrix executor ---------------------------------------------

    def _run_backend(self, state):
        if self.analytic_only:
            extraction = state.ledger.snapshot().last_of_kind("extraction").payload
            bc = state.ledger.snapshot().last_of_kind("bc-spec").payload
            geometry = self._geometry_values(extraction["parameters"])
            return analysis.AnalyticRunBackend(geometry, bc["load_cases"])
        path = self.fixtures_dir / "runs.json"
        if not path.exists():
            raise FixtureError(f"fixture missing: {path}")
        return analysis.FixtureRunBackend(path)

    def _build_specs(self, state) -> list[analysis.RunSpec]:
        bc = state.ledger.snapshot().last_of_kind("bc-spec").payload
        bc_order = [v for v in analysis.BC_VARIANTS if v in bc["bc_variants"]]
        lc_order = sorted(bc["load_cases"])
        sensitivities = [
            {"load_factor": 1.5, "cons_for": "Load sensitivity"},
            {"e_modulus": 190000.0, "cons_for": "Material sensitivity"},
            {"mesh_variant": "coarse", "cons_for": "Convergence"},
        ]
        return analysis.build_matrix(bc_order, lc_order, sensitivities)

    def _fea_executor(self, agent_id: str, state) -> StageResult:
        specs = self._build_specs(state)
        backend = self._run_backend(state)

        def rule(view, memory, payload):
            runs = analysis.execute_matrix(specs, backend)
            return {"runs": [run.to_doc() for run in runs]}

        agent = self._agent(agent_id, None, rule=rule)
        output = self._invoke(state, agent)
        state.extra["base_specs"] = specs
        state.extra["runs"] = [self._run_from_doc(doc) for doc in output["runs"]]
        for doc in output["runs"]:
            state.ledger.append(agent_id, "run-result", doc, timestamp=state.clock_s)
        return StageResult()

    @staticmethod
    def _run_from_doc(doc: Mapping) -> analysis.AnalysisRun:
        spec_doc = dict(doc["spec"])
        spec = analysis.RunSpec(**spec_doc)
        return analysis.AnalysisRun(
            spec=spec,
            peak_vm_stress=doc["peak_vm_stress"],
            engineering_bend_stress=doc["engineering_bend_stress"],
            max_deflection=doc["max_deflection"],
            singularity_flag=doc.get("singularity_flag", False),
            peak_location=doc.get("peak_location", ""),
            provenance=doc.get("provenance", "fixture"),
            mesh_nodes=doc.get("mesh_nodes"),
            mesh_elements=doc.get("mesh_elements"),
        )

    # -- stage 7: uncertainty analyst (Gates 2 and 3) --------------------------------

    def _uncertainty_analyst(self, agent_id: str, state) -> StageResult:
        runs: list[analysis.AnalysisRun] = state.extra["runs"]
        view = state.ledger.snapshot()
        bounds = view.last_of_kind("bounds").payload
        bc = view.last_of_kind("bc-spec").payload
        by_id = {r.spec.run_id: r for r in runs}

        fine = by_id[min(r.spec.run_id for r in runs if r.spec.mesh_variant == "fine")]
        coarse_runs = [r for r in runs if r.spec.mesh_variant == "coarse"]
        if coarse_runs:
            g2 = analysis.convergence_check(fine, coarse_runs[0])
        else:
            g2 = GateOutcome("G2-convergence", GateLevel.PASS)
        g3 = analysis.bound_check(runs, bounds, BOUND_DIAGNOSES)

        limits = bc["limits"]
        variants = VariantSet(
            tuple(
                {
                    "run_id": r.spec.run_id,
                    "eng_stress": r.engineering_bend_stress,
                    "deflection": r.max_deflection,
                    "peak_stress": r.peak_vm_stress,
                }
                for r in runs
            )
        )
        arm_length = self._geometry_values(
            view.last_of_kind("extraction").payload["parameters"]
        )["arm_length"]
        defl_limit = arm_length / limits["span_ratio"]
        strength_ls = LimitState(
            "strength-ULS", "eng_stress", Direction.TRIGGERED_BY_LARGE, limits["yield_strength"]
        )
        stiffness_ls = LimitState(
            "stiffness-SLS", "deflection", Direction.TRIGGERED_BY_LARGE, defl_limit
        )
        strength_env = envelope(variants, strength_ls)
        stiffness_env = envelope(variants, stiffness_ls)

        baseline_stress = fine.engineering_bend_stress
        y_lo, y_hi = limits["yield_range"]
        yield_fos = (y_lo / baseline_stress, y_hi / baseline_stress)

        peaks = [r.peak_vm_stress for r in runs]
        defls = [r.max_deflection for r in runs]
        range_factors = {
            "stress": max(peaks) / min(peaks),
            "deflection": max(defls) / min(defls),
        }

        ranking = self._source_ranking(by_id, fine)

        def rule(view_, memory, payload):
            return {
                "envelopes": {
                    "strength": strength_env.to_doc(),
                    "stiffness": stiffness_env.to_doc(),
                },
                "yield_range_fos": list(yield_fos),
                "yield_range_fos_display": [fos_display(v) for v in yield_fos],
                "strength_envelope_fos_display": fos_display(strength_env.fos_min),
                "range_factors": range_factors,
                "uncertainty_ranking": ranking,
            }

        agent = self._agent(agent_id, None, rule=rule)
        output = self._invoke(state, agent)
        state.ledger.append(
            agent_id, "assessment", {"stage": "uncertainty", **output}, timestamp=state.clock_s
        )
        state.extra["envelopes"] = {"strength": strength_env, "stiffness": stiffness_env}
        return StageResult([g2, g3])

    @staticmethod
    def _source_ranking(by_id: Mapping[str, analysis.AnalysisRun], fine) -> list[dict]:
        ranking = [
            {
                "source": "thickness",
                "rank": 1,
                "effect": "stress ~ 1/t^2, deflection ~ 1/t^3 over the plausibility band",
            }
        ]
        if "R4" in by_id:
            ranking.append(
                {
                    "source": "load-distribution-type",
                    "rank": 1,
                    "stress_factor": by_id["R4"].peak_vm_stress / fine.peak_vm_stress,
                    "deflection_factor": by_id["R4"].max_deflection / fine.max_deflection,
                }
            )
        if "R2" in by_id and "R3" in by_id:
            ranking.append(
                {
                    "source": "bc-stiffness",
                    "rank": 2,
                    "stress_factor": by_id["R3"].peak_vm_stress / by_id["R2"].peak_vm_stress,
                }
            )
        ranking.append({"source": "yield-strength", "rank": 2, "effect": "FoS range over [200, 280]"})
        if "R6" in by_id:
            ranking.append(
                {
                    "source": "e-modulus",
                    "rank": 5,
                    "deflection_impact": by_id["R6"].max_deflection / fine.max_deflection - 1.0,
                }
            )
        return ranking

    # -- stage 8: design recommender (Gate 4 + redesign loop) ----------------------

    def _design_recommender(self, agent_id: str, state) -> StageResult:
        runs: list[analysis.AnalysisRun] = state.extra["runs"]
        view = state.ledger.snapshot()
        bc = view.last_of_kind("bc-spec").payload
        limits_doc = bc["limits"]
        arm_length = self._geometry_values(
            view.last_of_kind("extraction").payload["parameters"]
        )["arm_length"]
        limits = assessment.ComplianceLimits(
            yield_strength=limits_doc["yield_strength"],
            ultimate_strength=limits_doc["ultimate_strength"],
            gamma=limits_doc["gamma"],
            span_ratio=limits_doc["span_ratio"],
            arm_length=arm_length,
        )
        baseline = runs[0]
        checks = assessment.compliance_assess(baseline, limits, bc["bearing_stress"])
        applied = bc["load_cases"][baseline.spec.load_case]["magnitude"]
        safe_load, governing = assessment.max_safe_load(applied, checks)

        proposals = assessment.propose_redesign(baseline.spec.thickness)
        executed = [p for p in proposals if p.parameter == "thickness" and p.new_value == 5.0]
        backend = self._run_backend(state)
        base_specs = state.extra["base_specs"]
        redesign_ids = [
            s.run_id
            for s in base_specs
            if s.cons_for in ("Baseline", "Stiffness", "Strength")
        ]

        redesign_records: list[dict] = []

        def execute(proposal):
            specs = analysis.redesign_matrix(base_specs, redesign_ids, proposal.new_value)
            rd_runs = analysis.execute_matrix(specs, backend)
            checks_by_run = {
                r.spec.run_id: assessment.compliance_assess(r, limits) for r in rd_runs
            }
            redesign_records.extend(r.to_doc() for r in rd_runs)
            return rd_runs, checks_by_run

        results = assessment.redesign_iterate(executed, execute, self.redesign_budget)

        scaling = None
        if results:
            rd = results[0]
            rd_nominal = rd.runs[0]
            stress_ratio, defl_ratio = mechanics.scaling_predict(
                baseline.spec.thickness, rd_nominal.spec.thickness
            )
            scaling = {
                "stress_ratio_local_observed": rd_nominal.engineering_bend_stress
                / baseline.engineering_bend_stress,
                "stress_ratio_gross_predicted": stress_ratio,
                "deflection_reduction_observed": baseline.max_deflection
                / rd_nominal.max_deflection,
                "deflection_reduction_predicted": 1.0 / defl_ratio,
                "predicted_deflection_mm": baseline.max_deflection * defl_ratio,
                "observed_deflection_mm": rd_nominal.max_deflection,
                "weight_increase_percent": 100.0
                * (rd_nominal.spec.thickness / baseline.spec.thickness - 1.0),
            }

        def rule(view_, memory, payload):
            return {
                "baseline_checks": [c.to_doc() for c in checks],
                "max_safe_load_N": safe_load,
                "max_safe_load_display": f"{round_half_up(safe_load, 0):.0f}",
                "governing_limit": governing,
                "proposals": [p.to_doc() for p in proposals],
                "redesign": [
                    {
                        "proposal": r.proposal.to_doc(),
                        "verdict": r.verdict,
                        "checks_by_run": {
                            run_id: [c.to_doc() for c in cs]
                            for run_id, cs in r.checks_by_run.items()
                        },
                    }
                    for r in results
                ],
                "scaling_comparison": scaling,
            }

        agent = self._agent(agent_id, None, rule=rule)
        output = self._invoke(state, agent)
        for doc in redesign_records:
            state.ledger.append(agent_id, "run-result", doc, timestamp=state.clock_s)
        state.ledger.append(
            agent_id, "assessment", {"stage": "compliance", **output}, timestamp=state.clock_s
        )

        gate = assessment.compliance_gate(checks)
        warnings = list(gate.warnings)
        for r in results:
            warnings.append(
                f"redesign {r.proposal.label}: worst verdict {r.verdict} across "
                f"{len(r.checks_by_run)} runs"
            )
        outcome = GateOutcome("G4-compliance", gate.level, tuple(warnings), gate.diagnosis)
        return StageResult([outcome])

    # -- stage 9: report writer -------------------------------------------------

    def _report_writer(self, agent_id: str, state) -> StageResult:
        def rule(view, memory, payload):
            kinds = {}
            for record in view:
                kinds[record.kind] = kinds.get(record.kind, 0) + 1
            return {
                "sections": [
                    "inputs",
                    "extraction",
                    "geometry-audit",
                    "bounds-working",
                    "run-matrix",
                    "uncertainty-ranking",
                    "envelopes",
                    "compliance",
                    "redesign",
                    "sign-off-warnings",
                    "run-statistics",
                    "reproducibility",
                ],
                "record_counts": kinds,
                "artifacts": ["report.json", "report.html", "runs.csv", "ledger.jsonl"],
            }

        agent = self._agent(agent_id, None, rule=rule)
        output = self._invoke(state, agent)
        state.ledger.append(agent_id, "report-ref", dict(output), timestamp=state.clock_s)
        return StageResult()
