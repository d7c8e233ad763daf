"""Analytic structural mechanics: section properties, cantilever bending and
deflection, scaling laws, Euler buckling, self-weight from analytic volume,
bound envelopes, the continuum-physics catalog, and the discretisation
selector.

All closed forms use N, mm, MPa units (E in MPa, I in mm^4, deflection in mm).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional, Sequence

from .rounding import round_to_grain

GRAVITY_M_PER_S2 = 9.81


# ---------------------------------------------------------------------------
# Sections and load cases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Section:
    """Rectangular section b x t with derived elastic properties."""

    width: float  # b, mm
    thickness: float  # t, mm
    inertia: float  # I = b t^3 / 12, mm^4
    elastic_modulus: float  # S = b t^2 / 6, mm^3
    plastic_modulus: float  # Z = b t^2 / 4, mm^3


def section_properties(width: float, thickness: float) -> Section:
    if width <= 0 or thickness <= 0:
        raise ValueError("section dimensions must be positive")
    b, t = float(width), float(thickness)
    return Section(
        width=b,
        thickness=t,
        inertia=b * t**3 / 12.0,
        elastic_modulus=b * t**2 / 6.0,
        plastic_modulus=b * t**2 / 4.0,
    )


LOAD_KINDS = ("udl-on-arm", "tip-point")


@dataclass(frozen=True)
class LoadCase:
    load_id: str
    kind: str  # "udl-on-arm" | "tip-point"
    magnitude: float  # P, N (total load)
    arm_length: float  # L, mm

    def __post_init__(self) -> None:
        if self.kind not in LOAD_KINDS:
            raise ValueError(f"unknown load kind {self.kind!r}")
        if self.magnitude <= 0 or self.arm_length <= 0:
            raise ValueError("load magnitude and arm length must be positive")

    @property
    def moment_arm(self) -> float:
        """Effective moment arm: L/2 for a UDL resultant, L for a tip load."""
        return self.arm_length / 2.0 if self.kind == "udl-on-arm" else self.arm_length


def bend_stress_and_deflection(
    section: Section, load: LoadCase, e_modulus: float
) -> tuple[float, float, float]:
    """Cantilever closed forms.

    UDL:  M = PL/2, delta = PL^3/(8EI).  Tip: M = PL, delta = PL^3/(3EI).
    Stress is the gross-section engineering value M/S, no concentration factor.
    """
    if e_modulus <= 0:
        raise ValueError("E must be positive")
    moment = load.magnitude * load.moment_arm
    stress = moment / section.elastic_modulus
    div = 8.0 if load.kind == "udl-on-arm" else 3.0
    deflection = load.magnitude * load.arm_length**3 / (div * e_modulus * section.inertia)
    return moment, stress, deflection


def scaling_predict(t_old: float, t_new: float) -> tuple[float, float]:
    """Thickness scaling: stress ~ 1/t^2, deflection ~ 1/t^3."""
    if t_old <= 0 or t_new <= 0:
        raise ValueError("thicknesses must be positive")
    ratio = t_old / t_new
    return ratio**2, ratio**3


def euler_buckling(section: Section, effective_length: float, e_modulus: float) -> float:
    """P_cr = pi^2 E I / L_eff^2."""
    if effective_length <= 0 or e_modulus <= 0:
        raise ValueError("positive inputs required")
    return math.pi**2 * e_modulus * section.inertia / effective_length**2


# ---------------------------------------------------------------------------
# Self-weight from analytic volume
# ---------------------------------------------------------------------------


def bracket_volume(geometry: Mapping[str, float]) -> float:
    """Analytic volume (mm^3) of an L-bracket:

    two straight arms of length (L - t), a quarter-annulus bend prism between
    inner and outer radii, minus through-hole cylinders, minus countersink
    pockets modelled as annular recesses of depth t/2.
    """
    L = geometry["arm_length"]
    b = geometry["width"]
    t = geometry["thickness"]
    r_i = geometry.get("r_inner", 0.0)
    r_o = geometry.get("r_outer", r_i + t)
    d = geometry.get("hole_diameter", 0.0)
    n_holes = int(geometry.get("hole_count", 0))
    d_cs = geometry.get("countersink_diameter", 0.0)

    arms = 2.0 * (L - t) * b * t
    bend = (math.pi / 4.0) * (r_o**2 - r_i**2) * b
    holes = n_holes * (math.pi / 4.0) * d**2 * t
    countersinks = 0.0
    if d_cs > d:
        countersinks = n_holes * (math.pi / 4.0) * (d_cs**2 - d**2) * (t / 2.0)
    return arms + bend - holes - countersinks


def slab_volume(length: float, width: float, thickness: float) -> float:
    """Plain slab volume, the degenerate no-hole, no-bend case."""
    return length * width * thickness


def self_weight(geometry: Mapping[str, float], density: float) -> tuple[float, float]:
    """Return (mass in grams, weight G in newtons) for density in kg/m^3."""
    if density <= 0:
        raise ValueError("density must be positive")
    volume_mm3 = bracket_volume(geometry)
    mass_g = volume_mm3 * density * 1e-6
    return mass_g, mass_g * 1e-3 * GRAVITY_M_PER_S2


# ---------------------------------------------------------------------------
# Analytical bound envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundPolicy:
    """How raw closed-form responses are widened into envelopes.

    The lower bound comes from the band-favourable geometry (short arm, thick
    section); the upper bound from the nominal worst load case, inflated by a
    compliance allowance on deflection when the geometry contains a bend
    (beam theory ignores bend and support flexibility).  Both ends are then
    rounded to the report grain; a grain of 0 disables rounding.
    """

    deflection_compliance_allowance: float = 1.25
    stress_grain: float = 100.0
    deflection_grain: float = 1.0


def analytical_bounds(
    geometry: Mapping[str, float],
    loads: Sequence[LoadCase],
    e_modulus: float,
    band_fraction: float = 0.15,
    policy: BoundPolicy = BoundPolicy(),
) -> dict:
    """Envelope [lo, hi] for bending stress (MPa) and tip deflection (mm),
    with the full working recorded step by step."""
    if not loads:
        raise ValueError("at least one load case required")
    b = geometry["width"]
    t = geometry["thickness"]
    has_bend = geometry.get("r_inner", 0.0) > 0.0

    nominal = section_properties(b, t)
    favourable = section_properties(b, t * (1.0 + band_fraction))
    working: list[dict] = [
        {
            "step": "section-properties",
            "I_mm4": nominal.inertia,
            "S_mm3": nominal.elastic_modulus,
            "Z_mm3": nominal.plastic_modulus,
        }
    ]

    stress_cands: list[float] = []
    defl_cands: list[float] = []
    stress_lo_cands: list[float] = []
    defl_lo_cands: list[float] = []
    for load in loads:
        moment, stress, deflection = bend_stress_and_deflection(nominal, load, e_modulus)
        short = LoadCase(
            load.load_id + "-band-lo",
            load.kind,
            load.magnitude,
            load.arm_length * (1.0 - band_fraction),
        )
        _, stress_lo, defl_lo = bend_stress_and_deflection(favourable, short, e_modulus)
        working.append(
            {
                "step": f"load-case-{load.load_id}",
                "kind": load.kind,
                "M_Nmm": moment,
                "sigma_MPa": stress,
                "delta_mm": deflection,
                "sigma_band_favourable_MPa": stress_lo,
                "delta_band_favourable_mm": defl_lo,
            }
        )
        stress_cands.append(stress)
        defl_cands.append(deflection)
        stress_lo_cands.append(stress_lo)
        defl_lo_cands.append(defl_lo)

    allowance = policy.deflection_compliance_allowance if has_bend else 1.0
    raw = {
        "stress": (min(stress_lo_cands), max(stress_cands)),
        "deflection": (min(defl_lo_cands), max(defl_cands) * allowance),
    }
    working.append(
        {
            "step": "raw-envelopes",
            "stress_MPa": list(raw["stress"]),
            "deflection_mm": list(raw["deflection"]),
            "deflection_compliance_allowance": allowance,
        }
    )

    stress_bounds = [round_to_grain(x, policy.stress_grain) for x in raw["stress"]]
    defl_bounds = [round_to_grain(x, policy.deflection_grain) for x in raw["deflection"]]
    working.append(
        {
            "step": "rounded-envelopes",
            "stress_MPa": stress_bounds,
            "deflection_mm": defl_bounds,
        }
    )
    return {
        "stress": {"lo": stress_bounds[0], "hi": stress_bounds[1], "unit": "MPa"},
        "deflection": {"lo": defl_bounds[0], "hi": defl_bounds[1], "unit": "mm"},
        "working": working,
    }


# ---------------------------------------------------------------------------
# Physics catalog and discretisation selector (data-driven)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhysicsEntry:
    physics: str
    fields: tuple[str, ...]
    scalar_equations: str
    pde_type: str
    needs_ics: bool
    has_state: bool
    constitutive_inputs: tuple[str, ...]


def _load_data(name: str) -> dict | list:
    with resources.files("mechpipe.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def physics_catalog() -> tuple[PhysicsEntry, ...]:
    rows = _load_data("physics_catalog.json")
    return tuple(
        PhysicsEntry(
            physics=row["physics"],
            fields=tuple(row["fields"]),
            scalar_equations=row["scalar_equations"],
            pde_type=row["pde_type"],
            needs_ics=row["needs_ics"],
            has_state=row["has_state"],
            constitutive_inputs=tuple(row["constitutive_inputs"]),
        )
        for row in rows
    )


PROBLEM_TYPES = ("structural", "granular", "fluid", "thermal", "coupled")


def select_discretisation(
    problem_type: str,
    fracture: bool = False,
    large_deformation: bool = False,
    history_dependent: bool = False,
    free_surface: bool = False,
) -> tuple[str, str]:
    """First-match lookup in the shipped decision table.

    Returns (method, solver label).  Total over the input enum product.
    """
    if problem_type not in PROBLEM_TYPES:
        raise ValueError(f"unknown problem type {problem_type!r}")
    flags = {
        "fracture": fracture,
        "large_deformation": large_deformation,
        "history_dependent": history_dependent,
        "free_surface": free_surface,
    }
    for rule in _load_data("discretisation_rules.json"):
        if rule["problem_type"] not in (problem_type, "*"):
            continue
        if all(flags[k] == v for k, v in rule.get("when", {}).items()):
            return rule["method"], rule["solver"]
    raise RuntimeError(f"decision table has no rule for {problem_type} {flags}")
