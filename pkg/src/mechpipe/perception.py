"""Extraction boundary: plausibility-banded parameter estimates, the
manufacturing-step geometry schema with junction connectivity, consensus
scale estimation, and the image-to-geometry pathway selector.

Actual extraction is replayed from fixture files; this module owns the
schemas, invariant checks, and the deterministic rules around them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

from .uncertainty import Density, density_from_doc

CONSENSUS_SPREAD_LIMIT = 0.25
DOMINANT_MEMBERSHIP_MIN = 0.6
_MEMBERSHIP_TOL = 1e-9

BAND_KINDS = ("self-reported-plausibility", "measured")


@dataclass(frozen=True)
class ParamEstimate:
    """Set-valued estimate: point value, closed plausibility band, optional
    density, and a confidence score in [0, 1]."""

    name: str
    value: float
    band: tuple[float, float]
    unit: str = ""
    density: Optional[Density] = None
    confidence: float = 1.0
    band_kind: str = "self-reported-plausibility"

    def __post_init__(self) -> None:
        lo, hi = self.band
        if not lo <= self.value <= hi:
            raise ValueError(f"{self.name}: point {self.value} outside band [{lo}, {hi}]")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"{self.name}: confidence must be in [0, 1]")
        if self.band_kind not in BAND_KINDS:
            raise ValueError(f"{self.name}: unknown band kind {self.band_kind!r}")

    def contains(self, true_value: float) -> bool:
        lo, hi = self.band
        return lo <= true_value <= hi

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "value": self.value,
            "band": list(self.band),
            "unit": self.unit,
            "density": self.density.to_doc() if self.density else {"family": "none"},
            "confidence": self.confidence,
            "band_kind": self.band_kind,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "ParamEstimate":
        return cls(
            name=doc["name"],
            value=doc["value"],
            band=tuple(doc["band"]),
            unit=doc.get("unit", ""),
            density=density_from_doc(doc["density"]) if "density" in doc else None,
            confidence=doc.get("confidence", 1.0),
            band_kind=doc.get("band_kind", "self-reported-plausibility"),
        )


@dataclass(frozen=True)
class GeometrySpec:
    """Manufacturing-step description of a bent-bar component."""

    base_stock: dict  # width, thickness, developed_length (mm)
    operations: tuple[dict, ...]  # ordered bend/hole steps
    junction_connectivity: tuple[dict, ...] = ()
    coordinate_system: str = "bend-corner origin, arms along +X/+Y"

    def to_doc(self) -> dict:
        return {
            "base_stock": self.base_stock,
            "operations": list(self.operations),
            "junction_connectivity": list(self.junction_connectivity),
            "coordinate_system": self.coordinate_system,
        }

    @classmethod
    def from_doc(cls, doc: Mapping[str, Any]) -> "GeometrySpec":
        return cls(
            base_stock=dict(doc["base_stock"]),
            operations=tuple(doc["operations"]),
            junction_connectivity=tuple(doc.get("junction_connectivity", ())),
            coordinate_system=doc.get("coordinate_system", ""),
        )

    def sanity_warnings(self) -> list[str]:
        """Structural consistency checks; violations are warnings for the
        reviewing engineer, never hard errors."""
        warnings: list[str] = []
        t = self.base_stock["thickness"]
        arm_length = self.base_stock.get("arm_length")
        for op in self.operations:
            if op["op"] == "bend":
                r_i, r_o = op["inner_radius"], op["outer_radius"]
                if r_i < 0:
                    warnings.append(f"bend inner radius {r_i} is negative")
                if r_i < t:
                    warnings.append(f"bend radius {r_i} below thickness {t}")
                if abs(r_o - (r_i + t)) > 0.05 * t + 1e-9:
                    warnings.append(
                        f"outer radius {r_o} inconsistent with inner {r_i} + thickness {t}"
                    )
            elif op["op"] == "hole":
                pos = op["position_from_edge"]
                if arm_length is not None and not 0.0 <= pos <= arm_length:
                    warnings.append(
                        f"hole at {pos} mm outside member of length {arm_length} mm"
                    )
                sink = op.get("countersink")
                if sink is not None and sink["diameter"] <= op["diameter"]:
                    warnings.append(
                        f"countersink diameter {sink['diameter']} not larger than hole "
                        f"diameter {op['diameter']}"
                    )
        return warnings


@dataclass(frozen=True)
class MaterialHypothesis:
    label: str
    membership: float
    properties: dict  # property name -> density doc

    def __post_init__(self) -> None:
        if not 0.0 <= self.membership <= 1.0:
            raise ValueError("membership must be in [0, 1]")


def validate_hypothesis_set(hypotheses: Sequence[MaterialHypothesis]) -> MaterialHypothesis:
    """Check memberships sum to 1 and return the dominant hypothesis (which
    must clear the proceed threshold to be treated as settled)."""
    total = sum(h.membership for h in hypotheses)
    if abs(total - 1.0) > _MEMBERSHIP_TOL:
        raise ValueError(f"memberships sum to {total}, expected 1")
    return max(hypotheses, key=lambda h: h.membership)


# ---------------------------------------------------------------------------
# Fixture loading
# ---------------------------------------------------------------------------


def load_extraction(fixture_ref: str | Path | Mapping[str, Any]) -> dict:
    """Load and validate an extraction fixture.

    Returns {'geometry': GeometrySpec, 'estimates': [ParamEstimate],
    'materials': [MaterialHypothesis], 'metadata': dict, 'warnings': [str]}.
    Geometry invariant violations become warnings, not errors.
    """
    if isinstance(fixture_ref, (str, Path)):
        path = Path(fixture_ref)
        if not path.exists():
            raise FileNotFoundError(f"extraction fixture missing: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
    else:
        doc = dict(fixture_ref)

    geometry = GeometrySpec.from_doc(doc["geometry"])
    estimates = [ParamEstimate.from_doc(e) for e in doc["parameters"].values()]
    materials = [
        MaterialHypothesis(h["label"], h["membership"], h["properties"])
        for h in doc.get("material_hypotheses", [])
    ]
    if materials:
        validate_hypothesis_set(materials)
    return {
        "geometry": geometry,
        "estimates": estimates,
        "materials": materials,
        "metadata": doc.get("metadata", {}),
        "warnings": geometry.sanity_warnings(),
    }


# ---------------------------------------------------------------------------
# Consensus scale estimation
# ---------------------------------------------------------------------------


def consensus_scale(estimates: Sequence[float]) -> tuple[float, float, bool]:
    """Agreement check over three independent dimension estimates.

    Spread is (max - min)/min; the estimates agree when spread <= 25%.  The
    first estimate is the designated primary (hand-scale) method and is the
    accepted value on agreement.
    """
    if len(estimates) != 3:
        raise ValueError("consensus requires exactly three estimates")
    if any(e <= 0 for e in estimates):
        raise ValueError("estimates must be positive")
    spread = (max(estimates) - min(estimates)) / min(estimates)
    ok = spread <= CONSENSUS_SPREAD_LIMIT
    return estimates[0], spread, ok


# ---------------------------------------------------------------------------
# Pathway selection
# ---------------------------------------------------------------------------

PATHWAYS = (
    "vlm-direct",
    "vlm-script-cad",
    "edge-extrude",
    "segment-pointcloud",
    "sfm-mesh",
    "text-cad",
)

IMAGE_QUALITIES = ("clean-drawing", "photo", "sketch")
COMPONENT_CLASSES = ("prismatic", "axisymmetric", "freeform")


def select_pathway(
    image_quality: str,
    views: int,
    has_text_spec: bool,
    component_class: str,
) -> str:
    """Deterministic pathway rule table.

    Text spec wins outright; multiple views enable structure-from-motion;
    prismatic components with clean edges extrude from a 2D profile;
    otherwise script-built CAD, falling back to direct interpretation for
    freeform sketches.
    """
    if image_quality not in IMAGE_QUALITIES:
        raise ValueError(f"unknown image quality {image_quality!r}")
    if component_class not in COMPONENT_CLASSES:
        raise ValueError(f"unknown component class {component_class!r}")
    if has_text_spec:
        return "text-cad"
    if views >= 2:
        return "sfm-mesh"
    if component_class in ("prismatic", "axisymmetric") and image_quality == "clean-drawing":
        return "edge-extrude"
    if component_class == "freeform" and image_quality == "sketch":
        return "vlm-direct"
    return "vlm-script-cad"
