"""Uncertainty core: density families, fuzzy-weighted material mixtures,
differential entropy and information gain, and residual analysis of point
estimates against their plausibility bands.

Entropy is differential, in nats.  Mixtures of point masses are treated as
discrete distributions with Shannon entropy; continuous and discrete
components may not be mixed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.integrate import simpson

from .rounding import percent_display

_WEIGHT_TOL = 1e-9
_NORMAL_SUPPORT_SIGMAS = 8.5
_QUADRATURE_POINTS = 2001


class Density:
    """Base class; construction validates parameters, evaluation never raises
    on finite x."""

    family = "none"

    def pdf(self, x: float) -> float:
        raise NotImplementedError

    def cdf(self, x: float) -> float:
        raise NotImplementedError

    def mean(self) -> float:
        raise NotImplementedError

    def support(self) -> tuple[float, float]:
        raise NotImplementedError

    def entropy(self) -> float:
        """Differential entropy in nats (closed form where available)."""
        return quadrature_entropy(self)

    def to_doc(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class Uniform(Density):
    a: float
    b: float
    family = "uniform"

    def __post_init__(self) -> None:
        if not self.a < self.b:
            raise ValueError("uniform requires a < b")

    def pdf(self, x: float) -> float:
        return 1.0 / (self.b - self.a) if self.a <= x <= self.b else 0.0

    def cdf(self, x: float) -> float:
        if x <= self.a:
            return 0.0
        if x >= self.b:
            return 1.0
        return (x - self.a) / (self.b - self.a)

    def mean(self) -> float:
        return 0.5 * (self.a + self.b)

    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    def entropy(self) -> float:
        return math.log(self.b - self.a)

    def to_doc(self) -> dict:
        return {"family": "uniform", "a": self.a, "b": self.b}


@dataclass(frozen=True)
class Normal(Density):
    mu: float
    sigma: float
    family = "normal"

    def __post_init__(self) -> None:
        if not self.sigma > 0:
            raise ValueError("normal requires sigma > 0")

    def pdf(self, x: float) -> float:
        z = (x - self.mu) / self.sigma
        return math.exp(-0.5 * z * z) / (self.sigma * math.sqrt(2.0 * math.pi))

    def cdf(self, x: float) -> float:
        return 0.5 * (1.0 + math.erf((x - self.mu) / (self.sigma * math.sqrt(2.0))))

    def mean(self) -> float:
        return self.mu

    def support(self) -> tuple[float, float]:
        spread = _NORMAL_SUPPORT_SIGMAS * self.sigma
        return (self.mu - spread, self.mu + spread)

    def entropy(self) -> float:
        return 0.5 * math.log(2.0 * math.pi * math.e * self.sigma**2)

    def to_doc(self) -> dict:
        return {"family": "normal", "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Triangular(Density):
    a: float
    c: float  # mode
    b: float
    family = "triangular"

    def __post_init__(self) -> None:
        if not (self.a <= self.c <= self.b and self.a < self.b):
            raise ValueError("triangular requires a <= c <= b with a < b")

    def pdf(self, x: float) -> float:
        a, c, b = self.a, self.c, self.b
        if x < a or x > b:
            return 0.0
        if x < c:
            return 2.0 * (x - a) / ((b - a) * (c - a))
        if x > c:
            return 2.0 * (b - x) / ((b - a) * (b - c))
        return 2.0 / (b - a)

    def cdf(self, x: float) -> float:
        a, c, b = self.a, self.c, self.b
        if x <= a:
            return 0.0
        if x >= b:
            return 1.0
        if x <= c:
            return (x - a) ** 2 / ((b - a) * (c - a)) if c > a else 0.0
        return 1.0 - (b - x) ** 2 / ((b - a) * (b - c))

    def mean(self) -> float:
        return (self.a + self.b + self.c) / 3.0

    def support(self) -> tuple[float, float]:
        return (self.a, self.b)

    def entropy(self) -> float:
        return 0.5 + math.log((self.b - self.a) / 2.0)

    def to_doc(self) -> dict:
        return {"family": "triangular", "a": self.a, "c": self.c, "b": self.b}


@dataclass(frozen=True)
class PointMass(Density):
    value: float
    family = "point"

    def pdf(self, x: float) -> float:
        raise TypeError("point mass has no continuous pdf")

    def cdf(self, x: float) -> float:
        return 1.0 if x >= self.value else 0.0

    def mean(self) -> float:
        return self.value

    def support(self) -> tuple[float, float]:
        return (self.value, self.value)

    def to_doc(self) -> dict:
        return {"family": "point", "value": self.value}


class Mixture(Density):
    """Weighted mixture; weights must be non-negative and sum to 1 +/- 1e-9.

    All-continuous mixtures integrate; all-point mixtures are discrete with
    Shannon entropy.  Mixed discrete/continuous is rejected.
    """

    family = "mixture"

    def __init__(self, components: Sequence[tuple[float, Density]]):
        if not components:
            raise ValueError("mixture requires components")
        weights = [w for w, _ in components]
        if any(w < 0 for w in weights):
            raise ValueError("mixture weights must be non-negative")
        if abs(sum(weights) - 1.0) > _WEIGHT_TOL:
            raise ValueError(f"mixture weights sum to {sum(weights)!r}, expected 1")
        kinds = {isinstance(d, PointMass) for _, d in components}
        if len(kinds) > 1:
            raise ValueError("cannot mix discrete and continuous components")
        self.components = tuple((float(w), d) for w, d in components)
        self.discrete = isinstance(components[0][1], PointMass)

    def pdf(self, x: float) -> float:
        if self.discrete:
            raise TypeError("discrete mixture has no continuous pdf")
        return sum(w * d.pdf(x) for w, d in self.components)

    def cdf(self, x: float) -> float:
        return sum(w * d.cdf(x) for w, d in self.components)

    def mean(self) -> float:
        return sum(w * d.mean() for w, d in self.components)

    def support(self) -> tuple[float, float]:
        los, his = zip(*(d.support() for _, d in self.components))
        return (min(los), max(his))

    def entropy(self) -> float:
        if self.discrete:
            # Shannon entropy over aggregated atoms.
            atoms: dict[float, float] = {}
            for w, d in self.components:
                assert isinstance(d, PointMass)
                atoms[d.value] = atoms.get(d.value, 0.0) + w
            return -sum(p * math.log(p) for p in atoms.values() if p > 0.0)
        return quadrature_entropy(self)

    def to_doc(self) -> dict:
        return {
            "family": "mixture",
            "components": [{"weight": w, "density": d.to_doc()} for w, d in self.components],
        }


def density_from_doc(doc: Mapping) -> Optional[Density]:
    """Inverse of Density.to_doc; family 'none' maps to None."""
    family = doc["family"]
    if family == "none":
        return None
    if family == "uniform":
        return Uniform(doc["a"], doc["b"])
    if family == "normal":
        return Normal(doc["mu"], doc["sigma"])
    if family == "triangular":
        return Triangular(doc["a"], doc["c"], doc["b"])
    if family == "point":
        return PointMass(doc["value"])
    if family == "mixture":
        return Mixture(
            [(c["weight"], density_from_doc(c["density"])) for c in doc["components"]]
        )
    raise ValueError(f"unknown density family {family!r}")


def quadrature_entropy(density: Density, points: int = _QUADRATURE_POINTS) -> float:
    """Composite-Simpson differential entropy over the support hull."""
    lo, hi = density.support()
    xs = np.linspace(lo, hi, points)
    ps = np.array([density.pdf(float(x)) for x in xs])
    integrand = np.where(ps > 0.0, -ps * np.log(np.where(ps > 0.0, ps, 1.0)), 0.0)
    return float(simpson(integrand, x=xs))


def normalization(density: Density, points: int = _QUADRATURE_POINTS) -> float:
    lo, hi = density.support()
    xs = np.linspace(lo, hi, points)
    ps = np.array([density.pdf(float(x)) for x in xs])
    return float(simpson(ps, x=xs))


def entropy(density: Density) -> float:
    return density.entropy()


def info_gain(prior: Density, posterior: Density) -> float:
    """H(prior) - H(posterior); requires posterior support within prior support."""
    plo, phi = prior.support()
    qlo, qhi = posterior.support()
    tol = 1e-12 * max(1.0, abs(plo), abs(phi))
    if qlo < plo - tol or qhi > phi + tol:
        raise ValueError("posterior support exceeds prior support; gain undefined")
    return prior.entropy() - posterior.entropy()


def marginalize_material(
    hypotheses: Sequence[Mapping], property_name: str
) -> Density:
    """Fuzzy-membership-weighted mixture of per-hypothesis property densities.

    Each hypothesis carries a membership mu and a map of property densities
    (doc form or Density).  A single full-membership hypothesis returns its
    density unchanged.
    """
    if not hypotheses:
        raise ValueError("no hypotheses")
    mus = [h["membership"] for h in hypotheses]
    if abs(sum(mus) - 1.0) > _WEIGHT_TOL:
        raise ValueError(f"memberships sum to {sum(mus)!r}, expected 1")
    parts: list[tuple[float, Density]] = []
    for h in hypotheses:
        density = h["properties"][property_name]
        if not isinstance(density, Density):
            density = density_from_doc(density)
        parts.append((float(h["membership"]), density))
    if len(parts) == 1:
        return parts[0][1]
    return Mixture(parts)


# ---------------------------------------------------------------------------
# Residual analysis against plausibility bands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ResidualRecord:
    name: str
    estimate: float
    band: tuple[float, float]
    true_value: float
    residual_fraction: float
    within_band: bool

    @property
    def display(self) -> str:
        """Table cell: 'Yes' when inside the band, else 'No (+/-NN%)'."""
        if self.within_band:
            return "Yes"
        return f"No ({percent_display(self.residual_fraction)})"

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "estimate": self.estimate,
            "band": list(self.band),
            "true_value": self.true_value,
            "residual_fraction": self.residual_fraction,
            "within_band": self.within_band,
            "display": self.display,
        }


def residual_analysis(
    estimates: Sequence[Mapping], true_values: Mapping[str, float]
) -> list[ResidualRecord]:
    """Pair estimates with true values by name.

    Residual fraction is (estimate - true)/true; band containment uses closed
    endpoints.  Every supplied true value must match an estimate.
    """
    by_name = {e["name"]: e for e in estimates}
    unmatched = set(true_values) - set(by_name)
    if unmatched:
        raise KeyError(f"true values with no matching estimate: {sorted(unmatched)}")
    records = []
    for name, true_value in true_values.items():
        est = by_name[name]
        value = est["value"]
        lo, hi = est["band"]
        records.append(
            ResidualRecord(
                name=name,
                estimate=value,
                band=(lo, hi),
                true_value=true_value,
                residual_fraction=(value - true_value) / true_value,
                within_band=lo <= true_value <= hi,
            )
        )
    return records
