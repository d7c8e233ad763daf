"""Display rounding conventions (half-up, like hand calculations report)."""

from __future__ import annotations

from decimal import ROUND_HALF_UP, Decimal


def round_half_up(value: float, ndigits: int = 0) -> float:
    quantum = Decimal(1).scaleb(-ndigits)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def round_to_grain(value: float, grain: float) -> float:
    """Round to the nearest multiple of `grain` (half away from zero);
    grain <= 0 disables rounding."""
    if grain <= 0:
        return value
    steps = Decimal(repr(value)) / Decimal(repr(grain))
    return float(steps.quantize(Decimal(1), rounding=ROUND_HALF_UP) * Decimal(repr(grain)))


def fos_display(value: float) -> str:
    """Factors of safety are reported to 2 decimals, half-up."""
    return f"{round_half_up(value, 2):.2f}"


def percent_display(fraction: float) -> str:
    """Signed residual percentage rounded to the nearest integer percent."""
    pct = round_half_up(fraction * 100.0, 0)
    return f"{pct:+.0f}%"
