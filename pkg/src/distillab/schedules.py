"""Sigmoid position-weight schedule.

A token at one-based position t of an L-token sequence sits at position
fraction r = (t - 0.5) / L. Its training weight is

    w(r) = w_min + (1 - w_min) * sigma((r - midpoint) / steepness)

which rises monotonically from about w_min at the start of the sequence to
about 1 near the end, crossing w_min + (1 - w_min) / 2 exactly at the
midpoint. Four named presets span gentle to aggressive early-token
suppression.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError


@dataclass(frozen=True)
class PositionSchedule:
    """Parameters of the sigmoid weight curve."""

    w_min: float  # floor weight in [0, 1]
    midpoint: float  # position fraction where the rise is half-complete, in [0, 1]
    steepness: float  # sigmoid scale, > 0 (smaller = sharper)

    def __post_init__(self) -> None:
        if not (0.0 <= self.w_min <= 1.0):
            raise InvalidInputError(f"w_min must lie in [0, 1], got {self.w_min!r}")
        if not (0.0 <= self.midpoint <= 1.0):
            raise InvalidInputError(f"midpoint must lie in [0, 1], got {self.midpoint!r}")
        if not (self.steepness > 0.0) or not np.isfinite(self.steepness):
            raise InvalidInputError(f"steepness must be positive, got {self.steepness!r}")


PRESETS: dict[str, PositionSchedule] = {
    "mild": PositionSchedule(0.50, 0.20, 0.20),
    "moderate": PositionSchedule(0.25, 0.30, 0.10),
    "sharp": PositionSchedule(0.10, 0.40, 0.05),
    "aggressive": PositionSchedule(0.05, 0.50, 0.05),
}


def preset(name: str) -> PositionSchedule:
    """Look up a preset by case-insensitive name."""
    key = name.strip().lower()
    if key not in PRESETS:
        raise InvalidInputError(
            f"unknown schedule preset {name!r}; choose from {sorted(PRESETS)}"
        )
    return PRESETS[key]


def position_fraction(t: int, length: int) -> float:
    """Fraction (t - 0.5) / length for one-based position t of a length-L sequence."""
    if length < 1:
        raise InvalidInputError(f"sequence length must be >= 1, got {length}")
    if not (1 <= t <= length):
        raise InvalidInputError(f"position must satisfy 1 <= t <= {length}, got {t}")
    return (t - 0.5) / length


def weight(r, schedule: PositionSchedule):
    """Schedule weight at position fraction(s) `r` (scalar or array).

    Uses the numerically stable logistic, so weight(midpoint) evaluates the
    sigmoid at exactly 0 and returns w_min + (1 - w_min) * 0.5 exactly.
    """
    arr = np.asarray(r, dtype=float)
    if np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError("position fractions must lie in [0, 1]")
    w = schedule.w_min + (1.0 - schedule.w_min) * expit((arr - schedule.midpoint) / schedule.steepness)
    if np.ndim(r) == 0:
        return float(w)
    return w


def weights_for_length(length: int, schedule: PositionSchedule) -> np.ndarray:
    """Vector of schedule weights for positions 1..length."""
    if length < 1:
        raise InvalidInputError(f"sequence length must be >= 1, got {length}")
    t = np.arange(1, length + 1, dtype=float)
    return weight((t - 0.5) / length, schedule)
