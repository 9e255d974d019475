"""Quadratic head-circumference growth standard and the microcephaly classifier."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GA_CENTER = 39.0


@dataclass(frozen=True)
class GrowthStandard:
    """Reference mean head circumference (cm) as a quadratic in weeks from 39.

    ``sd`` is the reference standard deviation used to standardize. It is
    constant over (sex, gestational age) by default; it was calibrated so the
    BsNmN prior puts half its mass on a microcephaly risk below 31.5%.
    """

    intercept: float = 33.912
    sex: float = -0.450
    linear: float = 0.399
    quadratic: float = -0.016
    sd: float = 1.17
    ga_range: tuple[float, float] = (24.0, 45.0)

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("reference SD must be positive")

    def mean(self, sex, ga_weeks):
        g = np.asarray(ga_weeks, dtype=float) - GA_CENTER
        return self.intercept + self.sex * np.asarray(sex, dtype=float) + self.linear * g + self.quadratic * g * g

    def reference_sd(self, sex, ga_weeks):
        return np.full(np.broadcast(np.asarray(sex), np.asarray(ga_weeks)).shape, self.sd)[()]


DEFAULT_STANDARD = GrowthStandard()


def hc_zscore(sex, ga_weeks, hc_cm, std: GrowthStandard = DEFAULT_STANDARD, check_range: bool = True):
    """Head-circumference z-score for sex (0 male, 1 female) and gestational age.

    Raises ``ValueError`` for gestational ages outside the standard's range
    unless ``check_range`` is false, in which case the quadratic is
    extrapolated (forward simulation can wander outside the range).
    """
    ga = np.asarray(ga_weeks, dtype=float)
    if check_range:
        lo, hi = std.ga_range
        if np.any((ga < lo) | (ga > hi)):
            raise ValueError(f"gestational age outside supported range {std.ga_range}")
    return ((np.asarray(hc_cm, dtype=float) - std.mean(sex, ga)) / std.reference_sd(sex, ga))[()]


def is_microcephalic(sex, ga_weeks, hc_cm, std: GrowthStandard = DEFAULT_STANDARD, check_range: bool = True):
    # strictly below -2
    return (hc_zscore(sex, ga_weeks, hc_cm, std, check_range) < -2.0).astype(float)[()]
