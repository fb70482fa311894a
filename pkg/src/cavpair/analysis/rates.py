"""Pair-rate estimators, spectral brightness and unit-tagged rates."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np

from ..errors import PreconditionError, UnitMismatchError

__all__ = [
    "RateUnit",
    "Rate",
    "RateFactor",
    "RateEstimate",
    "BrightnessRecord",
    "BRIGHTNESS_TABLE",
    "estimate_rate_single_pass",
    "estimate_rate_cavity",
    "spectral_brightness",
    "histogram_pair_rate",
]


class RateUnit(str, Enum):
    PER_S_MW = "1/(s*mW)"
    PER_S_MHZ_MW = "1/(s*MHz*mW)"


@dataclass(frozen=True)
class Rate:
    """A rate value carrying its unit; arithmetic across units is refused."""

    value: float
    unit: RateUnit

    def __post_init__(self):
        object.__setattr__(self, "unit", RateUnit(self.unit))
        object.__setattr__(self, "value", float(self.value))

    def _same(self, other):
        if not isinstance(other, Rate):
            raise UnitMismatchError(f"cannot combine a {self.unit.value} rate with a bare {type(other).__name__}")
        if other.unit is not self.unit:
            raise UnitMismatchError(f"unit mismatch: {self.unit.value} vs {other.unit.value}")
        return other.value

    def __add__(self, other):
        return Rate(self.value + self._same(other), self.unit)

    def __sub__(self, other):
        return Rate(self.value - self._same(other), self.unit)

    def __lt__(self, other):
        return self.value < self._same(other)

    def __le__(self, other):
        return self.value <= self._same(other)

    def __gt__(self, other):
        return self.value > self._same(other)

    def __ge__(self, other):
        return self.value >= self._same(other)

    def __mul__(self, k):
        if isinstance(k, Rate):
            raise UnitMismatchError("product of two rates has no rate unit")
        return Rate(self.value * k, self.unit)

    __rmul__ = __mul__

    def __truediv__(self, k):
        if isinstance(k, Rate):
            return self.value / self._same(k)
        return Rate(self.value / k, self.unit)

    def ratio(self, other):
        return self.value / self._same(other)


class RateFactor(NamedTuple):
    name: str
    value: float
    exponent: int


@dataclass(frozen=True)
class RateEstimate:
    detected: Rate
    estimate: Rate
    correction: float
    factors: tuple[RateFactor, ...]

    @property
    def unit(self):
        return self.detected.unit

    def as_dict(self):
        return {
            "unit": self.unit.value,
            "detected": self.detected.value,
            "estimate": self.estimate.value,
            "correction": self.correction,
            "factors": [{"name": f.name, "value": f.value, "exponent": f.exponent} for f in self.factors],
        }


def _as_rate(value, unit):
    if isinstance(value, Rate):
        if value.unit is not RateUnit(unit):
            raise UnitMismatchError(f"expected a {RateUnit(unit).value} rate, got {value.unit.value}")
        return value
    return Rate(value, unit)


def _estimate(detected, unit, factors):
    rate = _as_rate(detected, unit)
    if not (rate.value >= 0 and math.isfinite(rate.value)):
        raise PreconditionError("detected rate must be finite and non-negative")
    for f in factors:
        if not 0 < f.value <= 1:
            raise PreconditionError(f"factor {f.name}={f.value} outside (0, 1]")
    correction = math.prod(f.value**f.exponent for f in factors)
    return RateEstimate(rate, Rate(rate.value / correction, rate.unit), correction, tuple(factors))


def estimate_rate_single_pass(R_detected, d, alpha1, alpha2, t, eta, unit=RateUnit.PER_S_MW):
    """Back-correct a detected pair rate for a single-pass source.

    Each photon passes its own collection factor and one filter; both see the
    detector efficiency.
    """
    factors = [
        RateFactor("d", d, 1),
        RateFactor("alpha1", alpha1, 1),
        RateFactor("alpha2", alpha2, 1),
        RateFactor("t", t, 2),
        RateFactor("eta", eta, 2),
    ]
    return _estimate(R_detected, unit, factors)


def estimate_rate_cavity(R_detected, d, alpha, alpha1, alpha2, t1, t2, eta, unit=RateUnit.PER_S_MHZ_MW):
    """Back-correct a detected pair rate for the cavity source with its filter chain."""
    factors = [
        RateFactor("d", d, 1),
        RateFactor("alpha", alpha, 2),
        RateFactor("alpha1", alpha1, 1),
        RateFactor("alpha2", alpha2, 1),
        RateFactor("t1", t1, 2),
        RateFactor("t2", t2, 2),
        RateFactor("eta", eta, 2),
    ]
    return _estimate(R_detected, unit, factors)


def spectral_brightness(pair_rate, bandwidth_MHz):
    """Pair rate per mW divided by the photon bandwidth."""
    if not bandwidth_MHz > 0:
        raise PreconditionError("bandwidth must be positive")
    rate = _as_rate(pair_rate, RateUnit.PER_S_MW)
    return Rate(rate.value / bandwidth_MHz, RateUnit.PER_S_MHZ_MW)


class BrightnessRecord(NamedTuple):
    source: str
    wavelength_nm: float
    bandwidth_MHz: float
    single_mode: bool
    fiber_coupled: bool
    entangled: bool
    brightness: Rate


def _row(name, lam, bw, sm, fib, ent, b):
    return BrightnessRecord(name, lam, bw, sm, fib, ent, Rate(b, RateUnit.PER_S_MHZ_MW))


# Published OPO pair sources; brightness values are the inferred figures as reported.
BRIGHTNESS_TABLE = (
    _row("Wang 2004", 860, 18, False, False, True, 0.12),
    _row("Kuklewicz 2006", 795, 22, False, True, True, 0.7),
    _row("Bao 2008", 780, 9.6, True, True, True, 6),
    _row("Scholz 2009", 893.4, 2.7, True, True, False, 330),
    _row("Wang 2010", 780, 20, True, True, False, 5.4),
    _row("Wolfgramm 2008", 795, 7, False, True, True, 70),
    _row("Pomarico 2009", 1560, 117, True, True, True, 17),
    _row("this source", 1560, 8, True, True, False, 134),
)


def histogram_pair_rate(hist, power_mW, window_ns, far_offset_ns=200.0):
    """Detected coincidence rate per mW from a delay-scanned histogram.

    Each detected pair contributes to the delays within one detector-2 window
    of its offset, so the floor-subtracted counts integrated over delay and
    divided by the window length count detected pairs. The floor is the mean
    of the far points. Returns (Rate in 1/(s*mW), standard error).
    """
    if not (power_mW > 0 and window_ns > 0):
        raise PreconditionError("pump power and window must be positive")
    delays = np.asarray(hist.delays_ns, dtype=float)
    counts = np.asarray(hist.coincidences, dtype=float)
    far = np.abs(delays) >= far_offset_ns
    if far.sum() < 1:
        raise PreconditionError(f"no delay points at |delay| >= {far_offset_ns} ns for the floor")
    floor = counts[far].mean()
    floor_var = floor / far.sum()
    near = ~far
    order = np.argsort(delays[near])
    x = delays[near][order]
    c = counts[near][order]
    if x.size < 2:
        raise PreconditionError("need at least two near-delay points to integrate")
    w = np.zeros(x.size)
    dx = np.diff(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    scale = window_ns * hist.accumulation_s * power_mW
    value = float(np.sum(w * (c - floor)) / scale)
    se = float(math.sqrt(np.sum(w * w * c) + w.sum() ** 2 * floor_var) / scale)
    return Rate(value, RateUnit.PER_S_MW), se
