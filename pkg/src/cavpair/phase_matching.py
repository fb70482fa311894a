"""Refractive-index models and quasi-phase-matching for periodically poled crystals.

Indices follow a four-term Sellmeier form at a reference temperature,

    n_ref(lam)^2 = A + B / (lam^2 - C) - D * lam^2      (lam in um)

plus a linear thermo-optic correction ``dn/dT * (T - T_ref)`` whose slope is
tabulated per axis and wavelength band and interpolated between band
centres. Coefficients are configuration, not constants of this module.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import InvariantError, PreconditionError, RangeError, RootNotBracketedError

__all__ = [
    "ThermoOpticBand",
    "AxisDispersion",
    "IndexModel",
    "QpmCrystal",
    "TuningCurve",
    "refractive_index",
    "qpm_mismatch",
    "tuning_curve",
    "degenerate_temperature",
]

# Energy-conservation tolerance on 1/lam_p - 1/lam_s - 1/lam_i, in nm^-1.
ENERGY_TOL_PER_NM = 1e-9


@dataclass(frozen=True)
class ThermoOpticBand:
    lo_nm: float
    hi_nm: float
    slope_per_K: float

    def contains(self, lam_nm):
        return (lam_nm >= self.lo_nm) & (lam_nm <= self.hi_nm)


@dataclass(frozen=True)
class AxisDispersion:
    """Dispersion of one crystal axis.

    Attributes:
        sellmeier: (A, B, C, D) with wavelength in micrometres.
        thermo_optic: dn/dT bands covering the valid wavelengths.
    """

    sellmeier: tuple[float, float, float, float]
    thermo_optic: tuple[ThermoOpticBand, ...]

    def __post_init__(self):
        if len(self.sellmeier) != 4:
            raise PreconditionError("sellmeier needs exactly four coefficients (A, B, C, D)")
        object.__setattr__(self, "sellmeier", tuple(float(c) for c in self.sellmeier))
        object.__setattr__(self, "thermo_optic", tuple(self.thermo_optic))

    @classmethod
    def constant(cls, n, dn_dT=0.0, lo_nm=1.0, hi_nm=1e5):
        """Wavelength-independent index (useful for synthetic models)."""
        return cls((n * n, 0.0, 0.0, 0.0), (ThermoOpticBand(lo_nm, hi_nm, dn_dT),))

    def n_ref(self, lam_nm):
        A, B, C, D = self.sellmeier
        lam_um2 = (np.asarray(lam_nm, dtype=float) * 1e-3) ** 2
        if B == 0.0:
            n2 = A - D * lam_um2
        else:
            n2 = A + B / (lam_um2 - C) - D * lam_um2
        return np.sqrt(n2)

    def dn_dT(self, lam_nm):
        """Thermo-optic slope; each band's value holds at its centre and is
        interpolated linearly between centres so n stays continuous in lam."""
        lam = np.asarray(lam_nm, dtype=float)
        covered = np.zeros(lam.shape, dtype=bool)
        for band in self.thermo_optic:
            covered |= band.contains(lam)
        if not np.all(covered):
            bad = np.ravel(lam)[np.ravel(~covered)]
            raise RangeError("wavelength_nm", float(bad[0]), "thermo-optic bands")
        bands = sorted(self.thermo_optic, key=lambda b: b.lo_nm + b.hi_nm)
        centres = [0.5 * (b.lo_nm + b.hi_nm) for b in bands]
        slope = np.interp(lam, centres, [b.slope_per_K for b in bands])
        return slope if lam.ndim else float(slope)


@dataclass(frozen=True)
class IndexModel:
    axes: Mapping[str, AxisDispersion]
    reference_C: float
    wavelength_range_nm: tuple[float, float]
    temperature_range_C: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "axes", dict(self.axes))
        lo, hi = self.wavelength_range_nm
        tlo, thi = self.temperature_range_C
        if not (0 < lo < hi) or not (tlo < thi):
            raise PreconditionError("validity ranges must be non-empty and positive in wavelength")
        lam = np.linspace(lo, hi, 64)
        for name, axis in self.axes.items():
            for T in (tlo, thi):
                n = axis.n_ref(lam) + axis.dn_dT(lam) * (T - self.reference_C)
                if not np.all(np.isfinite(n)) or np.any(n <= 1.0):
                    raise InvariantError(f"axis {name!r}: index must exceed 1 over the valid range")


def _check_range(name, value, bounds):
    v = np.asarray(value, dtype=float)
    lo, hi = bounds
    bad = (v < lo) | (v > hi) | ~np.isfinite(v)
    if np.any(bad):
        raise RangeError(name, float(np.ravel(v)[np.argmax(np.ravel(bad))]), (lo, hi))


def refractive_index(model: IndexModel, axis: str, lam_nm, T_C):
    """Index of ``axis`` at wavelength ``lam_nm`` and temperature ``T_C`` (broadcasts)."""
    if axis not in model.axes:
        raise PreconditionError(f"unknown axis {axis!r}; model has {sorted(model.axes)}")
    _check_range("wavelength_nm", lam_nm, model.wavelength_range_nm)
    _check_range("temperature_C", T_C, model.temperature_range_C)
    disp = model.axes[axis]
    T = np.asarray(T_C, dtype=float)
    n = disp.n_ref(lam_nm) + disp.dn_dT(lam_nm) * (T - model.reference_C)
    return float(n) if np.ndim(n) == 0 else n


@dataclass(frozen=True)
class QpmCrystal:
    """Periodically poled crystal.

    ``grating_sign`` selects the direction of the poling grating vector in the
    mismatch: ``dk = 2*pi*(n_p/lam_p - n_s/lam_s - n_i/lam_i - grating_sign/period)``.
    Type-II KTP at 780 -> 1560 nm has k_p < k_s + k_i and needs ``-1``.
    """

    length_mm: float
    period_um: float
    model: IndexModel
    axes: Mapping[str, str] = field(
        default_factory=lambda: {"pump": "y", "signal": "y", "idler": "z"}
    )
    grating_sign: int = 1

    def __post_init__(self):
        if not self.length_mm > 0 or not self.period_um > 0:
            raise PreconditionError("crystal length and poling period must be positive")
        if self.grating_sign not in (1, -1):
            raise PreconditionError("grating_sign must be +1 or -1")
        object.__setattr__(self, "axes", dict(self.axes))
        for fld in ("pump", "signal", "idler"):
            ax = self.axes.get(fld)
            if ax not in self.model.axes:
                raise PreconditionError(f"{fld} axis {ax!r} not present in index model")


def qpm_mismatch(crystal: QpmCrystal, lam_p, lam_s, lam_i, T_C):
    """Phase mismatch in rad/m; zero at perfect quasi-phase-matching."""
    if abs(1.0 / lam_p - 1.0 / lam_s - 1.0 / lam_i) > ENERGY_TOL_PER_NM:
        raise InvariantError(
            f"energy conservation violated: 1/{lam_p} != 1/{lam_s} + 1/{lam_i} (nm^-1)"
        )
    m, ax = crystal.model, crystal.axes
    n_p = refractive_index(m, ax["pump"], lam_p, T_C)
    n_s = refractive_index(m, ax["signal"], lam_s, T_C)
    n_i = refractive_index(m, ax["idler"], lam_i, T_C)
    per_nm = (
        n_p / lam_p - n_s / lam_s - n_i / lam_i - crystal.grating_sign / (crystal.period_um * 1e3)
    )
    return 2 * np.pi * per_nm * 1e9


@dataclass(frozen=True)
class TuningCurve:
    temperature_C: np.ndarray
    normalized_power: np.ndarray

    @property
    def peak_temperature(self):
        return float(self.temperature_C[np.argmax(self.normalized_power)])

    def rows(self):
        return list(zip(self.temperature_C.tolist(), self.normalized_power.tolist()))


def _normalize_peak(values):
    values = np.asarray(values, dtype=float)
    top = values.max()
    if not top > 0:
        raise PreconditionError("curve has no positive values to normalize")
    return values / top


def tuning_curve(crystal: QpmCrystal, lam_p, lam_s, lam_i, T_range: Sequence[float], samples: int):
    """Normalized sinc^2(dk L/2) temperature tuning curve."""
    if samples < 2:
        raise PreconditionError("tuning curve needs at least two samples")
    t_lo, t_hi = T_range
    if not t_hi > t_lo:
        raise PreconditionError(f"empty temperature range {T_range}")
    T = np.linspace(t_lo, t_hi, samples)
    dk = qpm_mismatch(crystal, lam_p, lam_s, lam_i, T)
    arg = dk * crystal.length_mm * 1e-3 / 2
    # np.sinc is sin(pi x)/(pi x)
    power = np.sinc(arg / np.pi) ** 2
    return TuningCurve(T, _normalize_peak(power))


def degenerate_temperature(crystal: QpmCrystal, lam_p, T_bracket, tol=1e-3, max_iter=200):
    """Temperature of degenerate phase matching (lam_s = lam_i = 2 lam_p) by bisection."""
    lam_d = 2.0 * lam_p
    lo, hi = float(T_bracket[0]), float(T_bracket[1])
    f_lo = qpm_mismatch(crystal, lam_p, lam_d, lam_d, lo)
    f_hi = qpm_mismatch(crystal, lam_p, lam_d, lam_d, hi)
    if abs(f_lo) <= tol:
        return lo
    if abs(f_hi) <= tol:
        return hi
    if np.sign(f_lo) == np.sign(f_hi):
        raise RootNotBracketedError(
            f"phase mismatch has the same sign at {lo} C ({f_lo:.4g}) and {hi} C ({f_hi:.4g})"
        )
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        f_mid = qpm_mismatch(crystal, lam_p, lam_d, lam_d, mid)
        if abs(f_mid) <= tol or mid in (lo, hi):
            break
        if np.sign(f_mid) == np.sign(f_lo):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return mid
