"""Linear standing-wave cavity arithmetic and triple-resonance search."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.constants import c as SPEED_OF_LIGHT

from .errors import InvariantError, PreconditionError
from .phase_matching import IndexModel, refractive_index

__all__ = [
    "SPEED_OF_LIGHT",
    "Segment",
    "CavityGeometry",
    "CombSpec",
    "IntracavityCrystal",
    "ResonancePoint",
    "optical_path_length",
    "free_spectral_range",
    "finesse",
    "circulating_power",
    "resonance_length_tolerance",
    "temperature_detuning_fwhm",
    "mode_comb",
    "resonance_residuals",
    "find_triple_resonance",
]


@dataclass(frozen=True)
class Segment:
    """One element of the optical path: physical length and index per named wavelength."""

    length_mm: float
    index: Mapping[str, float]
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "index", dict(self.index))
        if not self.length_mm > 0:
            raise PreconditionError(f"segment {self.name!r}: length must be positive")
        for label, n in self.index.items():
            if not n >= 1.0:
                raise PreconditionError(f"segment {self.name!r}: index for {label!r} below 1")


@dataclass(frozen=True)
class CavityGeometry:
    segments: tuple[Segment, ...]
    input_transmittance: Mapping[str, float] = field(default_factory=dict)
    output_transmittance: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        object.__setattr__(self, "input_transmittance", dict(self.input_transmittance))
        object.__setattr__(self, "output_transmittance", dict(self.output_transmittance))
        if not self.segments:
            raise PreconditionError("cavity needs at least one segment")
        labels = set(self.segments[0].index)
        for seg in self.segments[1:]:
            if set(seg.index) != labels:
                raise PreconditionError(
                    f"segment {seg.name!r} defines indices for {sorted(seg.index)}, expected {sorted(labels)}"
                )
        for side in (self.input_transmittance, self.output_transmittance):
            for label, t in side.items():
                if not 0.0 < t < 1.0:
                    raise PreconditionError(f"mirror transmittance for {label!r} must lie in (0, 1)")

    @property
    def wavelengths(self):
        return tuple(self.segments[0].index)

    def segment_index(self, name):
        for i, seg in enumerate(self.segments):
            if seg.name == name:
                return i
        raise KeyError(f"no segment named {name!r}")


def optical_path_length(geometry: CavityGeometry, wavelength: str):
    """One-pass optical path in mm for the wavelength label."""
    if wavelength not in geometry.segments[0].index:
        raise KeyError(f"unknown wavelength label {wavelength!r}; known: {geometry.wavelengths}")
    return float(sum(seg.length_mm * seg.index[wavelength] for seg in geometry.segments))


def free_spectral_range(geometry: CavityGeometry, wavelength: str):
    """Standing-wave FSR c / (2 * one-pass optical path), in Hz."""
    return SPEED_OF_LIGHT / (2.0 * optical_path_length(geometry, wavelength) * 1e-3)


def finesse(fsr, bandwidth):
    if not (fsr > 0 and bandwidth > 0):
        raise PreconditionError("FSR and bandwidth must be positive")
    return fsr / bandwidth


def circulating_power(leaked_power, output_transmittance):
    """Intracavity power inferred from the power leaking through the output mirror."""
    if not 0.0 < output_transmittance < 1.0:
        raise PreconditionError("output transmittance must lie in (0, 1)")
    if leaked_power < 0:
        raise PreconditionError("leaked power must be non-negative")
    return leaked_power / output_transmittance


def resonance_length_tolerance(wavelength_nm, finesse_value):
    """Optical length change (nm) that moves a resonance by one linewidth: lam / (2F)."""
    if not (wavelength_nm > 0 and finesse_value > 0):
        raise PreconditionError("wavelength and finesse must be positive")
    return wavelength_nm / (2.0 * finesse_value)


def temperature_detuning_fwhm(wavelength_nm, finesse_value, crystal_length_mm, differential_dn_dT):
    """Temperature FWHM (K) of the down-converted resonance while the pump stays locked.

    ``differential_dn_dT`` is the difference between the down-converted and pump
    thermo-optic slopes in the tuned crystal (K^-1).
    """
    if not (wavelength_nm > 0 and finesse_value > 0 and crystal_length_mm > 0):
        raise PreconditionError("wavelength, finesse and crystal length must be positive")
    if differential_dn_dT == 0:
        raise ZeroDivisionError("no detuning mechanism: differential thermo-optic slope is zero")
    return (wavelength_nm * 1e-9) / (
        finesse_value * crystal_length_mm * 1e-3 * abs(differential_dn_dT)
    )


@dataclass(frozen=True)
class CombSpec:
    """Resonant-mode description of the down-converted fields.

    Rates and spacing are ordinary frequencies in Hz (full widths); ``tau0`` in s.
    """

    gamma_s: float
    gamma_i: float
    fsr: float
    modes: int = 1
    tau0: float = 0.0
    center_s: float = SPEED_OF_LIGHT / 1560e-9
    center_i: float = SPEED_OF_LIGHT / 1560e-9

    def __post_init__(self):
        if not (self.gamma_s > 0 and self.gamma_i > 0):
            raise InvariantError("damping rates must be positive")
        if not (self.fsr > self.gamma_s and self.fsr > self.gamma_i):
            raise InvariantError("free spectral range must exceed both damping rates")
        if int(self.modes) != self.modes or self.modes < 1 or self.modes % 2 == 0:
            raise InvariantError(f"mode count must be a positive odd integer, got {self.modes}")
        if self.tau0 < 0:
            raise InvariantError("tau0 must be non-negative")

    @property
    def mode_indices(self):
        half = (int(self.modes) - 1) // 2
        return np.arange(-half, half + 1)

    def describe(self):
        return (
            f"gamma_s_MHz={self.gamma_s / 1e6:.9g} gamma_i_MHz={self.gamma_i / 1e6:.9g} "
            f"fsr_GHz={self.fsr / 1e9:.9g} modes={int(self.modes)} tau0_ns={self.tau0 * 1e9:.9g}"
        )


def mode_comb(center, spacing, modes):
    """Frequencies center + m * spacing for m symmetric about zero, ascending."""
    if int(modes) != modes or modes < 1 or modes % 2 == 0:
        raise PreconditionError(f"mode count must be a positive odd integer, got {modes}")
    half = (int(modes) - 1) // 2
    m = np.arange(-half, half + 1)
    return center + m * spacing


@dataclass(frozen=True)
class IntracavityCrystal:
    """A temperature-tuned crystal occupying one segment of the cavity.

    ``axes`` maps each field (pump, signal, idler) to the crystal axis its
    polarization sees.
    """

    segment: str
    model: IndexModel
    axes: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "axes", dict(self.axes))
        for fld in ("pump", "signal", "idler"):
            if self.axes.get(fld) not in self.model.axes:
                raise PreconditionError(f"crystal {self.segment!r}: {fld} axis missing from model")


class ResonancePoint(NamedTuple):
    T1_C: float
    T2_C: float
    residual_Hz: float


def resonance_residuals(
    geometry: CavityGeometry,
    crystals: Sequence[IntracavityCrystal],
    pump_nm: float,
    T1_values,
    T2_values,
    mode_span: int = 127,
    gap_segment: int = 0,
):
    """Per-field detuning (Hz) of the best signal/idler mode pair on a temperature grid.

    The pump lock is an ideal constraint: the ``gap_segment`` length changes at
    every grid point so the pump one-pass optical path equals the integer number
    of half wavelengths closest to its value in ``geometry``. Signal and idler
    are taken at the degenerate wavelength 2*pump_nm. For signal modes within
    ``mode_span`` of degeneracy the nearest idler mode is paired so that
    nu_s + nu_i ~ nu_p; the residual is half the best sum mismatch, i.e. the
    detuning each field carries when the mismatch is shared equally.

    Returns an array of shape (len(T1_values), len(T2_values)).
    """
    if len(crystals) != 2:
        raise PreconditionError("exactly two tuned crystals are required")
    T1 = np.asarray(T1_values, dtype=float)
    T2 = np.asarray(T2_values, dtype=float)
    if T1.size == 0 or T2.size == 0:
        raise PreconditionError("temperature grids must be non-empty")
    for lbl in ("pump", "signal", "idler"):
        if lbl not in geometry.segments[0].index:
            raise PreconditionError(f"geometry lacks an index for {lbl!r}")
    gap = geometry.segments[gap_segment]
    crystal_idx = [geometry.segment_index(cr.segment) for cr in crystals]
    if gap_segment in crystal_idx:
        raise PreconditionError("the locked gap segment cannot be a tuned crystal")

    lam_p = pump_nm
    lam_d = 2.0 * pump_nm
    lam = {"pump": lam_p, "signal": lam_d, "idler": lam_d}
    temps = np.meshgrid(T1, T2, indexing="ij")

    fixed = {}
    for lbl in lam:
        fixed[lbl] = sum(
            seg.length_mm * seg.index[lbl]
            for i, seg in enumerate(geometry.segments)
            if i not in crystal_idx
        )
    opl = {}
    for lbl in lam:
        tuned = 0.0
        for cr, idx, T in zip(crystals, crystal_idx, temps):
            L = geometry.segments[idx].length_mm
            tuned = tuned + L * refractive_index(cr.model, cr.axes[lbl], lam[lbl], T)
        opl[lbl] = fixed[lbl] + tuned

    # pump lock: hold the pump path at an integer number of half wavelengths
    lam_p_mm = lam_p * 1e-6
    q_p = np.round(2.0 * optical_path_length(geometry, "pump") / lam_p_mm)
    d_gap = (q_p * lam_p_mm / 2.0 - opl["pump"]) / gap.index["pump"]
    opl_s = opl["signal"] + d_gap * gap.index["signal"]
    opl_i = opl["idler"] + d_gap * gap.index["idler"]

    nu_p = SPEED_OF_LIGHT / (lam_p * 1e-9)
    fsr_s = SPEED_OF_LIGHT / (2.0 * opl_s * 1e-3)
    fsr_i = SPEED_OF_LIGHT / (2.0 * opl_i * 1e-3)
    q_s0 = np.round(0.5 * nu_p / fsr_s)
    best = np.full(opl_s.shape, np.inf)
    for j in range(-mode_span, mode_span + 1):
        nu_s = (q_s0 + j) * fsr_s
        r = np.round((nu_p - nu_s) / fsr_i)
        mismatch = np.abs(nu_s + r * fsr_i - nu_p)
        best = np.minimum(best, mismatch)
    return 0.5 * best


def find_triple_resonance(
    geometry: CavityGeometry,
    crystals: Sequence[IntracavityCrystal],
    pump_nm: float,
    T1_range: Sequence[float],
    T2_range: Sequence[float],
    steps: Sequence[int],
    bandwidth_hz: float,
    mode_span: int = 127,
    gap_segment: int = 0,
):
    """Grid points where pump, signal and idler are simultaneously resonant.

    A point qualifies when the per-field residual detuning is within half the
    cavity bandwidth. Results are sorted by residual, ties by (T1, T2).
    """
    if bandwidth_hz <= 0:
        raise PreconditionError("bandwidth must be positive")
    n1, n2 = steps
    if n1 < 1 or n2 < 1:
        raise PreconditionError("grid steps must be at least 1")
    T1 = np.linspace(T1_range[0], T1_range[1], int(n1))
    T2 = np.linspace(T2_range[0], T2_range[1], int(n2))
    res = resonance_residuals(geometry, crystals, pump_nm, T1, T2, mode_span, gap_segment)
    i1, i2 = np.nonzero(res <= 0.5 * bandwidth_hz)
    points = [ResonancePoint(float(T1[a]), float(T2[b]), float(res[a, b])) for a, b in zip(i1, i2)]
    points.sort(key=lambda p: (p.residual_Hz, p.T1_C, p.T2_C))
    return points
