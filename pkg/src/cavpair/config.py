"""Sectioned key-value run configuration with unit-suffixed keys.

Files use the INI layout understood by :mod:`configparser`. Every physical
quantity carries its unit in the key name (``length_mm``, ``gamma_MHz``).
Unknown sections or keys are rejected. Per-axis index keys are pattern-named:
``<axis>_sellmeier_um = A, B, C, D`` and
``<axis>_dndT_perK = lo-hi:slope, lo-hi:slope`` with band edges in nm.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .cavity import CavityGeometry, CombSpec, IntracavityCrystal, Segment
from .detection import (
    CAVITY_ARMS,
    SINGLE_PASS_ARMS,
    DetectionChainConfig,
    DetectorConfig,
    LossBudget,
    SourceConfig,
)
from .errors import ConfigError, PreconditionError
from .phase_matching import AxisDispersion, IndexModel, QpmCrystal, ThermoOpticBand, refractive_index

__all__ = ["RunConfig", "load_config", "parse_config", "PRESETS"]

PRESETS = ("paper.cfg",)
REQUIRED = object()


def _float(text):
    return float(text)


def _int(text):
    v = float(text)
    if v != int(v):
        raise ValueError(f"{text!r} is not an integer")
    return int(v)


def _seed(text):
    v = _int(text)
    if v < 0:
        raise ValueError("seed must be a non-negative integer")
    return v


def _floats(text):
    return tuple(float(t) for t in text.replace(",", " ").split())


def _fraction(text):
    v = float(text)
    if not 0 < v <= 1:
        raise ValueError(f"{v} outside (0, 1]")
    return v


def _open_fraction(text):
    v = float(text)
    if not 0 < v < 1:
        raise ValueError(f"{v} outside (0, 1)")
    return v


def _positive(text):
    v = float(text)
    if not v > 0:
        raise ValueError(f"{v} is not positive")
    return v


def _nonneg(text):
    v = float(text)
    if not v >= 0:
        raise ValueError(f"{v} is negative")
    return v


def _choice(*options):
    def parse(text):
        t = text.strip()
        if t not in options:
            raise ValueError(f"{t!r} not one of {options}")
        return t

    return parse


def _axes(text):
    out = {}
    for item in text.split(","):
        field, _, axis = item.partition(":")
        if not axis:
            raise ValueError(f"expected field:axis, got {item.strip()!r}")
        out[field.strip()] = axis.strip()
    if set(out) != {"pump", "signal", "idler"}:
        raise ValueError("axes must assign pump, signal and idler")
    return out


def _bands(text):
    bands = []
    for item in text.split(","):
        rng, _, slope = item.partition(":")
        lo, _, hi = rng.strip().partition("-")
        if not slope or not hi:
            raise ValueError(f"expected lo-hi:slope, got {item.strip()!r}")
        bands.append(ThermoOpticBand(float(lo), float(hi), float(slope)))
    return tuple(bands)


def _sellmeier(text):
    c = _floats(text)
    if len(c) != 4:
        raise ValueError("needs four coefficients A, B, C, D")
    return c


SCHEMA = {
    "run": {"seed": (_seed, None)},
    "index_model": {
        "reference_C": (_float, REQUIRED),
        "wavelength_min_nm": (_positive, REQUIRED),
        "wavelength_max_nm": (_positive, REQUIRED),
        "temperature_min_C": (_float, REQUIRED),
        "temperature_max_C": (_float, REQUIRED),
    },
    "crystal": {
        "length_mm": (_positive, REQUIRED),
        "period_um": (_positive, REQUIRED),
        "grating_sign": (_int, 1),
        "pump_axis": (str, "y"),
        "signal_axis": (str, "y"),
        "idler_axis": (str, "z"),
        "pump_nm": (_positive, REQUIRED),
        "signal_nm": (_positive, REQUIRED),
        "idler_nm": (_positive, REQUIRED),
        "tuning_min_C": (_float, REQUIRED),
        "tuning_max_C": (_float, REQUIRED),
        "tuning_samples": (_int, 401),
        "bracket_min_C": (_float, None),
        "bracket_max_C": (_float, None),
    },
    "cavity": {
        "gap_length_mm": (_positive, REQUIRED),
        "gap_index": (_positive, 1.0),
        "crystal1_length_mm": (_positive, REQUIRED),
        "crystal2_length_mm": (_positive, REQUIRED),
        "crystal1_axes": (_axes, REQUIRED),
        "crystal2_axes": (_axes, REQUIRED),
        "crystal1_C": (_float, REQUIRED),
        "crystal2_C": (_float, REQUIRED),
        "pump_nm": (_positive, REQUIRED),
        "input_transmittance_pump_frac": (_open_fraction, None),
        "output_transmittance_pump_frac": (_open_fraction, REQUIRED),
        "output_transmittance_signal_frac": (_open_fraction, None),
        "pump_bandwidth_MHz": (_positive, REQUIRED),
        "signal_bandwidth_MHz": (_positive, REQUIRED),
        "leaked_pump_mW": (_nonneg, REQUIRED),
        "design_finesse": (_positive, None),
        "detuning_dndT_perK": (_float, REQUIRED),
        "map_T1_min_C": (_float, None),
        "map_T1_max_C": (_float, None),
        "map_T2_min_C": (_float, None),
        "map_T2_max_C": (_float, None),
        "map_steps_T1": (_int, 41),
        "map_steps_T2": (_int, 41),
        "map_mode_span": (_int, 127),
    },
    "comb": {
        "gamma_s_MHz": (_positive, REQUIRED),
        "gamma_i_MHz": (_positive, REQUIRED),
        "fsr_GHz": (_positive, REQUIRED),
        "modes": (_int, REQUIRED),
        "tau0_ns": (_nonneg, 0.0),
        "sigma_ns": (_positive, REQUIRED),
        "span_ns": (_positive, 150.0),
        "step_ns": (_positive, 0.05),
        "pairing": (_choice("paired", "independent"), "paired"),
    },
    "source": {
        "rate_per_s_mW": (_nonneg, REQUIRED),
        "power_mW": (_nonneg, REQUIRED),
        "correlation": (_choice("single_mode", "delta"), "single_mode"),
        "gamma_MHz": (_positive, None),
    },
    "detectors": {
        "det1_efficiency_frac": (_fraction, REQUIRED),
        "det1_gate_ns": (_nonneg, REQUIRED),
        "det1_dead_ns": (_nonneg, REQUIRED),
        "det1_dark_per_ns": (_nonneg, REQUIRED),
        "det2_efficiency_frac": (_fraction, REQUIRED),
        "det2_gate_ns": (_nonneg, REQUIRED),
        "det2_dead_ns": (_nonneg, REQUIRED),
        "det2_dark_per_ns": (_nonneg, REQUIRED),
        "trigger_MHz": (_positive, REQUIRED),
        "det2_mode": (_choice("triggered", "internal"), "triggered"),
        "optical_delay_ns": (_nonneg, REQUIRED),
        "duty_cycle_frac": (_fraction, REQUIRED),
    },
    "losses": {
        "arms": (_choice("cavity", "single_pass"), "cavity"),
        "alpha_frac": (_fraction, None),
        "alpha1_frac": (_fraction, None),
        "alpha2_frac": (_fraction, None),
        "t_frac": (_fraction, None),
        "t1_frac": (_fraction, None),
        "t2_frac": (_fraction, None),
        "detected_rate_per_s_mW": (_nonneg, None),
        "detected_rate_per_s_MHz_mW": (_nonneg, None),
    },
    "scan": {
        "delay_min_ns": (_float, REQUIRED),
        "delay_max_ns": (_float, REQUIRED),
        "delay_step_ns": (_positive, REQUIRED),
        "far_delays_ns": (_floats, ()),
        "far_offset_ns": (_positive, 200.0),
        "accumulation_s": (_positive, REQUIRED),
        "method": (_choice("thinned", "full"), "thinned"),
    },
}

PATTERN_KEYS = {
    "index_model": [
        (re.compile(r"^(?P<axis>[A-Za-z]\w*)_sellmeier_um$"), _sellmeier),
        (re.compile(r"^(?P<axis>[A-Za-z]\w*)_dndT_perK$"), _bands),
    ]
}


@dataclass(frozen=True)
class RunConfig:
    sections: dict
    source_path: str = ""

    def has(self, section):
        return section in self.sections

    def section(self, name):
        if name not in self.sections:
            raise ConfigError(f"missing section [{name}]")
        return self.sections[name]

    def get(self, section, key):
        sec = self.section(section)
        value = sec.get(key)
        if value is None:
            raise ConfigError(f"[{section}] {key} is required here")
        return value

    def require(self, *names):
        for n in names:
            self.section(n)

    @property
    def seed(self):
        return self.sections.get("run", {}).get("seed")

    # ---------------------------------------------------------- builders

    def index_model(self):
        sec = self.section("index_model")
        axes = {}
        for axis, parts in sec["axes"].items():
            if "sellmeier" not in parts or "bands" not in parts:
                raise ConfigError(f"[index_model] axis {axis!r} needs both sellmeier and dndT keys")
            axes[axis] = AxisDispersion(parts["sellmeier"], parts["bands"])
        if not axes:
            raise ConfigError("[index_model] defines no axes")
        return IndexModel(
            axes,
            sec["reference_C"],
            (sec["wavelength_min_nm"], sec["wavelength_max_nm"]),
            (sec["temperature_min_C"], sec["temperature_max_C"]),
        )

    def crystal(self):
        sec = self.section("crystal")
        axes = {"pump": sec["pump_axis"], "signal": sec["signal_axis"], "idler": sec["idler_axis"]}
        return QpmCrystal(sec["length_mm"], sec["period_um"], self.index_model(), axes, sec["grating_sign"])

    def cavity(self):
        """(geometry, crystals) with crystal indices evaluated at the configured temperatures."""
        sec = self.section("cavity")
        model = self.index_model()
        lam_p = sec["pump_nm"]
        lam = {"pump": lam_p, "signal": 2 * lam_p, "idler": 2 * lam_p}
        gap = Segment(sec["gap_length_mm"], {k: sec["gap_index"] for k in lam}, "gap")
        segs, crystals = [gap], []
        for i in (1, 2):
            axes = sec[f"crystal{i}_axes"]
            T = sec[f"crystal{i}_C"]
            idx = {k: refractive_index(model, axes[k], lam[k], T) for k in lam}
            segs.append(Segment(sec[f"crystal{i}_length_mm"], idx, f"crystal{i}"))
            crystals.append(IntracavityCrystal(f"crystal{i}", model, axes))
        t_in, t_out = {}, {}
        if sec["input_transmittance_pump_frac"] is not None:
            t_in["pump"] = sec["input_transmittance_pump_frac"]
        t_out["pump"] = sec["output_transmittance_pump_frac"]
        if sec["output_transmittance_signal_frac"] is not None:
            t_out["signal"] = sec["output_transmittance_signal_frac"]
        return CavityGeometry(tuple(segs), t_in, t_out), crystals

    def comb(self):
        sec = self.section("comb")
        return CombSpec(
            sec["gamma_s_MHz"] * 1e6,
            sec["gamma_i_MHz"] * 1e6,
            sec["fsr_GHz"] * 1e9,
            sec["modes"],
            sec["tau0_ns"] * 1e-9,
        )

    def source(self):
        sec = self.section("source")
        gamma = None
        if sec["correlation"] == "single_mode":
            gamma = self.get("source", "gamma_MHz") * 1e6
        return SourceConfig(sec["rate_per_s_mW"], sec["power_mW"], gamma)

    def chain(self):
        sec = self.section("detectors")

        def det(i):
            return DetectorConfig(
                sec[f"det{i}_efficiency_frac"], sec[f"det{i}_gate_ns"], sec[f"det{i}_dead_ns"], sec[f"det{i}_dark_per_ns"]
            )

        return DetectionChainConfig(
            det(1), det(2), sec["trigger_MHz"] * 1e6, sec["det2_mode"], sec["optical_delay_ns"], sec["duty_cycle_frac"]
        )

    def losses(self):
        sec = self.section("losses")
        arms = CAVITY_ARMS if sec["arms"] == "cavity" else SINGLE_PASS_ARMS
        factors = {}
        for key, value in sec.items():
            if key.endswith("_frac") and value is not None:
                factors[key[: -len("_frac")]] = value
        budget = LossBudget(factors)
        for names in arms.values():
            for n in names:
                budget[n]  # raises ConfigError naming the missing factor
        return budget, arms

    def detected_rate(self):
        """(value, unit string) of the configured detected pair rate."""
        sec = self.section("losses")
        a, b = sec["detected_rate_per_s_mW"], sec["detected_rate_per_s_MHz_mW"]
        if (a is None) == (b is None):
            raise ConfigError("[losses] set exactly one of detected_rate_per_s_mW, detected_rate_per_s_MHz_mW")
        return (a, "1/(s*mW)") if a is not None else (b, "1/(s*MHz*mW)")

    def delays(self):
        sec = self.section("scan")
        lo, hi, step = sec["delay_min_ns"], sec["delay_max_ns"], sec["delay_step_ns"]
        if hi < lo:
            raise ConfigError("[scan] delay_max_ns is below delay_min_ns")
        n = int(round((hi - lo) / step))
        near = lo + step * np.arange(n + 1)
        return sorted(set(np.round(near, 9).tolist()) | set(sec["far_delays_ns"]))


def parse_config(text, source_path="<string>"):
    parser = configparser.ConfigParser(
        strict=True, interpolation=None, inline_comment_prefixes=("#", ";"), empty_lines_in_values=False
    )
    parser.optionxform = str
    try:
        parser.read_string(text, source=source_path)
    except configparser.Error as exc:
        raise ConfigError(f"{source_path}: {exc}".replace("\n", " ")) from None
    sections = {}
    for name in parser.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown section [{name}]")
        schema = SCHEMA[name]
        values = {}
        axes = {}
        for key, raw in parser.items(name):
            if key in schema:
                conv = schema[key][0]
                try:
                    values[key] = conv(raw)
                except (ValueError, PreconditionError) as exc:
                    raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from None
                continue
            for pattern, conv in PATTERN_KEYS.get(name, ()):
                m = pattern.match(key)
                if m:
                    try:
                        parsed = conv(raw)
                    except (ValueError, PreconditionError) as exc:
                        raise ConfigError(f"[{name}] {key} = {raw!r}: {exc}") from None
                    slot = "sellmeier" if key.endswith("_sellmeier_um") else "bands"
                    axes.setdefault(m.group("axis"), {})[slot] = parsed
                    break
            else:
                raise ConfigError(f"unknown key [{name}] {key}")
        for key, (_, default) in schema.items():
            if key not in values:
                if default is REQUIRED:
                    raise ConfigError(f"missing key [{name}] {key}")
                values[key] = default
        if name == "index_model":
            values["axes"] = axes
        sections[name] = values
    return RunConfig(sections, source_path)


def load_config(path):
    """Read a config file; bare preset names fall back to the packaged copies."""
    p = Path(path)
    if not p.exists() and p.name in PRESETS and p.parent == Path("."):
        text = resources.files("cavpair").joinpath("data", p.name).read_text()
        return parse_config(text, f"<preset {p.name}>")
    return parse_config(p.read_text(), str(p))
