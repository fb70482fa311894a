"""Command-line front end: ``cavpair <subcommand> --config FILE [--out DIR]``.

Exit status: 0 success, 2 configuration error, 3 precondition violation,
4 fit did not converge, 5 I/O error. Failures print one line to stderr,
``error: <category>: <message>``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import cavity as cav
from .analysis import fitting, rates
from .config import load_config
from .correlation import coherence_time, fwhm, measured_correlation
from .detection import histogram_fwhm, scan_coincidences, snr
from .errors import ConfigError, PreconditionError, UnitMismatchError
from .phase_matching import degenerate_temperature, tuning_curve

log = logging.getLogger("cavpair")

EXIT_CONFIG, EXIT_PRECONDITION, EXIT_NOT_CONVERGED, EXIT_IO = 2, 3, 4, 5


class NotConvergedError(Exception):
    pass


# ---------------------------------------------------------------- output


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return "%.9g" % v
    return str(v)


def write_table(out_dir, stem, columns, rows, fmt, comment=None, meta=None):
    out_dir.mkdir(parents=True, exist_ok=True)
    if fmt == "json":
        path = out_dir / f"{stem}.json"
        payload = {"columns": list(columns), "rows": [[_jsonable(v) for v in r] for r in rows]}
        if meta:
            payload["meta"] = meta
        write_json(path, payload)
        return path
    path = out_dir / f"{stem}.csv"
    with open(path, "w", newline="") as fh:
        if comment:
            fh.write(comment.rstrip("\n") + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(v) for v in r])
    return path


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, np.bool_):
        return bool(v)
    return v


def write_json(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")
    return path


# ---------------------------------------------------------------- subcommands


def cmd_cavity(args, cfg):
    cfg.require("cavity", "index_model")
    sec = cfg.section("cavity")
    geometry, _ = cfg.cavity()
    fsr = {lbl: cav.free_spectral_range(geometry, lbl) for lbl in ("pump", "signal", "idler")}
    bw_p = sec["pump_bandwidth_MHz"] * 1e6
    bw_s = sec["signal_bandwidth_MHz"] * 1e6
    f_main = cav.finesse(fsr["pump"], bw_s)
    f_design = sec["design_finesse"] or f_main
    lam_s = 2 * sec["pump_nm"]
    report = {
        "optical_path_mm": {lbl: cav.optical_path_length(geometry, lbl) for lbl in fsr},
        "fsr_MHz": {lbl: v / 1e6 for lbl, v in fsr.items()},
        "finesse": f_main,
        "finesse_pump": cav.finesse(fsr["pump"], bw_p),
        "finesse_signal": cav.finesse(fsr["signal"], bw_s),
        "design_finesse": f_design,
        "circulating_power_mW": cav.circulating_power(sec["leaked_pump_mW"], sec["output_transmittance_pump_frac"]),
        "resonance_tolerance_nm": cav.resonance_length_tolerance(lam_s, f_design),
        "detuning_fwhm_K": cav.temperature_detuning_fwhm(
            lam_s, f_design, sec["crystal1_length_mm"], sec["detuning_dndT_perK"]
        ),
    }
    write_json(args.out / "cavity.json", report)


def cmd_tuning(args, cfg):
    cfg.require("crystal", "index_model")
    sec = cfg.section("crystal")
    crystal = cfg.crystal()
    lam = (sec["pump_nm"], sec["signal_nm"], sec["idler_nm"])
    curve = tuning_curve(crystal, *lam, (sec["tuning_min_C"], sec["tuning_max_C"]), sec["tuning_samples"])
    meta = {"peak_temperature_C": curve.peak_temperature}
    if sec["bracket_min_C"] is not None and sec["bracket_max_C"] is not None:
        t_deg = degenerate_temperature(crystal, sec["pump_nm"], (sec["bracket_min_C"], sec["bracket_max_C"]))
        meta["degenerate_temperature_C"] = t_deg
        print(f"degenerate_temperature_C={t_deg:.9g}")
    write_table(args.out, "tuning", ("temperature_C", "normalized_power"), curve.rows(), args.format, meta=meta)


def cmd_correlation(args, cfg):
    cfg.require("comb")
    sec = cfg.section("comb")
    spec = cfg.comb()
    sigma = sec["sigma_ns"] * 1e-9
    raw, conv = measured_correlation(spec, sigma, sec["span_ns"] * 1e-9, sec["step_ns"] * 1e-9, sec["pairing"])
    for stem, trace in (("correlation_raw", raw), ("correlation_convolved", conv)):
        rows = list(zip((trace.tau * 1e9).tolist(), trace.values.tolist()))
        write_table(args.out, stem, ("tau_ns", "value"), rows, args.format, comment=trace.header(),
                    meta={"comb": spec.describe(), "sigma_ns": trace.sigma * 1e9})
    width = fwhm(conv) * 1e9
    summary = {
        "fwhm_ns": width,
        "coherence_time_ns": coherence_time(spec.gamma_s) * 1e9,
        "sigma_ns": sec["sigma_ns"],
        "modes": int(spec.modes),
        "comb": spec.describe(),
    }
    write_json(args.out / "correlation_summary.json", summary)
    if args.fwhm:
        print(f"fwhm_ns={width:.9g}")


def _resolve_seed(args, cfg):
    if args.seed is not None:
        return args.seed
    if cfg.seed is not None:
        return cfg.seed
    seed = int(np.random.SeedSequence().entropy % (2**32))
    log.warning("no seed given; drew seed %d", seed)
    return seed


def cmd_simulate(args, cfg):
    cfg.require("source", "detectors", "losses", "scan")
    seed = _resolve_seed(args, cfg)
    scan = cfg.section("scan")
    budget, arms = cfg.losses()
    hist = scan_coincidences(
        cfg.source(), budget, cfg.chain(), cfg.delays(), scan["accumulation_s"], seed,
        arms=arms, method=scan["method"], workers=args.workers,
    )
    write_table(args.out, "histogram", ("delay_ns", "coincidences", "singles1", "singles2"), hist.rows(), args.format,
                meta={"seed": seed})
    try:
        value = snr(hist)
    except PreconditionError as exc:
        log.warning("snr undefined: %s", exc)
        value = None
    try:
        width = histogram_fwhm(hist, scan["far_offset_ns"])
    except PreconditionError as exc:
        log.warning("fwhm undefined: %s", exc)
        width = None
    summary = {
        "seed": seed,
        "accumulation_s": hist.accumulation_s,
        "snr": value,
        "fwhm_ns": width,
        "max_count": int(hist.coincidences.max()),
        "min_count": int(hist.coincidences.min()),
    }
    write_json(args.out / "histogram_summary.json", summary)


ESTIMATE_KEYS = {
    "cavity": ("d", "alpha", "alpha1", "alpha2", "t1", "t2", "eta"),
    "single_pass": ("d", "alpha1", "alpha2", "t", "eta"),
}


def _estimate_from_json(path):
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(data, dict) or "R_detected" not in data:
        raise ConfigError(f"{path}: expected an object with R_detected and factors")
    kind = data.get("estimator", "single_pass" if "t" in data else "cavity")
    if kind not in ESTIMATE_KEYS:
        raise ConfigError(f"{path}: unknown estimator {kind!r}")
    allowed = set(ESTIMATE_KEYS[kind]) | {"R_detected", "unit", "estimator"}
    extra = set(data) - allowed
    if extra:
        raise ConfigError(f"{path}: unknown keys {sorted(extra)}")
    missing = [k for k in ESTIMATE_KEYS[kind] if k not in data]
    if missing:
        raise ConfigError(f"{path}: missing factors {missing}")
    default_unit = "1/(s*MHz*mW)" if kind == "cavity" else "1/(s*mW)"
    unit = data.get("unit", default_unit)
    try:
        unit = rates.RateUnit(unit)
    except ValueError:
        raise ConfigError(f"{path}: unknown unit {unit!r}") from None
    return kind, data["R_detected"], unit, {k: data[k] for k in ESTIMATE_KEYS[kind]}


def _estimate_from_config(cfg):
    cfg.require("losses", "detectors")
    budget, arms = cfg.losses()
    value, unit = cfg.detected_rate()
    chain = cfg.chain()
    # the estimator squares one efficiency; the product of both is what is measured
    eta = math.sqrt(chain.det1.efficiency * chain.det2.efficiency)
    kind = "cavity" if cfg.section("losses")["arms"] == "cavity" else "single_pass"
    factors = {"d": chain.duty_cycle, "eta": eta}
    for k in ESTIMATE_KEYS[kind]:
        if k not in factors:
            factors[k] = budget[k]
    return kind, value, rates.RateUnit(unit), factors


def cmd_estimate(args, cfg):
    if args.input:
        kind, value, unit, factors = _estimate_from_json(args.input)
    else:
        if cfg is None:
            raise ConfigError("estimate needs --config or --input")
        kind, value, unit, factors = _estimate_from_config(cfg)
    fn = rates.estimate_rate_cavity if kind == "cavity" else rates.estimate_rate_single_pass
    est = fn(value, unit=unit, **factors)
    out = est.as_dict()
    out["estimator"] = kind
    write_json(args.out / "estimate.json", out)


def _read_xy(path):
    xs, ys = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            if len(row) < 2:
                raise PreconditionError(f"{path}:{lineno}: expected two columns")
            try:
                x, y = float(row[0]), float(row[1])
            except ValueError:
                if not xs:
                    continue  # header line
                raise PreconditionError(f"{path}:{lineno}: non-numeric value") from None
            xs.append(x)
            ys.append(y)
    return np.array(xs), np.array(ys)


def cmd_fit(args, cfg):
    if not args.input:
        raise PreconditionError("fit needs --input CSV")
    x, y = _read_xy(args.input)
    initial = None
    if args.initial:
        initial = [float(v) for v in args.initial.split(",")]
    result = fitting.fit(args.model, x, y, initial)
    write_json(args.out / "fit.json", result.as_dict())
    if not result.converged:
        raise NotConvergedError(f"{args.model} fit stopped after {result.iterations} iterations")


def cmd_resonance_map(args, cfg):
    cfg.require("cavity", "index_model")
    sec = cfg.section("cavity")
    geometry, crystals = cfg.cavity()
    t1 = (cfg.get("cavity", "map_T1_min_C"), cfg.get("cavity", "map_T1_max_C"))
    t2 = (cfg.get("cavity", "map_T2_min_C"), cfg.get("cavity", "map_T2_max_C"))
    steps = (sec["map_steps_T1"], sec["map_steps_T2"])
    columns = ("T1_C", "T2_C", "residual_Hz")
    if args.resonant_only:
        pts = cav.find_triple_resonance(
            geometry, crystals, sec["pump_nm"], t1, t2, steps, sec["signal_bandwidth_MHz"] * 1e6, sec["map_mode_span"]
        )
        rows = [tuple(p) for p in pts]
    else:
        T1 = np.linspace(*t1, steps[0])
        T2 = np.linspace(*t2, steps[1])
        res = cav.resonance_residuals(geometry, crystals, sec["pump_nm"], T1, T2, sec["map_mode_span"])
        rows = [(float(a), float(b), float(res[i, j])) for i, a in enumerate(T1) for j, b in enumerate(T2)]
    write_table(args.out, "resonance_map", columns, rows, args.format)


COMMANDS = {
    "cavity": (cmd_cavity, "cavity FSR, finesse, circulating power and tolerances (JSON)"),
    "tuning": (cmd_tuning, "phase-matching temperature tuning curve"),
    "correlation": (cmd_correlation, "raw and detector-convolved cross-correlation traces"),
    "simulate": (cmd_simulate, "Monte Carlo delay-scanned coincidence histogram"),
    "estimate": (cmd_estimate, "back-corrected pair rate from a detected rate (JSON)"),
    "fit": (cmd_fit, "least-squares fit of a two-column CSV (JSON)"),
    "resonance-map": (cmd_resonance_map, "triple-resonance residual over two crystal temperatures"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (bare 'paper.cfg' uses the packaged preset)")
    common.add_argument("--out", default=".", type=Path, help="output directory (default: current)")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--format", choices=("csv", "json"), default="csv", help="format of tabular outputs")
    common.add_argument("--workers", type=int, default=1, help="worker processes for simulations")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="cavpair", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text)
        if name == "correlation":
            p.add_argument("--fwhm", action="store_true", help="print the convolved FWHM to stdout")
        elif name == "estimate":
            p.add_argument("--input", help="JSON object with R_detected and the loss factors")
        elif name == "fit":
            p.add_argument("--input", help="two-column CSV of x,y")
            p.add_argument("--model", required=True, choices=sorted(fitting.MODELS))
            p.add_argument("--initial", help="comma-separated initial parameters")
        elif name == "resonance-map":
            p.add_argument("--resonant-only", action="store_true", help="list only points within half a bandwidth")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(levelname)s: %(message)s", stream=sys.stderr)
    if args.seed is not None and args.seed < 0:
        return _fail("precondition", "seed must be non-negative", EXIT_PRECONDITION)
    handler = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config) if args.config else None
        if cfg is None and args.command not in ("fit", "estimate"):
            raise ConfigError(f"{args.command} needs --config")
        handler(args, cfg)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except NotConvergedError as exc:
        return _fail("not-converged", exc, EXIT_NOT_CONVERGED)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except (PreconditionError, ZeroDivisionError, UnitMismatchError, KeyError) as exc:
        return _fail("precondition", exc, EXIT_PRECONDITION)
    return 0


def _fail(category, exc, code):
    msg = str(exc).replace("\n", " ")
    print(f"error: {category}: {msg}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
