"""Monte Carlo model of the pair source, loss chain and two gated APDs.

Time is in seconds internally; detector parameters are configured in ns.

Detector 1 runs on an internal trigger: gates of width ``gate_ns`` start at
``phase + k / trigger_hz`` with a random phase per run. A click is stamped with
the arrival time of the detected photon (or dark count). Detector 2 is gated
by detector 1: each click opens a ``gate_ns`` window on detector 2 after the
electrical delay. The idler reaches detector 2 after the optical delay. Scan
delays are quoted relative to the balanced setting, where the detector-2
window is centred on an idler emitted together with its signal, i.e.

    electrical_delay = optical_delay - window_2 / 2 + scan_delay

so a coincidence at scan delay ``d`` samples idler-signal offsets within
``d +/- window_2 / 2``.

Two equivalent simulation paths exist. ``method="full"`` emits every pair,
thins it by the loss budget and runs both detectors on the explicit photon
streams. ``method="thinned"`` draws only the events that can matter (signals
inside an open detector-1 gate that survive losses and efficiency, plus the
idlers landing in detector-2 windows) using Poisson thinning, which is exact
in distribution and orders of magnitude cheaper at low duty cycle.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from numba import njit

from .correlation import CorrelationTrace, fwhm_of
from .errors import ConfigError, PreconditionError, ShapeError, UndefinedSNRError

__all__ = [
    "SourceConfig",
    "DetectorConfig",
    "DetectionChainConfig",
    "LossBudget",
    "PUBLISHED_LOSSES",
    "CAVITY_ARMS",
    "SINGLE_PASS_ARMS",
    "PairEvents",
    "SurvivingPhotons",
    "Clicks",
    "CoincidenceHistogram",
    "generate_pair_events",
    "apply_losses",
    "arm_transmission",
    "simulate_detection",
    "simulate_point",
    "scan_coincidences",
    "snr",
    "far_floor",
    "histogram_fwhm",
    "point_seed",
]

NS = 1e-9


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class SourceConfig:
    """Poisson pair source.

    The idler-minus-signal offset follows ``trace`` when given, else the
    single-mode density exp(-2 pi gamma |tau|) when ``gamma_hz`` is given,
    else it is zero (delta-correlated pairs).
    """

    rate_per_mW: float
    power_mW: float
    gamma_hz: float | None = None
    trace: CorrelationTrace | None = None

    def __post_init__(self):
        if not (self.rate_per_mW >= 0 and self.power_mW >= 0):
            raise PreconditionError("source rate and pump power must be non-negative")
        if self.gamma_hz is not None and not self.gamma_hz > 0:
            raise PreconditionError("gamma must be positive")

    @property
    def pair_rate(self):
        return self.rate_per_mW * self.power_mW

    def with_power(self, power_mW):
        return SourceConfig(self.rate_per_mW, power_mW, self.gamma_hz, self.trace)

    def sample_offsets(self, rng, n):
        if self.trace is not None:
            return _trace_sampler(self.trace)(rng, n)
        if self.gamma_hz is not None:
            return rng.laplace(0.0, 1.0 / (2 * np.pi * self.gamma_hz), n)
        return np.zeros(n)

    def offset_cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.trace is not None:
            tau, cdf = _trace_cdf(self.trace)
            return np.interp(x, tau, cdf, left=0.0, right=1.0)
        if self.gamma_hz is not None:
            a = 2 * np.pi * self.gamma_hz
            e = 0.5 * np.exp(-a * np.abs(x))
            return np.where(x < 0, e, 1.0 - e)
        return (x >= 0).astype(float)

    def offset_support(self):
        """Half-width beyond which the offset CDF is 0 or 1 to double precision."""
        if self.trace is not None:
            return float(max(abs(self.trace.tau[0]), abs(self.trace.tau[-1])))
        if self.gamma_hz is not None:
            return 40.0 / (2 * np.pi * self.gamma_hz)
        return 0.0


def _trace_cdf(trace: CorrelationTrace):
    # cell-constant density: value at each sample spread over its cell
    step = trace.step
    edges = np.concatenate([trace.tau - step / 2, [trace.tau[-1] + step / 2]])
    mass = np.concatenate([[0.0], np.cumsum(trace.values)])
    return edges, mass / mass[-1]


def _trace_sampler(trace: CorrelationTrace):
    edges, cdf = _trace_cdf(trace)
    step = trace.step

    def draw(rng, n):
        u = rng.random(n)
        cell = np.searchsorted(cdf, u, side="right") - 1
        cell = np.clip(cell, 0, trace.tau.size - 1)
        return edges[cell] + rng.random(n) * step

    return draw


@dataclass(frozen=True)
class DetectorConfig:
    efficiency: float
    gate_ns: float
    dead_ns: float
    dark_per_ns: float

    def __post_init__(self):
        if not 0 < self.efficiency <= 1:
            raise PreconditionError("detector efficiency must lie in (0, 1]")
        if self.gate_ns < 0 or self.dead_ns < 0 or self.dark_per_ns < 0:
            raise PreconditionError("gate, dead time and dark rate must be non-negative")


@dataclass(frozen=True)
class DetectionChainConfig:
    """Two-detector chain; ``det2_mode`` is "triggered" (by detector 1) or "internal"."""

    det1: DetectorConfig
    det2: DetectorConfig
    trigger_hz: float = 10e6
    det2_mode: str = "triggered"
    optical_delay_ns: float = 1000.0
    duty_cycle: float = 0.025

    def __post_init__(self):
        if not self.trigger_hz > 0:
            raise PreconditionError("trigger rate must be positive")
        if self.det2_mode not in ("triggered", "internal"):
            raise PreconditionError(f"det2_mode must be 'triggered' or 'internal', got {self.det2_mode!r}")
        if not 0 < self.duty_cycle <= 1:
            raise PreconditionError("duty cycle must lie in (0, 1]")
        if self.det1.gate_ns * 1e-9 * self.trigger_hz > 1:
            raise PreconditionError("detector-1 gates overlap at this trigger rate")
        if self.optical_delay_ns < 0:
            raise PreconditionError("optical delay must be non-negative")

    @property
    def gate_fraction(self):
        """Fraction of time detector 1 has an open gate, ignoring dead time."""
        return self.trigger_hz * self.det1.gate_ns * NS

    def electrical_delay(self, scan_delay_ns):
        """Absolute electrical delay (s) for a scan delay relative to balance."""
        return (self.optical_delay_ns - self.det2.gate_ns / 2 + scan_delay_ns) * NS


@dataclass(frozen=True)
class LossBudget:
    """Named single-photon survival factors, each in (0, 1]."""

    factors: Mapping[str, float]

    def __post_init__(self):
        object.__setattr__(self, "factors", dict(self.factors))
        for k, v in self.factors.items():
            if not 0 < v <= 1:
                raise PreconditionError(f"loss factor {k}={v} outside (0, 1]")

    def __getitem__(self, name):
        try:
            return self.factors[name]
        except KeyError:
            raise ConfigError(f"unknown loss factor {name!r}; budget has {sorted(self.factors)}") from None


PUBLISHED_LOSSES = LossBudget({"alpha": 0.33, "alpha1": 0.82, "alpha2": 0.86, "t1": 0.78, "t2": 0.84})
# which factors each photon passes through
CAVITY_ARMS = {"signal": ("alpha", "alpha1", "t1", "t2"), "idler": ("alpha", "alpha2", "t1", "t2")}
SINGLE_PASS_ARMS = {"signal": ("alpha1", "t"), "idler": ("alpha2", "t")}


def arm_transmission(budget: LossBudget, arms, arm):
    if arm not in arms:
        raise ConfigError(f"no factor list for arm {arm!r}")
    return float(np.prod([budget[name] for name in arms[arm]]))


# ---------------------------------------------------------------- event streams


@dataclass(frozen=True)
class PairEvents:
    t_signal: np.ndarray
    t_idler: np.ndarray

    def __len__(self):
        return int(self.t_signal.size)


@dataclass(frozen=True)
class SurvivingPhotons:
    """Photons left after losses: each arm separately, plus intact pairs."""

    signal: np.ndarray
    idler: np.ndarray
    pairs: PairEvents


class Clicks(NamedTuple):
    det1: np.ndarray
    det2: np.ndarray
    coincidences: int
    live_fraction: float


def generate_pair_events(source: SourceConfig, duration, seed):
    """Poisson pair emissions over [0, duration), ordered by signal time."""
    if not duration > 0:
        raise PreconditionError("duration must be positive")
    rng = np.random.default_rng(seed)
    n = rng.poisson(source.pair_rate * duration)
    t_s = np.sort(rng.uniform(0.0, duration, n))
    t_i = t_s + source.sample_offsets(rng, n)
    return PairEvents(t_s, t_i)


def apply_losses(events: PairEvents, budget: LossBudget, arms=CAVITY_ARMS, seed=None):
    """Independent Bernoulli survival of every photon with its arm's transmission."""
    p_s = arm_transmission(budget, arms, "signal")
    p_i = arm_transmission(budget, arms, "idler")
    rng = np.random.default_rng(seed)
    n = len(events)
    keep_s = rng.random(n) < p_s if p_s < 1 else np.ones(n, bool)
    keep_i = rng.random(n) < p_i if p_i < 1 else np.ones(n, bool)
    both = keep_s & keep_i
    return SurvivingPhotons(
        signal=events.t_signal[keep_s],
        idler=np.sort(events.t_idler[keep_i]),
        pairs=PairEvents(events.t_signal[both], events.t_idler[both]),
    )


# ---------------------------------------------------------------- detector logic


@njit(cache=True)
def _dead_time_keep(gate_start, times, dead):
    """Sequential dead-time rule: a gate opening before last click + dead is blind."""
    keep = np.zeros(times.size, dtype=np.bool_)
    last = -np.inf
    for j in range(times.size):
        if gate_start[j] >= last + dead:
            keep[j] = True
            last = times[j]
    return keep


@njit(cache=True)
def _count_in_windows(points, starts, width):
    """Points in [start, start + width) per window; both inputs ascending."""
    counts = np.zeros(starts.size, dtype=np.int64)
    lo = 0
    hi = 0
    for k in range(starts.size):
        while lo < points.size and points[lo] < starts[k]:
            lo += 1
        if hi < lo:
            hi = lo
        end = starts[k] + width
        while hi < points.size and points[hi] < end:
            hi += 1
        counts[k] = hi - lo
    return counts


def _first_per_gate(gate_idx):
    if gate_idx.size == 0:
        return np.zeros(0, dtype=bool)
    first = np.ones(gate_idx.size, dtype=bool)
    first[1:] = gate_idx[1:] != gate_idx[:-1]
    return first


def _det1_clicks(cand_time, cand_gate, phase, period, dead):
    """Earliest candidate per gate, then the dead-time filter. Inputs sorted by time."""
    first = _first_per_gate(cand_gate)
    t = cand_time[first]
    g = cand_gate[first]
    keep = _dead_time_keep(phase + g * period, t, dead)
    return t[keep], g[keep]


def _live_fraction(n_gates, clicks, clicks_gate, phase, period, dead):
    """Fraction of gates not blinded by dead time."""
    if n_gates == 0:
        return 1.0
    # gate k + j is blind when it opens before click + dead
    since_open = clicks - (phase + clicks_gate * period)
    blinded = np.ceil((since_open + dead) / period) - 1
    blinded = np.clip(np.minimum(blinded, n_gates - 1 - clicks_gate), 0, None)
    return 1.0 - float(np.sum(blinded)) / n_gates


def _det1_dark(rng, n_gates, det: DetectorConfig):
    gate = det.gate_ns * NS
    n = rng.poisson(det.dark_per_ns * det.gate_ns * n_gates)
    idx = rng.integers(0, n_gates, n) if n_gates > 0 else np.zeros(0, np.int64)
    return idx, rng.uniform(0.0, gate, n)


def _det2_click_prob(n_photons, det: DetectorConfig):
    return 1.0 - (1.0 - det.efficiency) ** n_photons * math.exp(-det.dark_per_ns * det.gate_ns)


def simulate_detection(photons: SurvivingPhotons, chain: DetectionChainConfig, duration, scan_delay_ns=0.0, seed=None):
    """Run both detectors over explicit photon streams (full path)."""
    if not duration > 0:
        raise PreconditionError("duration must be positive")
    rng = np.random.default_rng(seed)
    d1, d2 = chain.det1, chain.det2
    period = 1.0 / chain.trigger_hz
    g1 = d1.gate_ns * NS
    n_gates = int(duration * chain.trigger_hz)
    phase = rng.uniform(0.0, period)

    s = photons.signal
    if np.any(np.diff(s) < 0):
        raise PreconditionError("signal photons must be time-ordered")
    idx = np.floor((s - phase) / period).astype(np.int64)
    off = s - phase - idx * period
    inside = (idx >= 0) & (idx < n_gates) & (off < g1)
    seen = rng.random(s.size) < d1.efficiency
    ph_idx, ph_off = idx[inside & seen], off[inside & seen]
    dk_idx, dk_off = _det1_dark(rng, n_gates, d1)
    c_idx = np.concatenate([ph_idx, dk_idx])
    c_time = phase + c_idx * period + np.concatenate([ph_off, dk_off])
    order = np.argsort(c_time, kind="stable")
    clicks1, gates1 = _det1_clicks(c_time[order], c_idx[order], phase, period, d1.dead_ns * NS)
    live = _live_fraction(n_gates, clicks1, gates1, phase, period, d1.dead_ns * NS)

    idler = np.sort(photons.idler + chain.optical_delay_ns * NS)
    g2 = d2.gate_ns * NS
    if chain.det2_mode == "triggered":
        start = clicks1 + chain.electrical_delay(scan_delay_ns)
        n_ph = _count_in_windows(idler, start, g2)
        fire = rng.random(start.size) < _det2_click_prob(n_ph, d2)
        t2 = start[fire]
        t2 = t2[_dead_time_keep(t2, t2, d2.dead_ns * NS)]
        return Clicks(clicks1, t2, int(t2.size), live)

    # internal mode: detector 2 runs its own gate grid with an independent phase
    phase2 = rng.uniform(0.0, period)
    idx2 = np.floor((idler - phase2) / period).astype(np.int64)
    off2 = idler - phase2 - idx2 * period
    ok = (idx2 >= 0) & (idx2 < n_gates) & (off2 < g2) & (rng.random(idler.size) < d2.efficiency)
    dk2_idx, dk2_off = _det1_dark(rng, n_gates, d2)
    c2_idx = np.concatenate([idx2[ok], dk2_idx])
    c2_time = phase2 + c2_idx * period + np.concatenate([off2[ok], dk2_off])
    order2 = np.argsort(c2_time, kind="stable")
    clicks2, _ = _det1_clicks(c2_time[order2], c2_idx[order2], phase2, period, d2.dead_ns * NS)
    start = clicks1 + chain.electrical_delay(scan_delay_ns)
    hits = np.searchsorted(clicks2, start + g2) - np.searchsorted(clicks2, start)
    return Clicks(clicks1, clicks2, int(np.count_nonzero(hits)), live)


def _gate_hit_probability(source: SourceConfig, x, phase, period, g1, optical):
    """Probability that the partner signal of an idler reaching detector 2 at x fell in a gate."""
    u = np.mod(x - optical - phase, period)
    reach = source.offset_support() + g1
    j_max = int(math.ceil(reach / period)) + 1
    total = np.zeros_like(u)
    for j in range(-j_max, j_max + 1):
        total += source.offset_cdf(u - j * period) - source.offset_cdf(u - j * period - g1)
    return np.clip(total, 0.0, 1.0)


def _simulate_thinned(source, p_s, p_i, chain: DetectionChainConfig, duration, scan_delay_ns, rng):
    if chain.det2_mode != "triggered":
        raise PreconditionError("the thinned path models a triggered detector 2 only; use method='full'")
    d1, d2 = chain.det1, chain.det2
    period = 1.0 / chain.trigger_hz
    g1, g2 = d1.gate_ns * NS, d2.gate_ns * NS
    optical = chain.optical_delay_ns * NS
    n_gates = int(duration * chain.trigger_hz)
    phase = rng.uniform(0.0, period)
    lam = source.pair_rate

    # signals that land in a gate, survive their arm and are seen by detector 1
    n_p = rng.poisson(lam * p_s * d1.efficiency * g1 * n_gates)
    p_idx = rng.integers(0, n_gates, n_p) if n_gates else np.zeros(0, np.int64)
    p_time = phase + p_idx * period + rng.uniform(0.0, g1, n_p)
    dk_idx, dk_off = _det1_dark(rng, n_gates, d1)
    c_time = np.sort(np.concatenate([p_time, phase + dk_idx * period + dk_off]))
    c_idx = np.floor((c_time - phase) / period).astype(np.int64)
    clicks1, gates1 = _det1_clicks(c_time, c_idx, phase, period, d1.dead_ns * NS)
    live = _live_fraction(n_gates, clicks1, gates1, phase, period, d1.dead_ns * NS)

    # partners of those signals
    partner = p_time + source.sample_offsets(rng, n_p) + optical
    partner = np.sort(partner[rng.random(n_p) < p_i])

    start = clicks1 + chain.electrical_delay(scan_delay_ns)
    n_ph = _count_in_windows(partner, start, g2)

    # every other surviving idler: Poisson in the window, minus the partners above
    n_bg = rng.poisson(lam * p_i * g2, start.size)
    owner = np.repeat(np.arange(start.size), n_bg)
    x = start[owner] + rng.uniform(0.0, g2, owner.size)
    p_keep = 1.0 - p_s * d1.efficiency * _gate_hit_probability(source, x, phase, period, g1, optical)
    kept = rng.random(owner.size) < p_keep
    n_ph = n_ph + np.bincount(owner[kept], minlength=start.size)

    fire = rng.random(start.size) < _det2_click_prob(n_ph, d2)
    t2 = start[fire]
    t2 = t2[_dead_time_keep(t2, t2, d2.dead_ns * NS)]
    return Clicks(clicks1, t2, int(t2.size), live)


# ---------------------------------------------------------------- scans


def point_seed(seed, index):
    return np.random.SeedSequence(seed, spawn_key=(int(index),))


def simulate_point(source: SourceConfig, budget: LossBudget, chain: DetectionChainConfig, scan_delay_ns, accumulation,
                   seed, index=0, arms=CAVITY_ARMS, method="thinned"):
    """One delay point: (coincidences, singles1, singles2, live fraction)."""
    ss = point_seed(seed, index)
    if method == "thinned":
        rng = np.random.default_rng(ss)
        p_s = arm_transmission(budget, arms, "signal")
        p_i = arm_transmission(budget, arms, "idler")
        clicks = _simulate_thinned(source, p_s, p_i, chain, accumulation, scan_delay_ns, rng)
    elif method == "full":
        s_gen, s_loss, s_det = ss.spawn(3)
        events = generate_pair_events(source, accumulation, s_gen)
        photons = apply_losses(events, budget, arms, s_loss)
        clicks = simulate_detection(photons, chain, accumulation, scan_delay_ns, s_det)
    else:
        raise PreconditionError(f"method must be 'thinned' or 'full', got {method!r}")
    return clicks.coincidences, clicks.det1.size, clicks.det2.size, clicks.live_fraction


def _point_job(args):
    return simulate_point(*args)


@dataclass(frozen=True)
class CoincidenceHistogram:
    delays_ns: np.ndarray
    coincidences: np.ndarray
    singles1: np.ndarray
    singles2: np.ndarray
    accumulation_s: float
    seed: int
    live_fraction: np.ndarray = field(default=None)

    def __post_init__(self):
        n = np.asarray(self.delays_ns).size
        for name in ("coincidences", "singles1", "singles2"):
            arr = np.asarray(getattr(self, name))
            if arr.size != n:
                raise ShapeError(f"{name} has {arr.size} entries for {n} delay points")
            if np.any(arr < 0):
                raise ShapeError(f"{name} must be non-negative")
            if np.any(arr != np.round(arr)):
                raise ShapeError(f"{name} must be whole counts")
            object.__setattr__(self, name, arr.astype(np.int64))
        object.__setattr__(self, "delays_ns", np.asarray(self.delays_ns, dtype=float))
        lf = np.ones(n) if self.live_fraction is None else np.asarray(self.live_fraction, dtype=float)
        object.__setattr__(self, "live_fraction", lf)

    def rows(self):
        return list(zip(self.delays_ns.tolist(), self.coincidences.tolist(),
                        self.singles1.tolist(), self.singles2.tolist()))


def scan_coincidences(source: SourceConfig, budget: LossBudget, chain: DetectionChainConfig, delays_ns: Sequence[float],
                      accumulation, seed, arms=CAVITY_ARMS, method="thinned", workers=1):
    """Delay-scanned coincidence histogram; point i uses seed stream (seed, i)."""
    delays = [float(d) for d in delays_ns]
    if not delays:
        raise PreconditionError("delay list is empty")
    if not accumulation > 0:
        raise PreconditionError("accumulation time must be positive")
    if seed is None or int(seed) < 0:
        raise PreconditionError("a non-negative integer seed is required")
    jobs = [(source, budget, chain, d, accumulation, int(seed), i, arms, method) for i, d in enumerate(delays)]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_point_job, jobs))
    else:
        results = [_point_job(j) for j in jobs]
    coinc, s1, s2, live = (np.array(col) for col in zip(*results))
    return CoincidenceHistogram(np.array(delays), coinc, s1, s2, float(accumulation), int(seed), live)


def far_floor(hist: CoincidenceHistogram, far_offset_ns=200.0):
    """Mean of the counts at |delay| >= far_offset (accidental floor) and its Poisson variance."""
    far = np.abs(hist.delays_ns) >= far_offset_ns
    if not np.any(far):
        raise ShapeError(f"no delay points at |delay| >= {far_offset_ns} ns")
    c = hist.coincidences[far].astype(float)
    # with only a few far points the Poisson variance beats the sample variance
    return float(c.mean()), float(c.mean() / c.size)


def snr(hist: CoincidenceHistogram, far_offset_ns=None):
    """Peak over floor: min over all points, or the mean of the far points if an offset is given."""
    if hist.coincidences.size < 2:
        raise ShapeError("SNR needs at least two delay points")
    top = float(hist.coincidences.max())
    if far_offset_ns is None:
        low = float(hist.coincidences.min())
    else:
        low = far_floor(hist, far_offset_ns)[0]
    if low == 0:
        raise UndefinedSNRError("minimum coincidence count is zero; extend the accumulation time")
    return top / low


def histogram_fwhm(hist: CoincidenceHistogram, far_offset_ns=200.0):
    """FWHM (ns) of the floor-subtracted histogram, restricted to the near-delay points."""
    floor, _ = far_floor(hist, far_offset_ns)
    near = np.abs(hist.delays_ns) < far_offset_ns
    order = np.argsort(hist.delays_ns[near])
    x = hist.delays_ns[near][order]
    y = hist.coincidences[near][order] - floor
    return fwhm_of(x, y)
