import math

import numpy as np
import pytest
from scipy import stats

from cavpair.cavity import CombSpec
from cavpair.correlation import g2_multimode, symmetric_grid
from cavpair.detection import (
    CAVITY_ARMS,
    SINGLE_PASS_ARMS,
    PUBLISHED_LOSSES,
    CoincidenceHistogram,
    DetectionChainConfig,
    DetectorConfig,
    LossBudget,
    PairEvents,
    SourceConfig,
    SurvivingPhotons,
    _live_fraction,
    apply_losses,
    arm_transmission,
    far_floor,
    generate_pair_events,
    scan_coincidences,
    simulate_detection,
    simulate_point,
    snr,
)
from cavpair.errors import ConfigError, PreconditionError, ShapeError, UndefinedSNRError

GAMMA = 8e6
REF_DET1 = DetectorConfig(0.08, 5.0, 1000.0, 6e-6)
REF_DET2 = DetectorConfig(0.08, 2.5, 1000.0, 6e-6)
REF_CHAIN = DetectionChainConfig(REF_DET1, REF_DET2)
LOSSLESS = LossBudget({"alpha": 1.0, "alpha1": 1.0, "alpha2": 1.0, "t1": 1.0, "t2": 1.0})
# gates as long as the trigger period: detector 1 is always open
OPEN = DetectorConfig(1.0, 100.0, 0.0, 0.0)


def _within(observed, expected, sigma, k=5):
    assert abs(observed - expected) <= k * sigma, (observed, expected, sigma)


# ---------------------------------------------------------------- source


def test_pair_count_is_poisson():
    ev = generate_pair_events(SourceConfig(1e4, 1.0), 10.0, seed=1)
    _within(len(ev), 1e5, math.sqrt(1e5))
    assert np.all(np.diff(ev.t_signal) >= 0)
    assert np.all((ev.t_signal >= 0) & (ev.t_signal < 10.0))


def test_zero_rate_gives_empty_stream():
    assert len(generate_pair_events(SourceConfig(0.0, 5.0), 1.0, seed=1)) == 0
    assert len(generate_pair_events(SourceConfig(1e3, 0.0), 1.0, seed=1)) == 0


def test_generation_is_deterministic():
    a = generate_pair_events(SourceConfig(1e4, 1.0, GAMMA), 1.0, seed=5)
    b = generate_pair_events(SourceConfig(1e4, 1.0, GAMMA), 1.0, seed=5)
    np.testing.assert_array_equal(a.t_signal, b.t_signal)
    np.testing.assert_array_equal(a.t_idler, b.t_idler)


def test_single_mode_offsets_follow_exponential_density():
    src = SourceConfig(1.0, 1.0, GAMMA)
    x = src.sample_offsets(np.random.default_rng(3), 1_000_000)
    edges = np.linspace(-100e-9, 100e-9, 201)
    observed, _ = np.histogram(x, edges)
    expected = x.size * np.diff(src.offset_cdf(edges))
    ok = expected >= 5
    chi2 = np.sum((observed[ok] - expected[ok]) ** 2 / expected[ok])
    assert chi2 / (ok.sum() - 1) < 2


def test_trace_offsets_follow_trace():
    tau = symmetric_grid(60e-9, 0.05e-9)
    trace = g2_multimode(CombSpec(GAMMA, GAMMA, 0.952e9, 1), tau)
    src = SourceConfig(1.0, 1.0, trace=trace)
    x = src.sample_offsets(np.random.default_rng(4), 200_000)
    assert stats.kstest(x, src.offset_cdf).pvalue > 1e-3
    assert np.all(np.abs(x) <= src.offset_support() + 0.05e-9)


def test_delta_source_has_zero_offset():
    ev = generate_pair_events(SourceConfig(1e3, 1.0), 1.0, seed=2)
    np.testing.assert_array_equal(ev.t_signal, ev.t_idler)


# ---------------------------------------------------------------- losses


def test_lossless_budget_is_identity():
    ev = generate_pair_events(SourceConfig(1e4, 1.0, GAMMA), 1.0, seed=6)
    out = apply_losses(ev, LOSSLESS, CAVITY_ARMS, seed=1)
    np.testing.assert_array_equal(out.pairs.t_signal, ev.t_signal)
    np.testing.assert_array_equal(out.pairs.t_idler, ev.t_idler)
    np.testing.assert_array_equal(out.signal, ev.t_signal)
    np.testing.assert_array_equal(out.idler, np.sort(ev.t_idler))


def test_single_factor_halves_pairs():
    ev = PairEvents(np.arange(1_000_000, dtype=float), np.arange(1_000_000, dtype=float))
    budget = LossBudget({"alpha1": 0.5, "alpha2": 1.0, "t": 1.0})
    out = apply_losses(ev, budget, SINGLE_PASS_ARMS, seed=8)
    _within(len(out.pairs), 5e5, math.sqrt(1e6 * 0.25))
    assert out.idler.size == 1_000_000


def test_published_pair_survival():
    p = arm_transmission(PUBLISHED_LOSSES, CAVITY_ARMS, "signal") * arm_transmission(PUBLISHED_LOSSES, CAVITY_ARMS, "idler")
    assert p == pytest.approx(0.33**2 * 0.82 * 0.86 * 0.78**2 * 0.84**2, rel=1e-12)
    assert p == pytest.approx(0.0330, abs=5e-5)
    ev = PairEvents(np.zeros(1_000_000), np.zeros(1_000_000))
    out = apply_losses(ev, PUBLISHED_LOSSES, CAVITY_ARMS, seed=9)
    _within(len(out.pairs), 1e6 * p, math.sqrt(1e6 * p * (1 - p)))


def test_unknown_factor_is_config_error():
    with pytest.raises(ConfigError):
        apply_losses(PairEvents(np.zeros(3), np.zeros(3)), LossBudget({"alpha": 0.5}), CAVITY_ARMS, seed=1)
    with pytest.raises(ConfigError):
        PUBLISHED_LOSSES["beta"]


def test_budget_rejects_out_of_range_factor():
    with pytest.raises(PreconditionError):
        LossBudget({"alpha": 1.2})
    with pytest.raises(PreconditionError):
        LossBudget({"alpha": 0.0})


# ---------------------------------------------------------------- detectors


def _photons(signal, idler=None):
    signal = np.asarray(signal, dtype=float)
    idler = signal if idler is None else np.asarray(idler, dtype=float)
    return SurvivingPhotons(signal, np.sort(idler), PairEvents(signal, idler))


def test_dark_clicks_of_detector_one():
    clicks = simulate_detection(_photons([]), REF_CHAIN, 1.0, seed=11)
    expected = 1e7 * 5 * 6e-6
    _within(clicks.det1.size, expected, math.sqrt(expected))


def test_ideal_detector_clicks_on_every_photon():
    chain = DetectionChainConfig(OPEN, OPEN)
    t = np.arange(1, 1001) * 1e-6 + 0.37e-9  # one photon per microsecond
    clicks = simulate_detection(_photons(t), chain, 1.01e-3, seed=12)
    np.testing.assert_allclose(clicks.det1, t, rtol=0, atol=1e-15)


def test_dead_time_allows_one_click_per_microsecond():
    det = DetectorConfig(1.0, 100.0, 1000.0, 0.0)
    chain = DetectionChainConfig(det, det)
    clicks = simulate_detection(_photons([10e-6, 10.1e-6]), chain, 20e-6, seed=13)
    assert clicks.det1.size == 1


def test_clicks_respect_dead_time():
    det = DetectorConfig(0.5, 100.0, 1000.0, 1e-4)
    chain = DetectionChainConfig(det, det)
    t = np.sort(np.random.default_rng(1).uniform(0, 0.01, 200_000))
    clicks = simulate_detection(_photons(t), chain, 0.01, seed=14)
    assert clicks.det1.size > 100
    assert np.all(np.diff(clicks.det1) >= 1000e-9 - 1e-15)
    assert np.all(np.diff(clicks.det2) >= 1000e-9 - 1e-15)


def test_ideal_chain_one_coincidence_per_pair():
    det = DetectorConfig(1.0, 100.0, 0.0, 0.0)
    chain = DetectionChainConfig(det, DetectorConfig(1.0, 2.5, 0.0, 0.0))
    t = np.arange(1, 5001) * 1e-6 + 0.11e-9
    clicks = simulate_detection(_photons(t), chain, 5.1e-3, seed=15)
    assert clicks.det1.size == 5000
    assert clicks.coincidences == 5000
    # off balance by more than half a window the partner misses
    clicks = simulate_detection(_photons(t), chain, 5.1e-3, scan_delay_ns=2.0, seed=15)
    assert clicks.coincidences == 0


def test_live_fraction_counts_blinded_gates():
    # click 2 ns into gate 0, 1 us dead, 100 ns period: gates 1..10 open too early
    lf = _live_fraction(100, np.array([2e-9]), np.array([0]), 0.0, 100e-9, 1000e-9)
    assert lf == pytest.approx(0.9)
    lf = _live_fraction(5, np.array([2e-9]), np.array([0]), 0.0, 100e-9, 1000e-9)
    assert lf == pytest.approx(0.2)


def test_unsorted_signal_rejected():
    with pytest.raises(PreconditionError):
        simulate_detection(_photons([2e-6, 1e-6]), REF_CHAIN, 1e-5, seed=1)


def test_chain_validation():
    with pytest.raises(PreconditionError):
        DetectorConfig(0.0, 5, 0, 0)
    with pytest.raises(PreconditionError):
        DetectionChainConfig(REF_DET1, REF_DET2, det2_mode="free")
    with pytest.raises(PreconditionError):
        DetectionChainConfig(DetectorConfig(1.0, 200.0, 0, 0), REF_DET2)
    assert REF_CHAIN.gate_fraction == pytest.approx(0.05)


# ---------------------------------------------------------------- scans

BRIGHT = SourceConfig(2e6, 1.0, GAMMA)
FAST_CHAIN = DetectionChainConfig(DetectorConfig(0.5, 5.0, 1000.0, 6e-6), DetectorConfig(0.5, 2.5, 1000.0, 6e-6))
LIGHT = LossBudget({"alpha": 0.9, "alpha1": 0.95, "alpha2": 0.95, "t1": 0.95, "t2": 0.95})


@pytest.mark.parametrize("delay", [0.0, 300.0])
def test_full_and_thinned_paths_agree(delay):
    full, thin = [], []
    for i in range(3):
        full.append(simulate_point(BRIGHT, LIGHT, FAST_CHAIN, delay, 4.0, seed=21, index=i, method="full"))
        thin.append(simulate_point(BRIGHT, LIGHT, FAST_CHAIN, delay, 4.0, seed=22, index=i, method="thinned"))
    full, thin = np.array(full), np.array(thin)
    for col in range(3):  # coincidences, singles1, singles2
        a, b = full[:, col].sum(), thin[:, col].sum()
        _within(a, b, math.sqrt(a + b))
    np.testing.assert_allclose(full[:, 3].mean(), thin[:, 3].mean(), rtol=1e-3)


@pytest.mark.parametrize("method", ["full", "thinned"])
def test_accidental_floor_matches_rate_formula(method):
    accum = 4.0
    coinc, s1, s2, _ = simulate_point(BRIGHT, LIGHT, FAST_CHAIN, 300.0, accum, seed=31, method=method)
    p_i = arm_transmission(LIGHT, CAVITY_ARMS, "idler")
    d2 = FAST_CHAIN.det2
    per_gate = 1 - math.exp(-d2.gate_ns * 1e-9 * BRIGHT.pair_rate * p_i * d2.efficiency - d2.dark_per_ns * d2.gate_ns)
    expected = s1 * per_gate
    _within(coinc, expected, math.sqrt(expected))


def test_internal_mode_runs_full_only():
    chain = DetectionChainConfig(REF_DET1, REF_DET2, det2_mode="internal")
    with pytest.raises(PreconditionError):
        simulate_point(BRIGHT, LIGHT, chain, 0.0, 0.01, seed=1)
    c, s1, s2, _ = simulate_point(BRIGHT, LIGHT, chain, 0.0, 0.05, seed=1, method="full")
    assert s2 > 0 and c <= s1
    with pytest.raises(PreconditionError):
        simulate_point(BRIGHT, LIGHT, REF_CHAIN, 0.0, 0.01, seed=1, method="exact")


def test_scan_is_deterministic_and_parallel_safe():
    delays = [-300, -20, -5, 0, 5, 20, 300]
    a = scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, delays, 0.2, seed=41)
    b = scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, delays, 0.2, seed=41)
    c = scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, delays, 0.2, seed=41, workers=2)
    d = scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, delays, 0.2, seed=42)
    for h in (b, c):
        np.testing.assert_array_equal(a.coincidences, h.coincidences)
        np.testing.assert_array_equal(a.singles1, h.singles1)
        np.testing.assert_array_equal(a.singles2, h.singles2)
        np.testing.assert_array_equal(a.live_fraction, h.live_fraction)
    assert not np.array_equal(a.singles1, d.singles1)
    assert a.seed == 41 and a.accumulation_s == 0.2
    assert a.rows()[3][0] == 0.0


def test_scan_preconditions():
    with pytest.raises(PreconditionError):
        scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, [], 1.0, seed=1)
    with pytest.raises(PreconditionError):
        scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, [0], 0.0, seed=1)
    with pytest.raises(PreconditionError):
        scan_coincidences(BRIGHT, LIGHT, FAST_CHAIN, [0], 1.0, seed=None)


def test_doubling_power_lowers_snr():
    delays = [-300, -250, -200, 0, 200, 250, 300]
    low = scan_coincidences(BRIGHT.with_power(1.0), LIGHT, REF_CHAIN, delays, 20.0, seed=51)
    high = scan_coincidences(BRIGHT.with_power(2.0), LIGHT, REF_CHAIN, delays, 20.0, seed=52)
    assert snr(high, far_offset_ns=200) < snr(low, far_offset_ns=200)


# ---------------------------------------------------------------- histogram helpers


def _hist(counts, delays=None):
    delays = np.arange(len(counts), dtype=float) if delays is None else delays
    n = len(counts)
    return CoincidenceHistogram(delays, counts, np.ones(n), np.ones(n), 300.0, 0)


def test_snr_values():
    assert snr(_hist([7, 7, 7])) == 1.0
    assert snr(_hist([98, 150, 259, 120])) == pytest.approx(2.64, abs=0.005)
    with pytest.raises(UndefinedSNRError):
        snr(_hist([0, 5, 3]))
    with pytest.raises(ShapeError):
        snr(_hist([5]))


def test_far_floor():
    h = _hist([10, 50, 12], delays=np.array([-250.0, 0.0, 250.0]))
    mean, var = far_floor(h)
    assert mean == 11.0 and var == 5.5
    with pytest.raises(ShapeError):
        far_floor(h, far_offset_ns=1000)


def test_histogram_validation():
    with pytest.raises(ShapeError):
        CoincidenceHistogram(np.arange(3.0), [1, -1, 2], [1, 1, 1], [1, 1, 1], 1.0, 0)
    with pytest.raises(ShapeError):
        CoincidenceHistogram(np.arange(3.0), [1, 2], [1, 1, 1], [1, 1, 1], 1.0, 0)
    with pytest.raises(ShapeError):
        CoincidenceHistogram(np.arange(3.0), [1, 2.5, 3], [1, 1, 1], [1, 1, 1], 1.0, 0)
