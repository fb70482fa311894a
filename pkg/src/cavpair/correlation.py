"""Signal-idler cross-correlation of a cavity-enhanced down-converter.

The multi-mode amplitude is a sum over longitudinal modes,

    A(tau) = sum_m W_m * S_m * exp(-2 pi Gamma_s (tau - tau0/2))   tau >= tau0/2
             sum_m W_m * S_m * exp(+2 pi Gamma_i (tau - tau0/2))   tau <  tau0/2

with Gamma_{s,i} = gamma_{s,i}/2 + i m_{s,i} FSR, weights
W = sqrt(gamma_s gamma_i) / (Gamma_s + Gamma_i) and the birefringent-delay factor
S = sinc(i pi tau0 Gamma) (unity at tau0 = 0). Signal and idler mode indices are
paired, m_i = -m_s, as energy conservation demands for an aligned comb; in that
case W is the same for every mode and the trace is a comb of teeth 1/FSR apart
under an exp(-2 pi gamma |tau|) envelope. G2 = |A|^2, peak-normalized. The
sqrt(omega_s omega_i) prefactor is constant across the comb and dropped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .cavity import CombSpec
from .errors import PreconditionError, ResolutionError, ShapeError

__all__ = [
    "CorrelationTrace",
    "symmetric_grid",
    "g2_multimode",
    "g2_single_mode",
    "detector_response",
    "convolve_response",
    "convolve_response_direct",
    "fwhm",
    "fwhm_of",
    "coherence_time",
    "comb_resolving_step",
    "measured_correlation",
]

# Decay-time constant; 1.39 ~ 2 ln 2 makes it the FWHM of exp(-2 pi gamma |tau|).
COHERENCE_CONSTANT = 1.39
# Kernel support in units of sigma; exp(-8.5^2) ~ 2e-32.
KERNEL_HALF_WIDTH = 8.5


@dataclass(frozen=True)
class CorrelationTrace:
    """Peak-normalized correlation samples on a uniform delay grid (seconds)."""

    tau: np.ndarray
    values: np.ndarray
    comb: CombSpec | None = None
    sigma: float = 0.0

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if tau.ndim != 1 or tau.shape != values.shape or tau.size == 0:
            raise ShapeError("tau and values must be equal-length non-empty 1-D arrays")
        if tau.size > 1:
            d = np.diff(tau)
            if np.any(d <= 0):
                raise ShapeError("delay grid must be strictly ascending")
            if np.max(np.abs(d - d[0])) > 1e-9 * abs(d[0]):
                raise ShapeError("delay grid must be uniformly spaced")
        if np.any(values < 0) or abs(values.max() - 1.0) > 1e-12:
            raise ShapeError("values must be non-negative and peak-normalized")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "values", values)

    @property
    def step(self):
        if self.tau.size < 2:
            return 0.0
        return (self.tau[-1] - self.tau[0]) / (self.tau.size - 1)

    def header(self):
        comb = self.comb.describe() if self.comb is not None else "comb=none"
        return f"# {comb} sigma_ns={self.sigma * 1e9:.9g}"


def symmetric_grid(span, step):
    """Uniform grid -span..span (inclusive, containing 0) with spacing ``step``."""
    if not (span > 0 and step > 0):
        raise PreconditionError("span and step must be positive")
    n = int(round(span / step))
    return np.arange(-n, n + 1) * step


def _sinc_complex(z):
    z = np.asarray(z, dtype=complex)
    out = np.ones_like(z)
    nz = z != 0
    out[nz] = np.sin(z[nz]) / z[nz]
    return out


def _peak_normalize(values):
    top = values.max()
    if not top > 0:
        raise ShapeError("trace has no positive values")
    return values / top


def _branch_weights(spec: CombSpec, pairing):
    m = spec.mode_indices
    fsr = spec.fsr
    gamma_s_c = spec.gamma_s / 2 + 1j * m * fsr
    amp = math.sqrt(spec.gamma_s * spec.gamma_i)
    if pairing == "paired":
        gamma_i_c = spec.gamma_i / 2 - 1j * m * fsr  # m_i = -m_s
        w = amp / (gamma_s_c + gamma_i_c)
        w_s, w_i = w, w
        m_s, m_i = m, -m
    elif pairing == "independent":
        gamma_i_all = spec.gamma_i / 2 + 1j * m * fsr
        denom = gamma_s_c[:, None] + gamma_i_all[None, :]
        w_s = (amp / denom).sum(axis=1)
        w_i = (amp / denom).sum(axis=0)
        m_s, m_i = m, m
    else:
        raise PreconditionError(f"pairing must be 'paired' or 'independent', got {pairing!r}")
    g_s = spec.gamma_s / 2 + 1j * m_s * fsr
    g_i = spec.gamma_i / 2 + 1j * m_i * fsr
    s_s = _sinc_complex(1j * np.pi * spec.tau0 * g_s)
    s_i = _sinc_complex(1j * np.pi * spec.tau0 * g_i)
    return (w_s * s_s, m_s), (w_i * s_i, m_i)


def g2_multimode(spec: CombSpec, tau, pairing="paired"):
    """Multi-mode cross-correlation sampled at ``tau`` (seconds, uniform grid).

    ``pairing="independent"`` sums signal and idler mode indices independently
    instead of pairing them; kept for comparison only.
    """
    tau = np.asarray(tau, dtype=float)
    if tau.ndim != 1 or tau.size == 0:
        raise PreconditionError("tau grid must be a non-empty 1-D array")
    (c_s, m_s), (c_i, m_i) = _branch_weights(spec, pairing)
    shifted = tau - spec.tau0 / 2
    late = shifted >= 0
    t_late = shifted[late]
    t_early = shifted[~late]
    amp = np.zeros(tau.size, dtype=complex)
    a_late = np.zeros(t_late.size, dtype=complex)
    a_early = np.zeros(t_early.size, dtype=complex)
    # fixed summation order per sample: results do not depend on how tau is split
    for k in range(m_s.size):
        a_late += c_s[k] * np.exp(-2j * np.pi * m_s[k] * spec.fsr * t_late)
    for k in range(m_i.size):
        a_early += c_i[k] * np.exp(2j * np.pi * m_i[k] * spec.fsr * t_early)
    amp[late] = a_late * np.exp(-np.pi * spec.gamma_s * t_late)
    amp[~late] = a_early * np.exp(np.pi * spec.gamma_i * t_early)
    g2 = np.abs(amp) ** 2
    return CorrelationTrace(tau, _peak_normalize(g2), comb=spec, sigma=0.0)


def g2_single_mode(gamma, tau):
    if not gamma > 0:
        raise PreconditionError("gamma must be positive")
    return np.exp(-2 * np.pi * gamma * np.abs(tau))


def detector_response(sigma, t):
    """Gaussian detection-system response exp(-t^2 / sigma^2), unit peak."""
    if not sigma > 0:
        raise PreconditionError("sigma must be positive")
    t = np.asarray(t, dtype=float)
    return np.exp(-((t / sigma) ** 2))


def comb_resolving_step(spec: CombSpec, pairing="paired"):
    """Largest grid step for which quadrature over the comb does not alias.

    |A|^2 carries beat frequencies up to (spread of mode indices) * FSR; the
    rectangle rule integrates them exactly when there are at least two samples
    per period of the highest beat.
    """
    spread = 2 * (int(spec.modes) - 1) if pairing == "independent" else int(spec.modes) - 1
    if spread == 0:
        return math.inf
    return 1.0 / (2.0 * spread * spec.fsr)


def _check_resolution(trace: CorrelationTrace, sigma):
    step = trace.step
    if step > sigma / 4:
        raise ResolutionError(f"grid step {step:.6g} s exceeds sigma/4", sigma / 4)
    if trace.comb is not None and trace.comb.modes > 1:
        need = comb_resolving_step(trace.comb)
        if step > need:
            raise ResolutionError(f"grid step {step:.6g} s does not resolve the mode comb", need)


def _kernel(step, sigma):
    half = int(math.ceil(KERNEL_HALF_WIDTH * sigma / step))
    return detector_response(sigma, np.arange(-half, half + 1) * step), half


def convolve_response(trace: CorrelationTrace, sigma, check_resolution=True):
    """Convolve a trace with the Gaussian response by rectangle-rule quadrature.

    Samples outside the trace are treated as zero, so the trace should extend
    several sigma past the region of interest. The result is peak-normalized.
    ``check_resolution=False`` skips the grid checks (used for the delta limit).
    """
    if not sigma > 0:
        raise PreconditionError("sigma must be positive")
    if trace.tau.size < 2:
        raise ShapeError("trace needs at least two samples")
    if check_resolution:
        _check_resolution(trace, sigma)
    kern, half = _kernel(trace.step, sigma)
    full = fftconvolve(trace.values, kern, mode="full")
    out = full[half : half + trace.tau.size]
    out = np.clip(out, 0.0, None)
    return CorrelationTrace(trace.tau, _peak_normalize(out), comb=trace.comb, sigma=sigma)


def convolve_response_direct(trace: CorrelationTrace, sigma):
    """Reference quadrature: explicit sum over every sample pair, no kernel truncation."""
    tau, v = trace.tau, trace.values
    out = np.empty(tau.size)
    for i in range(tau.size):
        acc = 0.0
        d = tau[i] - tau
        h = np.exp(-((d / sigma) ** 2))
        for j in range(tau.size):
            acc += v[j] * h[j]
        out[i] = acc
    return CorrelationTrace(tau, out / out.max(), comb=trace.comb, sigma=sigma)


def fwhm_of(x, y):
    """Full width at half maximum by linear interpolation around the global peak."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise ShapeError("need at least three samples of matching shape")
    i = int(np.argmax(y))
    peak = y[i]
    if not peak > 0:
        raise ShapeError("no positive peak")
    if i == 0 or i == y.size - 1:
        raise ShapeError("global maximum sits on a grid boundary")
    half = 0.5 * peak
    right = np.nonzero(y[i:] < half)[0]
    left = np.nonzero(y[: i + 1] < half)[0]
    if right.size == 0 or left.size == 0:
        raise ShapeError("half maximum is not crossed on both sides of the peak")
    r = i + right[0]
    l = left[-1]
    x_r = x[r - 1] + (half - y[r - 1]) * (x[r] - x[r - 1]) / (y[r] - y[r - 1])
    x_l = x[l] + (half - y[l]) * (x[l + 1] - x[l]) / (y[l + 1] - y[l])
    return x_r - x_l


def fwhm(trace: CorrelationTrace):
    return fwhm_of(trace.tau, trace.values)


def coherence_time(gamma):
    """Decay time 1.39 / (2 pi gamma) of the correlation envelope, in s."""
    if not gamma > 0:
        raise PreconditionError("gamma must be positive")
    return COHERENCE_CONSTANT / (2 * np.pi * gamma)


def measured_correlation(spec: CombSpec, sigma, span=150e-9, step=0.05e-9, pairing="paired"):
    """Raw and detector-convolved correlation on a common output grid.

    The raw trace holds exact point samples on the output grid. The convolution
    is evaluated on a grid refined by an integer factor until it resolves both
    the comb beats and the response kernel, then decimated back onto the output
    grid and renormalized.
    """
    out_tau = symmetric_grid(span, step)
    raw = g2_multimode(spec, out_tau, pairing)
    need = min(comb_resolving_step(spec, pairing), sigma / 4)
    refine = max(1, int(math.ceil(step / need)))
    fine_tau = symmetric_grid(span, step / refine)
    fine = g2_multimode(spec, fine_tau, pairing)
    conv = convolve_response(fine, sigma)
    sampled = conv.values[::refine]
    convolved = CorrelationTrace(out_tau, _peak_normalize(sampled), comb=spec, sigma=sigma)
    return raw, convolved
