"""Damped least-squares fits for the curve shapes used in the analysis.

Models (parameters in order):

    linear        slope, intercept            y = slope*x + intercept (exact solve)
    lorentzian    A, x0, w, b                 A / (1 + ((x - x0)/(w/2))^2) + b, w = FWHM
    sin2          A, x0, w, b                 A cos^2(pi (x - x0) / (2 w)) + b, w = FWHM
    sinc2         A, x0, w, b                 A sinc^2(pi (x - x0) / w) + b, w = first zero
    exp_envelope  A, x0, gamma, b             A exp(-2 pi gamma |x - x0|) + b

Nonlinear models use Levenberg-Marquardt with column-scaled Jacobians: a step
is accepted only if the residual sum of squares does not increase, the damping
drops tenfold after an accepted step and rises tenfold after a rejected one.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import PreconditionError

__all__ = ["FitResult", "MODELS", "fit", "model_curve", "initial_guess"]

STEP_TOL = 1e-8
MAX_ITER = 10_000
# sinc^2(u) = 1/2 at u = 1.39156; FWHM = 2 * 1.39156 / pi * w
SINC2_FWHM_PER_W = 2 * 1.3915573782515103 / math.pi
COHERENCE_CONSTANT = 1.39


def _lorentzian(x, p):
    A, x0, w, b = p
    u = 2 * (x - x0) / w
    return A / (1 + u * u) + b


def _lorentzian_jac(x, p):
    A, x0, w, b = p
    u = 2 * (x - x0) / w
    q = 1 / (1 + u * u)
    dq_du = -2 * u * q * q
    return np.column_stack([q, A * dq_du * (-2 / w), A * dq_du * (-u / w), np.ones_like(x)])


def _sin2(x, p):
    A, x0, w, b = p
    return A * np.cos(np.pi * (x - x0) / (2 * w)) ** 2 + b


def _sin2_jac(x, p):
    A, x0, w, b = p
    phi = np.pi * (x - x0) / (2 * w)
    c2 = np.cos(phi) ** 2
    d_phi = -A * np.sin(2 * phi)  # d(A cos^2 phi)/d phi
    return np.column_stack([c2, d_phi * (-np.pi / (2 * w)), d_phi * (-phi / w), np.ones_like(x)])


def _sinc(u):
    return np.sinc(u / np.pi)


def _dsinc(u):
    out = np.zeros_like(u)
    nz = np.abs(u) > 1e-6
    un = u[nz]
    out[nz] = (un * np.cos(un) - np.sin(un)) / (un * un)
    out[~nz] = -u[~nz] / 3
    return out


def _sinc2(x, p):
    A, x0, w, b = p
    return A * _sinc(np.pi * (x - x0) / w) ** 2 + b


def _sinc2_jac(x, p):
    A, x0, w, b = p
    u = np.pi * (x - x0) / w
    s = _sinc(u)
    d_u = 2 * A * s * _dsinc(u)
    return np.column_stack([s * s, d_u * (-np.pi / w), d_u * (-u / w), np.ones_like(x)])


def _exp(x, p):
    A, x0, g, b = p
    return A * np.exp(-2 * np.pi * g * np.abs(x - x0)) + b


def _exp_jac(x, p):
    A, x0, g, b = p
    d = x - x0
    e = np.exp(-2 * np.pi * g * np.abs(d))
    return np.column_stack(
        [e, A * e * 2 * np.pi * g * np.sign(d), -A * e * 2 * np.pi * np.abs(d), np.ones_like(x)]
    )


def _linear(x, p):
    return p[0] * x + p[1]


MODELS = {
    "linear": (("slope", "intercept"), _linear, None),
    "lorentzian": (("A", "x0", "w", "b"), _lorentzian, _lorentzian_jac),
    "sin2": (("A", "x0", "w", "b"), _sin2, _sin2_jac),
    "sinc2": (("A", "x0", "w", "b"), _sinc2, _sinc2_jac),
    "exp_envelope": (("A", "x0", "gamma", "b"), _exp, _exp_jac),
}


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict
    rss: float
    converged: bool
    iterations: int
    derived: dict = field(default_factory=dict)
    rss_history: tuple = ()

    def as_dict(self):
        return {
            "model": self.model,
            "params": dict(self.params),
            "rss": self.rss,
            "converged": self.converged,
            "iterations": self.iterations,
            "derived": dict(self.derived),
        }


def model_curve(model, x, params):
    """Evaluate a model at x; ``params`` is a mapping or an ordered sequence."""
    names, f, _ = _lookup(model)
    if isinstance(params, dict):
        params = [params[n] for n in names]
    return f(np.asarray(x, dtype=float), np.asarray(params, dtype=float))


def _lookup(model):
    try:
        return MODELS[model]
    except KeyError:
        raise PreconditionError(f"unknown model {model!r}; choose from {sorted(MODELS)}") from None


def _half_width(x, y, i_peak, level):
    """Distance between the level crossings around the peak, or None."""
    right = np.nonzero(y[i_peak:] < level)[0]
    left = np.nonzero(y[: i_peak + 1] < level)[0]
    if right.size == 0 or left.size == 0:
        return None
    r = i_peak + right[0]
    l = left[-1]
    xr = x[r - 1] + (level - y[r - 1]) * (x[r] - x[r - 1]) / (y[r] - y[r - 1])
    xl = x[l] + (level - y[l]) * (x[l + 1] - x[l]) / (y[l + 1] - y[l])
    return xr - xl


def initial_guess(model, x, y):
    """Data-driven starting point for ``model`` (x must be sorted)."""
    _lookup(model)
    span = x[-1] - x[0]
    i = int(np.argmax(y))
    top, low = float(y[i]), float(np.min(y))
    if model == "linear":
        slope, intercept = np.polyfit(x, y, 1)
        return np.array([slope, intercept])
    width = _half_width(x, y, i, low + 0.5 * (top - low))
    if width is None or not width > 0:
        width = span / 4
    if model == "lorentzian":
        return np.array([top - low, x[i], width, low])
    if model == "sin2":
        return np.array([top - low, x[i], width, low])
    if model == "sinc2":
        return np.array([top - low, x[i], width / SINC2_FWHM_PER_W, low])
    # exp_envelope: log-linear regression of the offset-free magnitude above 10% of peak
    z = np.abs(y - low)
    sel = z > 0.1 * z.max()
    d = np.abs(x[sel] - x[i])
    if sel.sum() >= 2 and np.ptp(d) > 0:
        slope, icpt = np.polyfit(d, np.log(z[sel]), 1)
        gamma = -slope / (2 * np.pi)
        amp = math.exp(icpt)
    else:
        gamma, amp = 0.0, top - low
    if not gamma > 0:
        gamma = math.log(2) / (math.pi * width)
    return np.array([amp, x[i], gamma, low])


def _typical_scales(model, x, y):
    xs = max(np.ptp(x), np.max(np.abs(x)), 1e-300)
    ys = max(np.max(np.abs(y)), 1e-300)
    if model == "exp_envelope":
        return np.array([ys, xs, 1.0 / xs, ys])
    return np.array([ys, xs, xs, ys])


def _derived(model, p):
    if model == "linear":
        return {}
    A, x0, w, b = (float(v) for v in p)
    if model == "lorentzian":
        return {"fwhm": abs(w), "peak_position": x0}
    if model == "sin2":
        return {"fwhm": abs(w), "peak_position": x0}
    if model == "sinc2":
        return {"fwhm": SINC2_FWHM_PER_W * abs(w), "peak_position": x0}
    return {
        "fwhm": math.log(2) / (math.pi * w) if w else math.inf,
        "coherence_time": COHERENCE_CONSTANT / (2 * math.pi * w) if w else math.inf,
        "peak_position": x0,
    }


def _fit_linear(x, y):
    # centred normal equations: exact for exactly representable linear data
    xm, ym = x.mean(), y.mean()
    dx = x - xm
    slope = float(dx @ (y - ym) / (dx @ dx))
    intercept = float(ym - slope * xm)
    r = y - (slope * x + intercept)
    rss = float(r @ r)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    derived = {"r_squared": 1.0 - rss / ss_tot if ss_tot > 0 else 1.0}
    params = {"slope": float(slope), "intercept": float(intercept)}
    return FitResult("linear", params, rss, True, 1, derived, (rss,))


def _levenberg_marquardt(f, jac, x, y, p0, scales, max_iter):
    p = np.array(p0, dtype=float)
    r = y - f(x, p)
    rss = float(r @ r)
    history = [rss]
    lam = 1e-3
    n_par = p.size
    converged = rss == 0.0
    it = 0
    while not converged and it < max_iter:
        it += 1
        J = jac(x, p)
        D = np.linalg.norm(J, axis=0)
        D[D == 0] = 1.0
        Js = J / D
        A = np.vstack([Js, math.sqrt(lam) * np.eye(n_par)])
        rhs = np.concatenate([r, np.zeros(n_par)])
        step = np.linalg.lstsq(A, rhs, rcond=None)[0] / D
        rel = float(np.max(np.abs(step) / np.maximum(np.abs(p), scales)))
        trial = p + step
        r_new = y - f(x, trial)
        rss_new = float(r_new @ r_new)
        if math.isfinite(rss_new) and rss_new <= rss:
            p, r, rss = trial, r_new, rss_new
            history.append(rss)
            lam = max(lam / 10, 1e-12)
            if rel < STEP_TOL or rss == 0.0:
                converged = True
        else:
            if rel < STEP_TOL:
                # at the floor of attainable precision
                converged = True
            lam *= 10
            if lam > 1e20:
                break
    return p, rss, converged, it, tuple(history)


def fit(model, x, y, initial=None, max_iter=MAX_ITER):
    """Least-squares fit of ``model`` to (x, y); returns a FitResult.

    Non-convergence is reported through ``converged=False`` rather than raised.
    """
    names, f, jac = _lookup(model)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 1 or x.shape != y.shape:
        raise PreconditionError("x and y must be 1-D arrays of equal length")
    if x.size < len(names) + 2:
        raise PreconditionError(f"{model} needs at least {len(names) + 2} points, got {x.size}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise PreconditionError("data must be finite")
    if np.ptp(x) == 0:
        raise PreconditionError("degenerate data: all x values are equal")
    order = np.argsort(x, kind="stable")
    x, y = x[order], y[order]
    if model == "linear":
        return _fit_linear(x, y)
    if isinstance(initial, dict):
        initial = [initial[n] for n in names]
    p0 = initial_guess(model, x, y) if initial is None else np.asarray(initial, dtype=float)
    if p0.size != len(names):
        raise PreconditionError(f"{model} takes {len(names)} parameters {names}")
    p, rss, converged, it, hist = _levenberg_marquardt(f, jac, x, y, p0, _typical_scales(model, x, y), max_iter)
    if model != "exp_envelope":
        p[2] = abs(p[2])  # the model is even in its width
    params = {n: float(v) for n, v in zip(names, p)}
    return FitResult(model, params, rss, converged, it, _derived(model, p), hist)
