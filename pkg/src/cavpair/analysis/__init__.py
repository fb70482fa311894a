"""Rate estimation, loss-budget arithmetic and curve fitting."""
from .fitting import MODELS, FitResult, fit, initial_guess, model_curve
from .rates import (
    BRIGHTNESS_TABLE,
    BrightnessRecord,
    Rate,
    RateEstimate,
    RateFactor,
    RateUnit,
    estimate_rate_cavity,
    estimate_rate_single_pass,
    histogram_pair_rate,
    spectral_brightness,
)
