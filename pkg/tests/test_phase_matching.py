import math

import numpy as np
import pytest

from cavpair.config import load_config
from cavpair.errors import InvariantError, PreconditionError, RangeError, RootNotBracketedError
from cavpair.phase_matching import (
    AxisDispersion,
    IndexModel,
    QpmCrystal,
    ThermoOpticBand,
    degenerate_temperature,
    qpm_mismatch,
    refractive_index,
    tuning_curve,
)

PERIOD_UM = 46.2


def _model(n_y=1.8, n_z=None, dndT_y=0.0, dndT_z=0.0):
    axes = {"y": AxisDispersion.constant(n_y, dndT_y)}
    if n_z is not None:
        axes["z"] = AxisDispersion.constant(n_z, dndT_z)
    return IndexModel(axes, 22.0, (700.0, 1700.0), (-40.0, 120.0))


def _matched_crystal(dndT_z=0.0, sign=-1, period_um=PERIOD_UM):
    # choose n_z so that n_y/780 - n_y/1560 - n_z/1560 = sign/period exactly (nm^-1)
    n_y = 1.8
    n_z = 1560.0 * (n_y / 780 - n_y / 1560 - sign / (PERIOD_UM * 1e3))
    return QpmCrystal(10.0, period_um, _model(n_y, n_z, dndT_z=dndT_z), grating_sign=sign)


@pytest.fixture(scope="module")
def paper_crystal():
    return load_config("paper.cfg").crystal()


def test_constant_index():
    assert refractive_index(_model(), "y", 1560, 22.0) == 1.8


def test_linear_thermo_optic_slope():
    n = refractive_index(_model(dndT_y=1e-5), "y", 1560, 32.0)
    assert n == pytest.approx(1.8001, abs=1e-12)


def test_out_of_range_names_parameter():
    with pytest.raises(RangeError, match="wavelength_nm"):
        refractive_index(_model(), "y", 2000, 22.0)
    with pytest.raises(RangeError, match="temperature_C"):
        refractive_index(_model(), "y", 1560, 150.0)


def test_unknown_axis():
    with pytest.raises(PreconditionError):
        refractive_index(_model(), "x", 1560, 22.0)


def test_index_below_one_rejected():
    with pytest.raises(InvariantError):
        _model(n_y=0.9)


def test_missing_band_is_range_error():
    axis = AxisDispersion((3.0, 0, 0, 0), (ThermoOpticBand(700, 1000, 1e-5),))
    model = IndexModel({"y": axis}, 22.0, (700, 1000), (0, 50))
    with pytest.raises(RangeError):
        axis.dn_dT(1200.0)
    assert refractive_index(model, "y", 800, 32.0) == pytest.approx(math.sqrt(3.0) + 1e-4)


def test_thermo_optic_slope_continuous_across_bands():
    axis = AxisDispersion((3.0, 0, 0, 0), (ThermoOpticBand(700, 1000, 1.6e-5), ThermoOpticBand(1000, 1700, 1.1e-5)))
    assert axis.dn_dT(850.0) == 1.6e-5 and axis.dn_dT(1350.0) == 1.1e-5
    assert axis.dn_dT(780.0) == 1.6e-5 and axis.dn_dT(1560.0) == 1.1e-5
    assert axis.dn_dT(1000.0 - 1e-9) == pytest.approx(axis.dn_dT(1000.0 + 1e-9), abs=1e-15)


def test_config_model_normal_dispersion(paper_crystal):
    model = paper_crystal.model
    lam = np.linspace(700, 1700, 5001)
    for axis in model.axes:
        for T in (-40.0, 22.0, 120.0):
            n = refractive_index(model, axis, lam, T)
            assert np.all(n > 1)
            assert np.all(np.diff(n) < 0)


def test_refractive_index_is_pure(paper_crystal):
    a = refractive_index(paper_crystal.model, "z", 1560.0, 31.7)
    b = refractive_index(paper_crystal.model, "z", 1560.0, 31.7)
    assert a == b


@pytest.mark.parametrize("sign", [1, -1])
def test_constructed_perfect_match(sign):
    crystal = _matched_crystal(sign=sign)
    assert abs(qpm_mismatch(crystal, 780, 1560, 1560, 22.0)) < 1e-6


def test_period_perturbation():
    crystal = _matched_crystal(sign=-1, period_um=PERIOD_UM * 1.01)
    dk = qpm_mismatch(crystal, 780, 1560, 1560, 22.0)
    exact = -2 * math.pi * 0.01 / (1.01 * PERIOD_UM * 1e-6)
    assert dk == pytest.approx(exact, rel=1e-6)
    # first-order figure 2*pi*0.01/period = 1.36e3 rad/m
    assert dk == pytest.approx(-1.36e3, rel=0.01)


def test_energy_conservation_violation():
    with pytest.raises(InvariantError):
        qpm_mismatch(_matched_crystal(), 780, 1560, 1550, 22.0)


def test_non_degenerate_wavelengths_accepted():
    lam_i = 1.0 / (1 / 780 - 1 / 1500)
    assert math.isfinite(qpm_mismatch(_matched_crystal(), 780, 1500, lam_i, 22.0))


def test_flat_tuning_curve():
    curve = tuning_curve(_matched_crystal(), 780, 1560, 1560, (0, 40), 41)
    np.testing.assert_allclose(curve.normalized_power, 1.0, atol=1e-12)
    assert curve.normalized_power.max() == 1.0


def test_tuning_curve_zeros_and_symmetry():
    # dk = -2 pi dn/dT (T - 22) / lam, first zeros where |dk| L / 2 = pi
    dndT = -1e-5
    crystal = _matched_crystal(dndT_z=dndT)
    half_zero = 1560e-9 / (10e-3 * abs(dndT))  # 15.6 K
    curve = tuning_curve(crystal, 780, 1560, 1560, (2.0, 42.0), 401)
    T, P = curve.temperature_C, curve.normalized_power
    for t0 in (22.0 - half_zero, 22.0 + half_zero):
        i = int(np.argmin(np.abs(T - t0)))
        assert abs(T[i] - t0) < 1e-9
        assert P[i] < 1e-20
    np.testing.assert_allclose(P, P[::-1], atol=1e-12)
    assert curve.peak_temperature == pytest.approx(22.0, abs=1e-9)
    assert P.max() == 1.0 and P.min() >= 0


def test_tuning_curve_preconditions():
    crystal = _matched_crystal()
    with pytest.raises(PreconditionError):
        tuning_curve(crystal, 780, 1560, 1560, (10, 10), 11)
    with pytest.raises(PreconditionError):
        tuning_curve(crystal, 780, 1560, 1560, (10, 20), 1)


def test_degenerate_temperature_linear_root():
    crystal = _matched_crystal(dndT_z=-1e-5)
    assert qpm_mismatch(crystal, 780, 1560, 1560, 30.0) > 0  # slope a > 0
    T = degenerate_temperature(crystal, 780, (10, 40))
    # |dk| <= 1e-3 rad/m with a slope of about 40 rad/m/K
    assert T == pytest.approx(22.0, abs=1e-4)
    assert abs(qpm_mismatch(crystal, 780, 1560, 1560, T)) <= 1e-3


def test_degenerate_temperature_root_at_edge():
    crystal = _matched_crystal(dndT_z=-1e-5)
    assert degenerate_temperature(crystal, 780, (22.0, 40.0)) == pytest.approx(22.0, abs=1e-6)
    assert degenerate_temperature(crystal, 780, (5.0, 22.0)) == pytest.approx(22.0, abs=1e-6)


def test_degenerate_temperature_not_bracketed():
    crystal = _matched_crystal(dndT_z=-1e-5)
    with pytest.raises(RootNotBracketedError):
        degenerate_temperature(crystal, 780, (25.0, 40.0))


def test_paper_calibration(paper_crystal):
    T = degenerate_temperature(paper_crystal, 780, (10, 40))
    assert T == pytest.approx(22.0, abs=0.1)
    assert abs(qpm_mismatch(paper_crystal, 780, 1560, 1560, T)) <= 1e-3
    # residual mismatch at exactly 22.0 C is a tiny fraction of a sinc^2 lobe
    dk22 = qpm_mismatch(paper_crystal, 780, 1560, 1560, 22.0)
    assert abs(dk22) * 10e-3 / 2 < 1e-3
    curve = tuning_curve(paper_crystal, 780, 1560, 1560, (-18, 62), 801)
    step = curve.temperature_C[1] - curve.temperature_C[0]
    assert abs(curve.peak_temperature - T) <= step
