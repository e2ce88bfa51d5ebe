import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import trapezoid

from modalspdc.modesolver import propagation_constant
from modalspdc.phasematch import (SINC2_HALF, BandSearchError, CalibrationError, CalibrationTargets,
                                  band_center, band_fwhm, band_summary, calibrate, inverse_lambda_grid,
                                  map_bands, pm_amplitude, pump_wavelength, qpm_mismatch, sfg_response,
                                  unpoled_mismatch)


def test_sinc_half_point():
    assert (math.sin(SINC2_HALF) / SINC2_HALF) ** 2 == pytest.approx(0.5, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 5.0))
def test_sinc_parity_and_bound(db, L):
    a = pm_amplitude(db, L)
    assert pm_amplitude(-db, L) == pytest.approx(a, rel=1e-15, abs=1e-300)
    assert abs(a) <= 1.0


def test_sinc_peak_and_zeros():
    assert pm_amplitude(0.0, 1.0) == 1.0
    L = 1.0
    first_zero = 2 * math.pi / (L * 1e3)
    assert abs(pm_amplitude(first_zero, L)) < 1e-14


def test_pump_wavelength():
    assert pump_wavelength(800.0, 800.0) == pytest.approx(400.0)
    assert pump_wavelength(780.0, 820.0) == pytest.approx(1 / (1 / 780 + 1 / 820))


def test_inverse_lambda_grid_uniform():
    lam = inverse_lambda_grid(780, 820, 101)
    s = 1 / lam
    assert np.allclose(np.diff(s), np.diff(s)[0], rtol=1e-10)
    assert lam[0] == pytest.approx(820) and lam[-1] == pytest.approx(780)


def test_mismatch_definition(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    lh, lv = 801.0, 797.0
    lp = pump_wavelength(lh, lv) / 1e3
    expect = (propagation_constant(modes.pump[(0, 0)], lp) - propagation_constant(modes.h[(0, 0)], lh / 1e3)
              - propagation_constant(modes.v[(0, 0)], lv / 1e3))
    assert unpoled_mismatch(tr, lh, lv, modes) == pytest.approx(expect, rel=1e-14)
    K = 2 * np.pi / modes.geom.poling_period_um
    assert qpm_mismatch(tr, lh, lv, modes) == pytest.approx(expect - K, rel=1e-12)


def test_fundamental_band_at_calibrated_point(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    c = band_center(tr, "degenerate", modes)[0]
    assert c.lam_h_nm == pytest.approx(799.8, abs=1e-6)
    assert abs(qpm_mismatch(tr, c.lam_h_nm, c.lam_v_nm, modes)) < 1e-6


@settings(max_examples=15, deadline=None)
@given(st.floats(792.0, 808.0))
def test_roots_reverify(modes, lam_v):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    try:
        roots = band_center(tr, lam_v, modes)
    except BandSearchError:
        return
    for r in roots:
        assert r.lam_v_nm == lam_v
        assert abs(qpm_mismatch(tr, r.lam_h_nm, r.lam_v_nm, modes)) < 1e-6


def test_no_band_raises(modes):
    far = modes.with_period(modes.geom.poling_period_um * 1.3)
    with pytest.raises(BandSearchError):
        band_center(far.triplet((0, 0), (0, 0), (0, 0)), "degenerate", far)


def test_fwhm_edges_sit_at_half_power(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    c = band_center(tr, "degenerate", modes)[0]
    f = band_fwhm(tr, c, modes)
    # the two edges straddle the centre; find them again independently on a fine scan
    s = np.linspace(-2 * f, 2 * f, 40001)
    p = pm_amplitude(qpm_mismatch(tr, c.lam_h_nm + s, c.lam_v_nm + s, modes), modes.length_mm) ** 2
    above = s[p >= 0.5]
    assert above.max() - above.min() == pytest.approx(f, abs=2 * (s[1] - s[0]))


@pytest.mark.parametrize("direction", ["degenerate", "lambda_h"])
def test_fwhm_inverse_length(modes, direction):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    c = band_center(tr, "degenerate", modes)[0]
    f1 = band_fwhm(tr, c, modes.with_length(1.0), direction)
    f2 = band_fwhm(tr, c, modes.with_length(2.0), direction)
    assert f2 == pytest.approx(f1 / 2, rel=0.01)


def test_band_summary_contents(modes):
    s = band_summary(modes)
    assert s["fundamental"]["lambda_H_nm"] == pytest.approx(799.8, abs=0.05)
    assert s["nearest_separation_nm"] >= 5.0
    forbidden = [b for b in s["bands"] if b["forbidden"]]
    assert any(b["h"] == [1, 0] and b["pump"] == [0, 0] for b in forbidden)


def test_map_bands_peak_on_fundamental(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    lam = np.linspace(795, 805, 201)
    amp = map_bands([tr], lam, lam, modes)[tr]
    assert amp.shape == (201, 201)
    i = np.argmin(abs(lam - 799.8))
    assert abs(amp[i, i]) == pytest.approx(abs(tr.overlap), rel=1e-4)


def test_sfg_zero_filter_is_bare_response(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    lam = np.linspace(798, 802, 21)
    bare = (tr.overlap * pm_amplitude(qpm_mismatch(tr, lam, lam, modes), modes.length_mm)) ** 2
    assert np.allclose(sfg_response(lam, lam, tr, 0.0, modes), bare, rtol=1e-12)


def test_sfg_filter_broadens_and_lowers(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    lam = np.linspace(796, 804, 801)
    bare = sfg_response(lam, lam, tr, 0.0, modes)
    conv = sfg_response(lam, lam, tr, 0.6, modes)
    assert conv.max() < bare.max()
    width = lambda p: np.ptp(lam[p >= p.max() / 2])
    assert width(conv) > width(bare)
    # total response is preserved by the normalised passband average to within the scan's tails
    assert trapezoid(conv, lam) == pytest.approx(trapezoid(bare, lam), rel=0.05)


def test_sfg_rejects_negative_width(modes):
    tr = modes.triplet((0, 0), (0, 0), (0, 0))
    with pytest.raises(ValueError):
        sfg_response(800.0, 800.0, tr, -1.0, modes)


def test_calibration_failure_is_loud(geometry):
    impossible = CalibrationTargets(min_separation_nm=1000.0)
    res = calibrate(geometry, impossible, prescan=0, max_nfev=2)
    assert not res.success and not res.checks["separation"]
    assert res.residuals["separation_shortfall_nm"] > 900
    with pytest.raises(CalibrationError) as err:
        calibrate(geometry, impossible, prescan=0, max_nfev=2, raise_on_failure=True)
    assert err.value.result is not None and not err.value.result.success
