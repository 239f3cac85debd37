import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.ndimage import gaussian_filter1d

from gradiometer.errors import DegenerateWindow, DomainError, MisalignedTraces, ZeroSignal
from gradiometer.peaks import (
    DetectionTrace,
    PeakModel,
    areas_from_traces,
    estimate_crosstalk,
    fit_peak,
    mix_crosstalk,
    normalized_populations,
    peak_area,
    remove_crosstalk,
    runs_z,
)

SIGMA = 2e-3


def _trace(model, noise=0.0, rng=None, fs=50e3, span=6.0, channel="F1"):
    t = model.x0 + np.arange(-span * model.sigma, span * model.sigma, 1 / fs)
    v = model.evaluate(t)
    if noise:
        v = v + rng.normal(0, noise, t.size)
    return DetectionTrace(channel, t, v)


def _quad_area(m):
    f = lambda t: m.evaluate(t) - m.baseline  # noqa: E731
    return quad(f, m.x0 - 8 * m.sigma, m.x0 + 8 * m.sigma, epsabs=0, epsrel=1e-12, limit=200)[0]


def test_model_invariants():
    with pytest.raises(ValueError):
        PeakModel(h=0.0, x0=0.0, sigma=1.0)
    with pytest.raises(ValueError):
        PeakModel(h=1.0, x0=0.0, sigma=0.0)
    assert PeakModel(h=1, x0=0, sigma=1).polynomial_positive()
    assert not PeakModel(h=1, x0=0, sigma=1, a1=1.0).polynomial_positive()


def test_area_values():
    assert peak_area(PeakModel(h=1, x0=0, sigma=1)) == pytest.approx(math.sqrt(2 * math.pi), rel=1e-15)
    m = PeakModel(h=1, x0=0, sigma=1, a2=0.1)
    assert peak_area(m) == pytest.approx(math.sqrt(2 * math.pi) * 1.1, rel=1e-15)
    assert _quad_area(m) == pytest.approx(math.sqrt(2 * math.pi) * 1.1, rel=1e-9)


@settings(max_examples=60)
@given(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3))
def test_odd_coefficients_do_not_change_area(b1, b3):
    s = 1.7
    a = PeakModel(h=2.0, x0=0.3, sigma=s, a2=0.05 / s**2)
    b = PeakModel(h=2.0, x0=0.3, sigma=s, a1=b1 / s, a2=0.05 / s**2, a3=b3 / s**3)
    assert peak_area(a) == peak_area(b)


@settings(max_examples=40, deadline=None)
@given(
    st.floats(0.1, 10.0), st.floats(-1.0, 1.0), st.floats(0.1, 3.0),
    st.floats(-0.3, 0.3), st.floats(-0.1, 0.2), st.floats(-0.05, 0.05), st.floats(0.0, 0.01),
    st.floats(-1.0, 1.0),
)
def test_area_matches_quadrature(h, x0, s, b1, b2, b3, b4, base):
    m = PeakModel(h=h, x0=x0, sigma=s, a1=b1 / s, a2=b2 / s**2, a3=b3 / s**3, a4=b4 / s**4, baseline=base)
    assert peak_area(m) == pytest.approx(_quad_area(m), rel=1e-6)


def test_pure_gaussian_self_fit():
    m = PeakModel(h=1.3, x0=0.025, sigma=SIGMA, baseline=0.01)
    fit = fit_peak(_trace(m))
    np.testing.assert_allclose(fit.model.as_array()[[0, 1, 2, 7]], m.as_array()[[0, 1, 2, 7]], rtol=1e-8)
    assert fit.area == pytest.approx(m.area(), rel=1e-8)
    assert not fit.structured_residuals


def test_distorted_peak_area_with_noise():
    m = PeakModel(h=1.0, x0=0.025, sigma=SIGMA, a2=0.05 / SIGMA**2, a4=0.001 / SIGMA**4)
    rng = np.random.default_rng(7)
    areas, errors = [], []
    for _ in range(40):
        fit = fit_peak(_trace(m, 0.004, rng))
        areas.append(fit.area)
        errors.append(fit.area_error)
    rel = np.abs(np.array(areas) / m.area() - 1)
    assert rel.max() < 0.006
    # the covariance describes the actual scatter
    assert np.std(areas) == pytest.approx(np.mean(errors), rel=0.35)


def test_low_pass_distortion_flagged():
    m = PeakModel(h=1.0, x0=0.025, sigma=SIGMA)
    tr = _trace(m)
    smooth = DetectionTrace("F1", tr.times, gaussian_filter1d(tr.values, 25) * 1.0 + 0.02 * tr.values)
    fit = fit_peak(smooth)
    assert fit.runs_z < -3
    assert fit.structured_residuals
    assert fit.to_dict()["runs_test_flag"] is True


def test_fit_with_init_and_window():
    m = PeakModel(h=1.0, x0=0.025, sigma=SIGMA)
    tr = _trace(m, span=15)
    init = PeakModel(h=0.7, x0=0.0255, sigma=SIGMA * 3)
    fit = fit_peak(tr, window=(0.025 - 10 * SIGMA, 0.025 + 10 * SIGMA), init=init)
    assert fit.area == pytest.approx(m.area(), rel=1e-7)


def test_degenerate_window():
    rng = np.random.default_rng(0)
    t = np.arange(500) / 50e3
    with pytest.raises(DegenerateWindow):
        fit_peak(DetectionTrace("F1", t, np.clip(rng.normal(0, 1, t.size), -1.5, 1.5)))
    with pytest.raises(DegenerateWindow):
        fit_peak(DetectionTrace("F1", t, np.exp(-(t - 0.005) ** 2 / 2e-6)), window=(0.0, 1e-4))


def test_runs_z():
    assert runs_z([1, -1] * 50) > 5
    assert runs_z([1] * 50 + [-1] * 50) < -5


def test_trace_validation():
    with pytest.raises(ValueError):
        DetectionTrace("F1", np.array([0, 1, 3.0]), np.zeros(3))
    with pytest.raises(ValueError):
        DetectionTrace("F3", np.arange(5.0), np.zeros(5))


def _pair(rng):
    t = np.arange(5000) / 50e3
    return (DetectionTrace("F1", t, rng.normal(size=t.size)), DetectionTrace("F2", t, rng.normal(size=t.size)))


def test_crosstalk_identity_and_inverse(rng):
    f1, f2 = _pair(rng)
    g1, g2 = remove_crosstalk(f1, f2, 0.0)
    assert np.array_equal(g1.values, f1.values) and np.array_equal(g2.values, f2.values)
    m1, m2 = mix_crosstalk(f1, f2, 0.05)
    u1, u2 = remove_crosstalk(m1, m2, 0.05)
    np.testing.assert_allclose(u1.values, f1.values, atol=1e-12)
    np.testing.assert_allclose(u2.values, f2.values, atol=1e-12)


@settings(max_examples=30)
@given(st.floats(0.0, 0.199))
def test_crosstalk_roundtrip_property(kappa):
    f1, f2 = _pair(np.random.default_rng(1))
    u1, u2 = remove_crosstalk(*mix_crosstalk(f1, f2, kappa), kappa)
    np.testing.assert_allclose(u1.values, f1.values, atol=1e-12)
    np.testing.assert_allclose(u2.values, f2.values, atol=1e-12)


def test_crosstalk_errors(rng):
    f1, f2 = _pair(rng)
    with pytest.raises(ValueError):
        remove_crosstalk(f1, f2, 0.2)
    short = DetectionTrace("F2", f2.times[:100], f2.values[:100])
    with pytest.raises(MisalignedTraces):
        remove_crosstalk(f1, short, 0.01)


def test_estimate_crosstalk():
    t = np.arange(5000) / 50e3
    src = PeakModel(h=1.0, x0=0.02, sigma=SIGMA).evaluate(t)
    other = PeakModel(h=1.0, x0=0.07, sigma=SIGMA).evaluate(t)
    rng = np.random.default_rng(3)
    f1 = DetectionTrace("F1", t, src + rng.normal(0, 1e-3, t.size))
    f2 = DetectionTrace("F2", t, other + rng.normal(0, 1e-3, t.size))
    m1, m2 = mix_crosstalk(f1, f2, 0.05)
    # only F1 carries signal around 20 ms
    kappa = estimate_crosstalk(m2, m1, (0.01, 0.03))
    assert kappa == pytest.approx(0.05 / (1 + 0.05 * 0.0), rel=0.02)


def test_normalized_populations():
    assert normalized_populations([1.0, 1.0, 2.0, 2.0]) == (0.5, 0.5)
    x, y = normalized_populations([3.0, 0.0, 0.0, 5.0], 1.3)
    assert (x, y) == (1.0, 0.0)
    with pytest.raises(ZeroSignal):
        normalized_populations([0.0, 0.0, 1.0, 1.0])
    with pytest.raises(DomainError):
        normalized_populations([-1.0, 1.0, 1.0, 1.0])
    with pytest.raises(DomainError):
        normalized_populations([1.0, 1.0, 1.0, 1.0], 0.0)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.8, 1.2), st.floats(0.8, 1.2))
def test_xi_round_trip(x, y, xi_l, xi_u):
    # efficiency ratio xi distorts the raw ratio; correcting with the same xi undoes it
    n = 2e5
    areas = [x * n / xi_l, (1 - x) * n, y * n / xi_u, (1 - y) * n]
    gx, gy = normalized_populations(areas, (xi_l, xi_u))
    assert gx == pytest.approx(x, abs=1e-14)
    assert gy == pytest.approx(y, abs=1e-14)


@given(st.floats(0.01, 100.0))
def test_endpoints_fixed(xi):
    assert normalized_populations([0.0, 2.0, 4.0, 0.0], xi) == (0.0, 1.0)


def test_areas_from_traces_noiseless():
    from gradiometer.simulator import TraceTiming, peaks_for_shot, simulate_trace

    areas = (5.1e4, 1.3e5, 9.9e4, 8.7e4)
    timing = TraceTiming()
    f1, f2 = simulate_trace(peaks_for_shot(areas, timing))
    got, fits = areas_from_traces(f1, f2, timing.windows())
    np.testing.assert_allclose(got, areas, rtol=1e-9)
    assert len(fits) == 4
