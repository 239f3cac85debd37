import math

import numpy as np
import pytest
from scipy.integrate import trapezoid

from gradiometer.ellipse import fit_ellipse
from gradiometer.errors import ConfigError
from gradiometer.ledger import SensitivityLedger
from gradiometer.noise import NoiseConfig, qpn_rms
from gradiometer.peaks import areas_from_traces, fit_peak, normalized_populations
from gradiometer.simulator import (
    DriftChannel,
    DriftModel,
    Injected,
    Pedestal,
    Schedule,
    ServoConfig,
    TraceTiming,
    coriolis_compensation_scan,
    evolve_channel,
    peaks_for_shot,
    rw_step_for_day_rms,
    simulate_run,
    simulate_trace,
)

QUIET = NoiseConfig(detection_mode="technical", tech_detection_rms=0.0)
SINGLE = dict(modulation_period=0, k_reversal=False, group_size=1)


def test_noiseless_points_on_ellipse(physics):
    run = simulate_run(physics, QUIET, schedule=Schedule(n_shots=100, **SINGLE))
    x, y = normalized_populations(run.areas())
    t = run.truth["t"]
    np.testing.assert_allclose(x, 0.225 * np.sin(t) + 0.5, atol=1e-15)
    np.testing.assert_allclose(y, 0.225 * np.sin(t + math.pi / 2) + 0.5, atol=1e-15)
    assert abs(fit_ellipse(x, y, dphi_method="linear").phi - math.pi / 2) < 1e-9


def test_qpn_only_population_rms(physics):
    noise = NoiseConfig(detection_mode="qpn")
    run = simulate_run(physics, noise, schedule=Schedule(n_shots=20000, **SINGLE))
    dx = run.truth["x_obs"] - run.truth["x"]
    assert np.sqrt(np.mean(dx**2)) == pytest.approx(qpn_rms(0.225, 0.5, 2e5), rel=0.03)
    assert np.sqrt(np.mean(dx**2)) == pytest.approx(0.0011, rel=0.05)


def test_binomial_mode(physics):
    noise = NoiseConfig(detection_mode="qpn", binomial=True, n_lower=1e4, n_upper=1e4)
    run = simulate_run(physics, noise, schedule=Schedule(n_shots=20000, **SINGLE))
    dx = run.truth["x_obs"] - run.truth["x"]
    assert np.sqrt(np.mean(dx**2)) == pytest.approx(qpn_rms(0.225, 0.5, 1e4), rel=0.03)
    # counts are integers
    assert np.allclose(run.truth["x_obs"] * 1e4, np.round(run.truth["x_obs"] * 1e4))


def test_seeded_determinism(physics):
    noise = NoiseConfig(contrast_jitter=1e-3)
    a = simulate_run(physics, noise, schedule=Schedule(n_shots=720), seed=4)
    b = simulate_run(physics, noise, schedule=Schedule(n_shots=720), seed=4)
    c = simulate_run(physics, noise, schedule=Schedule(n_shots=720), seed=5)
    assert a.shots == b.shots
    assert a.shots != c.shots


def test_schedule_bookkeeping(physics):
    s = Schedule(n_shots=2880, modulation_period=720, dead_time=300.0, cycle_time=1.9)
    run = simulate_run(physics, QUIET, schedule=s)
    cfg = [r.mass_config for r in run]
    assert cfg[:720] == ["C1"] * 720 and cfg[720:1440] == ["C2"] * 720 and cfg[1440] == "C1"
    assert [r.index for r in run] == list(range(2880))
    assert [r.k_sign for r in run[:4]] == [1, -1, 1, -1]
    dt = np.diff([r.time for r in run])
    assert dt[718] == pytest.approx(1.9)
    assert dt[719] == pytest.approx(1.9 + 300.0)
    assert s.ellipses_per_period() == 2


def test_schedule_validation():
    with pytest.raises(ConfigError):
        Schedule(modulation_period=720, group_size=500)
    with pytest.raises(ConfigError):
        Schedule(modulation_period=721)
    with pytest.raises(ConfigError):
        Schedule(t_range="quarter")


def test_k_reversal_bias_enters_both_signs(physics):
    inj = Injected(phi_c1=1.2, phi_c2=1.2, phi_k_even=0.01)
    run = simulate_run(physics, QUIET, schedule=Schedule(n_shots=4, **{**SINGLE, "k_reversal": True}),
                       injected=inj)
    np.testing.assert_allclose(run.truth["phi"], [1.21, -1.19, 1.21, -1.19], atol=1e-15)


def test_tilt_change_adds_coriolis_to_c1(physics):
    from gradiometer.physics import coriolis_shift

    inj = Injected(tilt_change=1e-5)
    run = simulate_run(physics, QUIET, schedule=Schedule(n_shots=1440, k_reversal=False), injected=inj)
    phi = run.truth["phi"]
    assert phi[0] - phi[720] == pytest.approx(coriolis_shift(physics, 1e-5), rel=1e-12)


def test_xi_and_pedestal_in_areas(physics):
    inj = Injected(xi_true=(1.02, 0.97))
    run = simulate_run(physics, QUIET, schedule=Schedule(n_shots=50, **SINGLE), injected=inj)
    x, y = normalized_populations(run.areas(), (1.02, 0.97))
    np.testing.assert_allclose(x, run.truth["x"], atol=1e-14)
    np.testing.assert_allclose(y, run.truth["y"], atol=1e-14)
    ped = simulate_run(physics, QUIET, schedule=Schedule(n_shots=50, **SINGLE),
                       injected=Injected(pedestal_fraction=0.1))
    assert np.all(ped.areas()[:, 0] > run.areas()[:, 0] * 1.02 - 1e-6)


def test_rw_step_oracle():
    rng = np.random.default_rng(0)
    m = 2000
    step = rw_step_for_day_rms(0.02, cycle_time=86400.0 / m)
    walks = np.cumsum(rng.normal(0, step, (2000, m)), axis=1)
    rms = np.sqrt(np.mean(np.var(walks, axis=1)))
    assert rms == pytest.approx(0.02, rel=0.05)


def test_drift_channel_couplings():
    ledger = SensitivityLedger.from_csv()
    ch = DriftChannel.from_ledger(ledger, "raman_mirror_ew_tilt")
    assert set(ch.couplings) == {"phi_mean"}
    ch_b = DriftChannel.from_ledger(ledger, "raman_mirror_ew_tilt", include_bounds=True)
    assert set(ch_b.couplings) == {"phi_mean", "phi_diff", "contrast", "bias"}
    assert ch.effect("phi_mean", 0.01) == pytest.approx(0.37e-3)
    assert ch.effect("bias", 1.0) == 0.0
    with pytest.raises(ConfigError):
        DriftModel.from_mapping({"channels": [{"name": "nonexistent"}]}, ledger)
    with pytest.raises(ConfigError):
        DriftChannel(name="t", inert=True, couplings={"phi_mean": ("linear", 1.0)})
    inert = DriftModel.from_mapping({"channels": [{"name": "temperature", "inert": True, "white_rms": 0.1}]})
    assert inert.channels[0].inert


def test_drift_shifts_phase(physics):
    ch = DriftChannel(name="raman_mirror_ew_tilt", sin_amplitude=0.01, sin_period=2000.0,
                      couplings={"phi_mean": ("linear", 0.037)})
    run = simulate_run(physics, QUIET, DriftModel((ch,)), schedule=Schedule(n_shots=200, **SINGLE))
    drift = run.truth["drift:raman_mirror_ew_tilt"]
    np.testing.assert_allclose(run.truth["phi"], math.pi / 2 + 0.037 * drift, atol=1e-15)
    assert [s.monitors["raman_mirror_ew_tilt"] for s in run] == list(drift)


def test_servo_suppresses_random_walk():
    ch = DriftChannel(name="mot_power_ratio", rw_step=rw_step_for_day_rms(2.0))
    servo = ServoConfig(channels=("mot_power_ratio",))
    m = int(86400 / 1.9)
    index = np.arange(m)
    time = index * 1.9
    raw, corr = evolve_channel(ch, index, time, np.random.default_rng(1), 1.9, servo)
    assert np.std(raw) > 1.0
    # percent units: 0.3 % target
    assert np.std(corr) < 0.3
    unservoed = evolve_channel(ch, index, time, np.random.default_rng(1), 1.9, None)
    assert np.array_equal(unservoed[0], unservoed[1])


def test_servo_validation():
    with pytest.raises(ConfigError):
        ServoConfig(gain=2.0)
    with pytest.raises(ConfigError):
        ServoConfig(sample_every=0)


def test_trace_area_quadrature():
    areas = (6e4, 1.4e5, 1.1e5, 9e4)
    timing = TraceTiming(shape=(0.0, 0.05, 0.0, 0.001))
    f1, f2 = simulate_trace(peaks_for_shot(areas, timing))
    t = f1.times
    # each half of each channel holds one peak
    half = t < 0.05
    got = [trapezoid(f1.values[half], t[half]), trapezoid(f2.values[half], t[half]),
           trapezoid(f1.values[~half], t[~half]), trapezoid(f2.values[~half], t[~half])]
    np.testing.assert_allclose(got, areas, rtol=1e-6)


def test_zero_pedestal_identical():
    peaks = peaks_for_shot((6e4, 1.4e5, 1.1e5, 9e4))
    a = simulate_trace(peaks)
    b = simulate_trace(peaks, Pedestal(0.0))
    assert np.array_equal(a[0].values, b[0].values)


def test_pedestal_bias_and_triple_pulse():
    areas = (6e4, 1.4e5, 1.1e5, 9e4)
    timing = TraceTiming()
    peaks = peaks_for_shot(areas, timing)
    windows = timing.windows()

    def f1_error(pedestal):
        f1, _ = simulate_trace(peaks, pedestal)
        fit = fit_peak(f1, windows[0])
        return abs(fit.area / areas[0] - 1)

    raw = f1_error(Pedestal(0.3))
    assert raw > 0.005
    assert f1_error(Pedestal(0.3).reduced(30)) < 0.005


def test_trace_round_trip_with_xi(physics):
    inj = Injected(phi_c1=1.1, xi_true=1.02)
    run = simulate_run(physics, QUIET, schedule=Schedule(n_shots=12, **SINGLE), injected=inj)
    timing = TraceTiming()
    fitted = []
    for s in run:
        f1, f2 = simulate_trace(peaks_for_shot(s.areas, timing))
        fitted.append(areas_from_traces(f1, f2, timing.windows())[0])
    np.testing.assert_allclose(fitted, run.areas(), rtol=1e-9)


def test_coriolis_scan():
    from gradiometer.physics import PhysicsConfig

    cfg = PhysicsConfig(dz=0.3)
    omega_h = cfg.omega_earth * math.cos(cfg.latitude)
    rates = omega_h + np.linspace(-2e-5, 2e-5, 9)
    scan = coriolis_compensation_scan(cfg, NoiseConfig(), 5e-3, rates, seed=2)
    contrast = np.array([p.contrast for p in scan])
    err = np.array([p.phase_rms for p in scan])
    assert int(np.argmax(contrast)) == 4
    assert int(np.argmin(err)) == 4
    # symmetric about the optimum (common random numbers)
    np.testing.assert_allclose(err[:4], err[5:][::-1], rtol=0.1)
    # fitted contrasts, so symmetric only up to the fit noise
    np.testing.assert_allclose(contrast[:4], contrast[5:][::-1], rtol=1e-3)
    tiny = coriolis_compensation_scan(cfg, NoiseConfig(), 1e-12, rates, seed=2)
    flat = [p.contrast for p in tiny]
    assert max(flat) - min(flat) < 1e-4
