import math

import numpy as np
import pytest
from scipy import integrate

from refocus import montecarlo, noise, pulses, qke
from refocus.montecarlo import ErrorSeries


def constant_realization(b, T=16.0, tau0=1.0, dt=1 / 16):
    model = noise.NoiseModel(1.0, tau0, ("x", "y", "z"), T)
    n = int(round(T / dt))
    return noise.NoiseRealization(np.tile(np.asarray(b, float), (n, 1)), dt, 0, model)


def test_constant_field_angle():
    r = constant_realization([0.1, 0, 0])
    t = np.arange(0, 17.0)
    phi = montecarlo.evolve_realization(montecarlo.free_waveform(16.0, r.dt), r, t)
    assert np.allclose(phi, 0.1 * t, atol=1e-12)


def test_constant_field_oblique():
    b = np.array([0.03, -0.04, 0.12])
    r = constant_realization(b)
    t = np.arange(0, 17.0)
    phi = montecarlo.evolve_realization(montecarlo.free_waveform(16.0, r.dt), r, t)
    assert np.allclose(phi, np.linalg.norm(b) * t, atol=1e-12)


def test_spin_echo_refocuses_static_z():
    dt = 1 / 16
    echo = pulses.ControlWaveform(np.zeros((32, 3)), dt, 2.0, (), ((1.0, "x", math.pi), (2.0, "x", math.pi)), "echo")
    r = constant_realization([0, 0, 0.2], T=16.0)
    phi = montecarlo.evolve_realization(echo, r, [1.0, 2.0, 8.0, 16.0])
    assert phi[0] == pytest.approx(0.2, abs=1e-12)
    # arccos near 1 amplifies roundoff to ~sqrt(eps)
    assert np.allclose(phi[1:], 0.0, atol=1e-6)


def test_single_axis_noise_phase():
    model = noise.NoiseModel(0.0355, 4.0, ("x",), 64.0)
    r = noise.synthesize(model, 0.25, 11)
    t = np.arange(0, 65.0, 4.0)
    phi = montecarlo.evolve_realization(None, r, t)
    cum = np.concatenate([[0.0], np.cumsum(r.samples[:, 0]) * r.dt])
    expect = np.abs(cum[np.rint(t / r.dt).astype(int)])
    assert np.allclose(phi, expect, atol=1e-9)


def test_zero_noise_no_error():
    wf = pulses.build_sequence("4c", pulses.gaussian_pulse(0.05))
    s = montecarlo.ensemble_error(wf, noise.NoiseModel(0.0, 4.0, ("x", "y", "z"), 32.0), 4)
    assert np.allclose(s.error, 0.0, atol=1e-12)
    assert np.allclose(s.stderr, 0.0, atol=1e-12)


def test_grid_mismatch():
    wf = pulses.build_sequence("4c", pulses.gaussian_pulse(0.05))
    r = noise.synthesize(noise.NoiseModel(0.01, 4.0, ("x",), 32.0), 0.125, 0)
    with pytest.raises(ValueError):
        montecarlo.evolve_realization(wf, r)
    with pytest.raises(ValueError):
        montecarlo.ensemble_error(wf, noise.NoiseModel(0.01, 4.0, ("x",), 33.0), 4)
    with pytest.raises(ValueError):
        montecarlo.ensemble_error(None, noise.NoiseModel(0.01, 4.0, ("x",), 32.0), 4, record_times=[0.1234])


@pytest.fixture(scope="module")
def free_run():
    model = noise.NoiseModel(0.0355, 4.0, ("x",), 64.0)
    return montecarlo.ensemble_error(None, model, 900, record_times=np.arange(0, 33.0), dt=0.25)


def test_free_decay_matches_closed_form(free_run):
    exact = qke.exact_free_decay(0.0355, 4.0, free_run.times)
    z = (free_run.error - exact)[1:] / free_run.stderr[1:]
    assert np.all(np.abs(z) < 4)
    assert free_run.error[0] == 0.0


def test_free_decay_double_integral():
    # 1 - exp(-<phi^2>/2) with <phi^2> from direct quadrature of the correlator
    b0, tau0, t = 0.0355, 4.0, 10.0
    var, _ = integrate.dblquad(lambda s, u: b0**2 * math.exp(-(u - s) ** 2 / (2 * tau0**2)), 0, t, 0, t)
    assert qke.exact_free_decay(b0, tau0, t) == pytest.approx(-math.expm1(-var / 2), rel=1e-10)


def test_fit_recovers_line():
    t = np.arange(0, 257.0)
    err = 1e-4 + 2e-5 * t / 4.0
    s = ErrorSeries(t, err, np.full_like(t, 1e-6), 10, {"noise": {"T": 256.0}})
    f = montecarlo.fit_linear(s, 4.0)
    assert f.A == pytest.approx(1e-4, rel=1e-10)
    assert f.B == pytest.approx(2e-5, rel=1e-10)
    assert f.window == (12.0, 244.0)
    assert f.n_points == 231


def test_fit_window_guard():
    t = np.arange(0, 257.0, 8.0)
    s = ErrorSeries(t, np.zeros_like(t), np.ones_like(t), 2, {})
    with pytest.raises(ValueError):
        montecarlo.fit_linear(s, 40.0)


def test_free_fit_slope(free_run):
    # short-time region, slope per tau0 near gamma tau0 once past the quadratic onset
    model = noise.NoiseModel(0.0355, 4.0, ("x",), 256.0)
    s = montecarlo.ensemble_error(None, model, 300, record_times=np.arange(0, 257.0, 4.0), dt=0.25)
    f = montecarlo.fit_linear(s, 4.0, T=64.0 + 24.0)
    assert f.B == pytest.approx(qke.gamma_exact(0.0355, 4.0) * 4.0, rel=0.3)


def test_worker_and_chunk_independence():
    wf = pulses.build_sequence("4c", pulses.gaussian_pulse(0.05))
    model = noise.NoiseModel(0.0355, 4.0, ("x", "z"), 32.0)
    a = montecarlo.ensemble_cos_phi(wf, model, 12, base_seed=5, workers=1)[1]
    b = montecarlo.ensemble_cos_phi(wf, model, 12, base_seed=5, workers=2, chunk=3)[1]
    assert np.array_equal(a, b)


def test_workers_env(monkeypatch):
    monkeypatch.setenv(montecarlo.WORKERS_ENV, "3")
    assert montecarlo._workers(None) == 3
    assert montecarlo._workers(1) == 1


def test_csv_roundtrip(tmp_path, free_run):
    p = tmp_path / "s.csv"
    montecarlo.write_series_csv(p, free_run)
    back = montecarlo.read_series_csv(p)
    assert np.array_equal(back.times, free_run.times)
    assert np.array_equal(back.error, free_run.error)
    assert np.array_equal(back.stderr, free_run.stderr)


def test_fit_json(free_run):
    import json

    f = montecarlo.fit_linear(free_run, 4.0, T=44.0)
    d = json.loads(montecarlo.fit_to_json(f))
    assert set(d) == {"A", "B", "window", "residual_rms", "A_err", "B_err", "n_points"}
