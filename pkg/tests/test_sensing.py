import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac_v2i.array import BeamConfig, beam_gain
from isac_v2i.config import SPEED_OF_LIGHT, SimConfig
from isac_v2i.scenario import generate_trajectory
from isac_v2i.sensing import (DegenerateGeometryError, ScattererMeasurementSet, SingularGeometryError,
                              branch_atan, branch_atan_batch, check_separability, cr_measurement,
                              fuse_centroid, measurement_variances, mle_velocity, resolve_scatterers,
                              sense_batch, separable, synthesize_measurements)


def _set(theta, d, mu=None, var=None, offsets=None):
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    K = len(theta)
    return ScattererMeasurementSet(
        theta_hat=theta, d_hat=np.atleast_1d(np.asarray(d, dtype=float)),
        mu_hat=np.zeros(K) if mu is None else np.asarray(mu, dtype=float),
        variances=np.ones((K, 3)) if var is None else np.asarray(var, dtype=float),
        beta_abs=np.ones(K), gain=np.ones(K, dtype=complex),
        offsets=np.zeros((K, 2)) if offsets is None else np.asarray(offsets, dtype=float),
        groups=tuple((k,) for k in range(K)))


def test_variance_oracle_literal_two_way_law():
    cfg = SimConfig(beta_exponent=2.0)
    d = 64.83
    var = measurement_variances(1.0, d, 1.0, BeamConfig(60, 0.3, 128), cfg)
    snr = 1 * 10 * (math.sqrt(7680) / (2 * d) ** 2) ** 2 / 0.15
    np.testing.assert_allclose(var, np.array([1.05e-2, 3.5e-2, 1.05e-2]) ** 2 / snr, rtol=1e-12)


def test_variance_scaling(cfg):
    beam = BeamConfig(60, 0.3, 128)
    base = measurement_variances(0.7 + 0.2j, 50.0, 0.9, beam, cfg)
    np.testing.assert_allclose(measurement_variances(0.7 + 0.2j, 50.0, 0.9, beam, cfg.replace(p_n=2.0)),
                               base / 2, rtol=1e-12)
    np.testing.assert_allclose(measurement_variances(0.7 + 0.2j, 50.0, 0.9, beam, cfg, rho=0.25),
                               base * 4, rtol=1e-12)
    assert np.all(np.isinf(measurement_variances(1.0, 50.0, 0.0, beam, cfg)))
    with pytest.raises(ValueError):
        measurement_variances(1.0, 50.0, 1.0, beam, cfg, rho=0.0)


def test_zero_noise_measurements_equal_truth(cfg, rng):
    g = generate_trajectory(cfg, rng)
    e = g.epoch(0)
    beam = BeamConfig(60, e.state[0], cfg.N_r)
    m = synthesize_measurements(e, beam, cfg, 1.0, None, noise_scale=0.0)
    keep = [grp[0] for grp in m.groups]
    np.testing.assert_array_equal(m.theta_hat, e.theta[keep])
    np.testing.assert_array_equal(m.d_hat, e.dist[keep])
    np.testing.assert_array_equal(m.mu_hat, e.doppler[keep])
    assert np.all(m.variances == 0) and np.all(m.nominal_variances > 0)


def test_reference_epoch_resolves_all_eight(cfg, rng):
    g = generate_trajectory(cfg, rng)
    e = g.epoch(0)
    m = synthesize_measurements(e, BeamConfig(60, e.state[0], cfg.N_r), cfg, 1.0, rng)
    assert len(m) == 8 and m.groups == tuple((k,) for k in range(8))
    assert np.all(np.isfinite(m.variances)) and np.all(m.variances > 0)


def test_unlit_scatterers_dropped(cfg, rng):
    e = generate_trajectory(cfg, rng).epoch(0)
    m = synthesize_measurements(e, BeamConfig(128, e.state[0] + 0.3, cfg.N_r), cfg, 1.0, rng)
    assert len(m) == 0


def test_separability_examples():
    assert check_separability([58, 63, 65], [0, 0, 0], 0.3, 100) == [[0], [1], [2]]
    assert check_separability([50.0, 50.1], [10.0, 10.0], 0.3, 100) == [[0, 1]]
    assert check_separability([50.0], [1.0], 0.3, 100) == [[0]]
    assert separable(50.0, 0.0, 50.0, 150.0, 0.3, 100)
    # chained closeness joins a group even if the ends are apart
    assert check_separability([50.0, 50.25, 50.5], [0, 0, 0], 0.3, 100) == [[0, 1, 2]]


def _merge_reference(pos, off, rcs, gain, v, n, steer, cfg):
    lit = np.flatnonzero(np.abs(gain) >= 1e-6)
    dist = np.hypot(pos[lit, 0], pos[lit, 1])
    w = np.abs(rcs[lit] / (2 * dist) ** cfg.beta_exponent * gain[lit]) ** 2
    p, o, r, groups = resolve_scatterers(pos[lit], off[lit], rcs[lit], w, v, cfg)
    return {tuple(int(lit[i]) for i in grp): (p[j], o[j], abs(r[j])) for j, grp in enumerate(groups)}


@given(st.integers(2, 7), st.floats(0.0, 30.0), st.integers(0, 2**31))
@settings(max_examples=150, deadline=None)
def test_batched_merge_matches_reference(K, v, seed):
    cfg = SimConfig(bandwidth=500e6, v=v)
    rng = np.random.default_rng(seed)
    centre = np.array([rng.uniform(-40, 40), rng.uniform(10, 40)])
    pos = centre + rng.uniform(-0.4, 0.4, (K, 2))
    off = rng.uniform(-1, 1, (K, 2))
    rcs = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    theta, dist = np.arctan2(pos[:, 1], pos[:, 0]), np.hypot(pos[:, 0], pos[:, 1])
    steer, n = float(np.mean(theta)), 2
    mb = sense_batch(theta[None], dist[None], rcs[None], off[None], v, n, steer, 1.0, cfg,
                     noise_scale=0.0)
    got = mb.row(0)
    ref = _merge_reference(pos, off, rcs, beam_gain(theta, steer, n), v, n, steer, cfg)
    assert set(got.groups) == set(ref)
    for j, grp in enumerate(got.groups):
        p, o, r = ref[grp]
        np.testing.assert_allclose([got.d_hat[j] * math.cos(got.theta_hat[j]),
                                    got.d_hat[j] * math.sin(got.theta_hat[j])], p, atol=1e-9)
        np.testing.assert_allclose(got.offsets[j], o, atol=1e-12)
        if len(grp) > 1:
            assert got.gain[j] == pytest.approx(beam_gain(got.theta_hat[j], steer, n), abs=1e-12)
    # the survivors are pairwise separable
    mu = 2 * v * np.cos(got.theta_hat) * cfg.f_c / SPEED_OF_LIGHT
    for a in range(len(got)):
        for b in range(a + 1, len(got)):
            assert separable(got.d_hat[a], mu[a], got.d_hat[b], mu[b],
                             cfg.range_resolution, cfg.doppler_resolution)


def test_batch_rows_independent(cfg):
    tr = [generate_trajectory(cfg.replace(T=0.05), np.random.default_rng(i)) for i in range(4)]
    theta = np.stack([g.theta[3] for g in tr])
    dist = np.stack([g.dist[3] for g in tr])
    rcs = np.stack([g.rcs[3] for g in tr])
    off = np.stack([g.offsets for g in tr])
    z = np.random.default_rng(9).standard_normal((4, 8, 3))
    steer = np.array([g.state[3, 0] for g in tr]) + [0, 1e-3, -2e-3, 0.01]
    full = sense_batch(theta, dist, rcs, off, 20.0, [60, 50, 128, 30], steer, [1, 0.5, 0.1, 1], cfg, z)
    for r, n in enumerate([60, 50, 128, 30]):
        one = sense_batch(theta[r:r + 1], dist[r:r + 1], rcs[r:r + 1], off[r:r + 1], 20.0, n,
                          steer[r], [1, 0.5, 0.1, 1][r], cfg, z[r:r + 1])
        np.testing.assert_array_equal(one.theta_hat[0], full.theta_hat[r])
        np.testing.assert_array_equal(one.variances[0], full.variances[r])
        np.testing.assert_array_equal(one.mask[0], full.mask[r])


def test_fuse_centroid_examples():
    assert fuse_centroid(_set(math.pi / 2, 10.0)) == pytest.approx((0.0, 10.0), abs=1e-12)
    rng = np.random.default_rng(5)
    th, d, off = rng.uniform(0.3, 0.5, 8), rng.uniform(55, 60, 8), rng.uniform(-1, 1, (8, 2))
    x, y = fuse_centroid(_set(th, d, offsets=off))
    assert x == pytest.approx(sum(d[k] * math.cos(th[k]) - off[k, 0] for k in range(8)) / 8, abs=1e-12)
    assert y == pytest.approx(sum(d[k] * math.sin(th[k]) - off[k, 1] for k in range(8)) / 8, abs=1e-12)
    with pytest.raises(ValueError):
        fuse_centroid(_set([], []))


def test_fuse_centroid_symmetric_grid_exact(cfg, rng):
    e = generate_trajectory(cfg, rng).epoch(10)
    m = synthesize_measurements(e, BeamConfig(40, e.state[0], cfg.N_r), cfg, 1.0, None, noise_scale=0.0)
    assert len(m) == 8
    centroid = np.array([cfg.x0 - cfg.v * 0.1, cfg.y0])
    np.testing.assert_allclose(fuse_centroid(m), centroid, atol=1e-10)


def test_mle_velocity_examples():
    f_c = 30e9
    one = _set(0.4, 50.0, mu=[1234.0])
    assert mle_velocity(one, f_c) == pytest.approx(SPEED_OF_LIGHT * 1234.0 / (2 * f_c * math.cos(0.4)))
    th = np.array([0.3, 0.9])
    mu = np.array([3000.0, 2500.0])
    two = _set(th, [50, 50], mu=mu)
    c = np.cos(th)
    assert mle_velocity(two, f_c) == pytest.approx(SPEED_OF_LIGHT / (2 * f_c) * (mu @ c) / (c @ c), rel=1e-14)
    with pytest.raises(DegenerateGeometryError):
        mle_velocity(_set(math.pi / 2, 50.0, mu=[0.0]), f_c)


def test_mle_velocity_noiseless(cfg, rng):
    e = generate_trajectory(cfg, rng).epoch(0)
    m = synthesize_measurements(e, BeamConfig(60, e.state[0], cfg.N_r), cfg, 1.0, None, noise_scale=0.0)
    assert mle_velocity(m, cfg.f_c) == pytest.approx(cfg.v, abs=1e-12)


def test_cr_measurement_examples():
    y = cr_measurement((60.0, 20.0), 20.0, (1.5, 0.5), np.ones(3))
    assert y.phi == pytest.approx(0.32175, abs=1e-5) and y.d == pytest.approx(64.826, abs=1e-3)
    back = cr_measurement((-3.0, 2.0), 1.0, (1.0, 0.5), np.ones(3))
    assert math.pi / 2 < back.phi < math.pi
    plain = cr_measurement((5.0, 7.0), 1.0, (0.0, 0.0), np.ones(3))
    assert (plain.phi, plain.d) == pytest.approx((math.atan2(7, 5), math.hypot(5, 7)))
    with pytest.raises(SingularGeometryError):
        cr_measurement((-1.0, -0.5), 1.0, (1.0, 0.5), np.ones(3))


@given(st.floats(-100, 100), st.floats(1e-3, 100))
def test_branch_atan_is_atan2_on_upper_half_plane(x, y):
    assert branch_atan(y, x) == pytest.approx(math.atan2(y, x), abs=1e-12)
    assert branch_atan_batch(np.array([y]), np.array([x]))[0] == pytest.approx(math.atan2(y, x), abs=1e-12)
