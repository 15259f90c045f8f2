import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from isac_v2i.config import SPEED_OF_LIGHT, SimConfig
from isac_v2i.scenario import (GroundTruth, TruthBatch, VehicleGeometry, evolve_state,
                               generate_trajectory, scatterer_layout)


def test_reference_geometry(cfg, rng):
    g = generate_trajectory(cfg, rng)
    np.testing.assert_allclose(g.centroid[1], [59.8, 20.0], atol=1e-12)
    assert g.state[0, 1] == pytest.approx(math.hypot(61.5, 20.5), abs=1e-12)
    assert g.state[0, 0] == pytest.approx(math.atan(20.5 / 61.5), abs=1e-12)
    assert g.state[0, 0] == pytest.approx(0.32175, abs=1e-5)
    assert g.state[0, 1] == pytest.approx(64.826, abs=1e-3)


def test_truth_invariants(cfg, rng):
    g = generate_trajectory(cfg, rng)
    np.testing.assert_allclose(g.cr, g.centroid + [cfg.delta_x, cfg.delta_y], atol=1e-12)
    np.testing.assert_array_equal(g.doppler, 2 * cfg.v * np.cos(g.theta) * cfg.f_c / SPEED_OF_LIGHT)
    assert np.all((g.state[:, 0] > 0) & (g.state[:, 0] < math.pi)) and np.all(g.state[:, 1] > 0)
    assert g.rcs.shape == (cfg.n_epochs, cfg.K) and np.iscomplexobj(g.rcs)


def test_stationary_vehicle(rng):
    g = generate_trajectory(SimConfig(v=0.0, T=0.1), rng)
    assert np.all(g.state == g.state[0]) and np.all(g.theta == g.theta[0])


def test_layout_grid():
    off = scatterer_layout(VehicleGeometry())
    assert off.shape == (8, 2)
    np.testing.assert_allclose(sorted(set(off[:, 0])), [-1.875, -0.625, 0.625, 1.875])
    np.testing.assert_allclose(sorted(set(off[:, 1])), [-0.5, 0.5])
    np.testing.assert_allclose(scatterer_layout(VehicleGeometry(K=1)), [[0.0, 0.0]])


@given(st.integers(1, 24), st.booleans(), st.integers(0, 2**31))
@settings(max_examples=60, deadline=None)
def test_layout_inside_rectangle(K, random, seed):
    geom = VehicleGeometry(K=K)
    off = scatterer_layout(geom, np.random.default_rng(seed) if random else None)
    assert np.all(np.abs(off[:, 0]) <= 2.5 + 1e-12) and np.all(np.abs(off[:, 1]) <= 1 + 1e-12)
    span = np.max(np.hypot(*(off[:, None] - off[None]).transpose(2, 0, 1)))
    assert span <= math.hypot(5, 2) + 1e-12


def test_geometry_rejects_outside_offsets():
    with pytest.raises(ValueError):
        VehicleGeometry(K=1, scatterer_offsets=np.array([[3.0, 0.0]]))


def test_evolve_state_cases():
    x = np.array([0.7, 30.0, 0.0])
    np.testing.assert_array_equal(evolve_state(x, 0.01), x)
    y = evolve_state(np.array([math.pi / 2, 50.0, 10.0]), 0.01)
    assert y[1] == pytest.approx(50.0, abs=1e-12)
    assert y[0] == pytest.approx(math.pi / 2 + 0.1 / 50.0, abs=1e-15)


@given(st.floats(0.2, 2.9), st.floats(10, 200), st.floats(0, 30))
@settings(max_examples=100, deadline=None)
def test_evolve_matches_exact_kinematics_to_first_order(phi, d, v):
    # exact advance: the CR moves by (-v dt, 0)
    dt = 0.01
    x, y = d * math.cos(phi), d * math.sin(phi)
    x1 = x - v * dt
    exact = np.array([math.atan2(y, x1), math.hypot(x1, y)])
    pred = evolve_state(np.array([phi, d, v]), dt)[:2]
    # second-order remainder: (v dt)^2 / d^2 in angle, (v dt)^2 / d in range
    step = v * dt
    assert abs(pred[0] - exact[0]) <= step ** 2 / d ** 2 + 1e-14
    assert abs(pred[1] - exact[1]) <= step ** 2 / d + 1e-12


def test_evolve_broadcasts():
    xs = np.array([[0.3, 60.0, 20.0], [2.0, 40.0, 5.0]])
    out = evolve_state(xs, 0.01)
    for i in range(2):
        np.testing.assert_array_equal(out[i], evolve_state(xs[i], 0.01))


def test_trajectory_hits_axis():
    with pytest.raises(ValueError):
        generate_trajectory(SimConfig(y0=0.2, delta_y=0.0, T=0.1), np.random.default_rng(0))


def test_truth_batch_stack(short_cfg):
    gs = [generate_trajectory(short_cfg, np.random.default_rng(i)) for i in range(3)]
    tb = TruthBatch.stack(gs)
    assert tb.runs == 3 and tb.n_epochs == short_cfg.n_epochs
    np.testing.assert_array_equal(tb.rcs[2], gs[2].rcs)
    with pytest.raises(ValueError):
        TruthBatch.stack([])
    assert isinstance(gs[0], GroundTruth)
