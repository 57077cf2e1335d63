import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from frgt.flownorm import (NormalizationError, NormStats, compute_stats, denormalize,
                           estimate_inflow, normalize, normalize_fields, stats_from_surface)
from frgt.meshgraph import WALL
from frgt.synthflow import FlowCase, GridSpec, generate_case


def test_inflow_hand_value():
    assert estimate_inflow([612.5], 1.225) == pytest.approx(31.6228, abs=1e-4)


def test_single_stagnation_sample_exact():
    assert estimate_inflow([0.5 * 1.225 * 17.0 ** 2, -3.0], 1.225) == pytest.approx(17.0, rel=1e-15)


def test_no_positive_pressure():
    with pytest.raises(NormalizationError, match="stagnation"):
        estimate_inflow([-1.0, 0.0], 1.225)


def test_potential_flow_inflow_within_two_percent():
    g = generate_case(FlowCase("cylinder", u_inf=10.0, alpha=0.3), GridSpec(256, 3))
    u = compute_stats(g).u_inf
    assert 0.98 * 10.0 <= u <= 10.0 * (1 + 1e-12)


def test_constant_pressure_uses_floor():
    s = stats_from_surface([100.0] * 5, 1.0, 1.225)
    assert s.mu_p == 100.0 and s.sigma_p == pytest.approx(1e-4)


def test_two_values():
    s = stats_from_surface([0.0, 2.0], 1.0, 1.225)
    assert (s.mu_p, s.sigma_p) == (1.0, 1.0)


def test_empty_mask():
    with pytest.raises(NormalizationError):
        stats_from_surface([], 1.0, 1.225)


def test_stats_match_recomputation(small_case):
    s = compute_stats(small_case)
    p = small_case.target[small_case.node_type == WALL, 0]
    assert s.mu_p == pytest.approx(p.mean(), rel=1e-12)
    assert s.sigma_p == pytest.approx(p.std(), rel=1e-12)
    assert s.u_inf == pytest.approx(np.sqrt(2 * p.max() / small_case.rho), rel=1e-12)


def test_stats_ignore_unsensed_values(small_case):
    g = small_case.replace(pressure_obs=np.where(small_case.sense_mask, small_case.pressure_obs, 1e9))
    assert compute_stats(g) == compute_stats(small_case)


def test_normalize_hand_values():
    s = NormStats(mu_p=5.0, sigma_p=2.0, u_inf=4.0, rho=1.2, chord=2.0)
    out = normalize_fields(np.array([[5.0, 4.0, 0.0]]), s)
    assert out.tolist() == [[0.0, 1.0, 0.0]]


def test_normalize_graph(small_case):
    s = compute_stats(small_case)
    g = normalize(small_case, s)
    sensed = g.pressure_obs[g.sense_mask]
    assert abs(sensed.mean()) < 1e-12 and abs(sensed.std() - 1) < 1e-12
    assert np.all(np.isnan(g.pressure_obs[~g.sense_mask]))
    np.testing.assert_allclose(denormalize(g.target, s), small_case.target, rtol=1e-12, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 100_000))
def test_round_trip(seed):
    rng = np.random.default_rng(seed)
    s = NormStats(float(rng.uniform(-500, 500)), float(rng.uniform(0.1, 300)),
                  float(rng.uniform(1, 100)), 1.225, 1.0)
    f64 = rng.standard_normal((200, 3)) * 3
    assert np.max(np.abs(normalize_fields(denormalize(f64, s), s) - f64)) < 1e-12
    f32 = f64.astype(np.float32)
    back = normalize_fields(denormalize(f32, s), s)
    assert back.dtype == np.float32
    assert np.max(np.abs(back - f32)) < 1e-6 * max(1.0, abs(s.mu_p) / s.sigma_p)


def test_stats_serialization():
    s = NormStats(1.5, 2.5, 3.5, 1.2, 0.9)
    assert NormStats.from_dict(s.to_dict()) == s
