import math

import numpy as np
import pytest
from scipy import stats

from qpng_lab.distributions import SeededStream
from qpng_lab.errors import DomainError, RangeError
from qpng_lab.fredholm import q_laplace
from qpng_lab.qpng_sim import (
    MINUS_INF, SQRT2, EmpiricalCDF, RayDiagram, SimConfig, _order, _sweep, height, mc_cdf,
    mc_mgf, mc_q_laplace, sample_heights, simulate, simulate_backward_cone,
)


def diagram_from_points(points, q, U, V, seed=0):
    pts = _order(np.asarray(points, dtype=float).reshape(-1, 2))
    gen = np.random.default_rng(seed)
    ne, nw, cr, ties = _sweep(pts, q, lambda v: U, lambda u: V, gen)
    return RayDiagram(pts, ne, nw, cr, ("rect", U, V), {"ties": ties})


def point(u, v):
    # (x, t) of light-cone coordinates (u, v)
    return (u - v) / SQRT2, (u + v) / SQRT2


def test_config_validation():
    assert SimConfig(q=0.3, t_max=2.0).lam == pytest.approx(1.4)
    with pytest.raises(DomainError):
        SimConfig(q=1.5, t_max=1.0)
    with pytest.raises(DomainError):
        SimConfig(q=0.5, t_max=1.0, trials=0)


def test_no_nucleations_gives_flat_height():
    cfg = SimConfig(q=0.4, t_max=5.0, lam=1e-300)
    d = simulate(cfg, SeededStream(1))
    assert len(d.nucleations) == 0
    for x in (-3.0, 0.0, 2.5):
        assert height(d, x, 5.0) == 0


def test_outside_cone_marker():
    d = simulate(SimConfig(q=0.4, t_max=3.0), SeededStream(2))
    assert height(d, 3.5, 3.0) == MINUS_INF
    assert height(d, -4.0, 3.0) == MINUS_INF
    with pytest.raises(RangeError):
        height(d, 0.0, 4.0)


def test_height_near_origin():
    d = simulate(SimConfig(q=0.4, t_max=3.0), SeededStream(3))
    assert height(d, 0.0, 1e-9) == 0


def test_single_nucleation():
    d = diagram_from_points([(1.0, 0.5)], 0.3, 3.0, 3.0)
    x, t = point(3.0, 3.0)
    assert height(d, x, t) == 1
    # a point below the nucleation in the causal order sees nothing
    x, t = point(0.9, 0.4)
    assert height(d, x, t) == 0


@pytest.mark.parametrize("q,expected", [(0.0, 1), (1.0, 2)])
def test_collision_outcome(q, expected):
    d = diagram_from_points([(1.0, 2.0), (2.0, 1.0)], q, 3.0, 4.0)
    assert len(d.crossings) == 1
    assert d.crossings[0, 2] == (1 if q == 1.0 else 0)
    x, t = point(3.0, 4.0)
    assert height(d, x, t) == expected


def test_height_nondecreasing_in_time():
    d = simulate(SimConfig(q=0.3, t_max=6.0), SeededStream(4))
    for x in (-2.0, 0.0, 1.5):
        ts = np.linspace(abs(x) + 0.01, 6.0, 60)
        h = [height(d, x, t) for t in ts]
        assert all(b >= a for a, b in zip(h, h[1:]))


def test_q_one_counts_nucleations():
    # with no annihilation every nucleation below (0, t) adds one ray
    cfg = SimConfig(q=1.0, t_max=2.0, lam=2.0)
    h = sample_heights(cfg, 0.0, 2.0, trials=4000, workers=1)
    assert abs(h.mean() - 4.0) < 3 * math.sqrt(4.0 / len(h))
    d = simulate_backward_cone(cfg, 0.0, 2.0, SeededStream(5))
    assert height(d, 0.0, 2.0) == len(d.nucleations)


def test_backward_cone_matches_full_law():
    cfg = SimConfig(q=0.3, t_max=3.0, seed=17)
    a = sample_heights(cfg, 0.5, 3.0, trials=3000, workers=1)
    b = sample_heights(cfg, 0.5, 3.0, trials=3000, workers=1, stream_offset=10**6, full=True)
    assert stats.ks_2samp(a, b).pvalue > 0.01


def test_sample_heights_worker_invariant():
    cfg = SimConfig(q=0.3, t_max=3.0, seed=5)
    a = sample_heights(cfg, 0.0, 3.0, trials=200, workers=1)
    b = sample_heights(cfg, 0.0, 3.0, trials=200, workers=2)
    np.testing.assert_array_equal(a, b)


def test_empirical_cdf_below_zero():
    cfg = SimConfig(q=0.3, t_max=2.0, trials=500, seed=1)
    cdf = mc_cdf(cfg, 0.0, 2.0, thresholds=[-2, -1, 0, 1, 50], workers=1)
    assert cdf.p_hat[0] == 0.0 and cdf.stderr[0] == 0.0
    assert cdf.p_hat[1] == 0.0
    assert cdf.p_hat[-1] == 1.0
    assert np.all(np.diff(cdf.p_hat) >= 0)
    auto = EmpiricalCDF.from_samples(np.array([2, 0, 1, 1]))
    np.testing.assert_array_equal(auto.thresholds, [0, 1, 2])
    np.testing.assert_allclose(auto.p_hat, [0.25, 0.75, 1.0])


def test_q_laplace_trivial_and_determinant():
    cfg = SimConfig(q=0.3, t_max=3.0, trials=20000, seed=3)
    assert mc_q_laplace(cfg, 0.0, 3.0) == (1.0, 0.0)
    est, se = mc_q_laplace(cfg, 1.0, 3.0)
    assert abs(est - q_laplace(3.0, 1.0, 0.3)) < 3 * se


def test_mgf_small_p():
    cfg = SimConfig(q=0.5, t_max=3.0, trials=500, seed=2)
    assert mc_mgf(cfg, 0.0, 3.0) == (1.0, 0.0)
    est, se = mc_mgf(cfg, 1e-6, 3.0, workers=1)
    assert est == pytest.approx(1.0, abs=1e-4)


def test_trajectory_csv(tmp_path):
    d = diagram_from_points([(1.0, 2.0), (2.0, 1.0)], 0.0, 3.0, 4.0)
    path = tmp_path / "traj.csv"
    d.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "event_type,u,v,outcome"
    assert lines[-1].startswith("collision") and lines[-1].endswith("annihilate")
    assert len(lines) == 4
