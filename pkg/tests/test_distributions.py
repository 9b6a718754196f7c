import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qpng_lab.distributions import (
    SeededStream, q_geo_pmf, sample_poisson, sample_ppp_rect, sample_q_geo, sample_theta,
    sample_volume_partition, shift_cdf, theta_pmf, theta_window, volume_size_pmf,
)
from qpng_lab.errors import DomainError
from qpng_lab.specialfn import f_q, q_pochhammer, theta_norm


def within_3sigma(count, n, p):
    return abs(count / n - p) <= 3 * math.sqrt(p * (1 - p) / n) + 1e-12


def test_q_geo_pmf_normalization():
    p = q_geo_pmf(0.5, 0.5, kmax=200)
    assert p[0] == pytest.approx(0.288788095, abs=1e-9)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        q_geo_pmf(1.0, 0.5)


def test_q_geo_empirical_zero_mass():
    k = sample_q_geo(0.5, 0.5, SeededStream(1, 2), size=1_000_000)
    assert within_3sigma(np.count_nonzero(k == 0), len(k), q_pochhammer(0.5, 0.5))


def test_q_geo_small_mu_concentrates():
    k = sample_q_geo(1e-9, 0.5, SeededStream(4), size=1000)
    assert np.all(k == 0)


def test_theta_pmf_matches_samples():
    q, zeta = 0.4, 2.0
    draws = sample_theta(zeta, q, SeededStream(7, 1), size=200_000)
    for k in range(-3, 5):
        p = float(q ** (k * k / 2) * zeta ** k / theta_norm(q, zeta))
        assert p == pytest.approx(float(theta_pmf([k], zeta, q)[0]), rel=1e-12)
        assert within_3sigma(np.count_nonzero(draws == k), len(draws), p)


@given(st.floats(min_value=0.05, max_value=0.95), st.floats(min_value=1e-4, max_value=1e4))
def test_theta_window_certified(q, zeta):
    k, p = theta_window(zeta, q)
    assert p.sum() == pytest.approx(1.0, abs=1e-14)
    assert np.all(np.diff(k) == 1)
    assert p[0] < 1e-15 and p[-1] < 1e-15


def test_poisson_moments():
    assert sample_poisson(0.0, SeededStream(1)) == 0
    x = sample_poisson(4.0, SeededStream(2), size=1_000_000)
    assert abs(x.mean() - 4.0) < 3 * math.sqrt(4.0 / len(x))
    # var of the sample variance of Poisson(4) is about (mu + 2 mu^2)/n
    assert abs(x.var(ddof=1) - 4.0) < 3 * math.sqrt((4.0 + 2 * 16.0) / len(x))
    with pytest.raises(DomainError):
        sample_poisson(-1.0, SeededStream(1))


def test_volume_measure_sizes():
    q = 0.5
    p2 = q_pochhammer(q, q) * 2 * q ** 2
    assert volume_size_pmf(q, 2)[2] == pytest.approx(p2, rel=1e-14)
    n = 100_000
    sizes = [sample_volume_partition(q, SeededStream(3, k)).size for k in range(n)]
    assert within_3sigma(sizes.count(2), n, p2)


def test_ppp_rect():
    assert sample_ppp_rect(0.0, 2.0, 3.0, SeededStream(1)).shape == (0, 2)
    counts = np.array([len(sample_ppp_rect(1.5, 2.0, 3.0, SeededStream(6, k)))
                       for k in range(100_000)])
    assert abs(counts.mean() - 9.0) < 3 * math.sqrt(9.0 / len(counts))
    pts = sample_ppp_rect(5.0, 2.0, 3.0, SeededStream(6))
    assert np.all((pts[:, 0] >= 0) & (pts[:, 0] <= 2) & (pts[:, 1] >= 0) & (pts[:, 1] <= 3))


@pytest.mark.parametrize("n", range(-5, 6))
def test_shift_cdf_closed_form(n):
    q, zeta = 0.3, 1.7
    assert shift_cdf(n, zeta, q) == pytest.approx(f_q(zeta * q ** (n + 0.5), q), abs=1e-13)


def test_shift_cdf_empirical():
    q, zeta, m = 0.3, 1.7, 200_000
    chi = sample_q_geo(q, q, SeededStream(21, 0), size=m)
    s = sample_theta(zeta, q, SeededStream(21, 1), size=m)
    tot = chi + s
    for n in range(-5, 6):
        assert within_3sigma(np.count_nonzero(tot <= n), m, shift_cdf(n, zeta, q))


def test_stream_determinism():
    a = SeededStream(123, 4).gen.random(5)
    b = SeededStream(123, 4).gen.random(5)
    c = SeededStream(123, 5).gen.random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    s = SeededStream(9)
    np.testing.assert_array_equal(s.substream(3).gen.random(3), s.substream(3).gen.random(3))
