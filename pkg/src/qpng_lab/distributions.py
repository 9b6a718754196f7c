"""Seeded samplers for the discrete laws behind the exact identities.

Randomness comes from :class:`SeededStream`, a counter-based Philox
generator keyed by ``(root_seed, stream_id)``.  Replaying a pair reproduces
the draws exactly, and distinct stream ids give independent sequences, so
Monte Carlo trials can be scheduled in any order.
"""
from __future__ import annotations

import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np

from .partitions import Partition, default_table
from .specialfn import QParam, as_qparam, log_theta_norm, q_pochhammer
from .errors import AccuracyError, DomainError


@dataclass
class SeededStream:
    root_seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.root_seed = int(self.root_seed) & (2**64 - 1)
        self.stream_id = int(self.stream_id) & (2**64 - 1)

    @property
    def gen(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.root_seed, spawn_key=(self.stream_id,))
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def child(self, stream_id: int) -> "SeededStream":
        """Independent stream sharing this root seed."""
        return SeededStream(self.root_seed, stream_id)

    def substream(self, index: int) -> "SeededStream":
        """Stream derived from this one; used to fan out per-trial streams."""
        mixed = (self.stream_id * 0x9E3779B97F4A7C15 + int(index) + 1) & (2**64 - 1)
        return SeededStream(self.root_seed ^ 0xD1B54A32D192ED03, mixed)


def as_stream(rng) -> SeededStream:
    if isinstance(rng, SeededStream):
        return rng
    if rng is None:
        return SeededStream(0, 0)
    return SeededStream(int(rng), 0)


# ---------------------------------------------------------------------------
# q-geometric
# ---------------------------------------------------------------------------

def q_geo_pmf(mu: float, qp, kmax: int = 200) -> np.ndarray:
    """P(k) = mu^k (mu;q)_inf / (q;q)_k for k = 0..kmax."""
    qp = as_qparam(qp)
    if not (0.0 < mu < 1.0):
        raise DomainError("mu must lie in (0, 1)")
    k = np.arange(1, kmax + 1)
    ratios = mu / (1.0 - qp.q ** k)
    p = np.empty(kmax + 1)
    p[0] = q_pochhammer(mu, qp.q)
    p[1:] = p[0] * np.cumprod(ratios)
    return p


def sample_q_geo(mu: float, qp, rng, size: int | None = None):
    """q-geometric draw(s) by inverse CDF."""
    qp = as_qparam(qp)
    stream = as_stream(rng)
    pmf = q_geo_pmf(mu, qp, kmax=_q_geo_cutoff(mu, qp))
    cdf = np.cumsum(pmf)
    u = stream.gen.random(1 if size is None else size)
    k = np.searchsorted(cdf, u * cdf[-1], side="right")
    return int(k[0]) if size is None else k


def _q_geo_cutoff(mu: float, qp: QParam) -> int:
    # tail beyond K is below mu^K / ((q;q)_inf (1-mu)); pick K so this is < 1e-17
    denom = q_pochhammer(qp.q, qp.q) * (1.0 - mu)
    k = math.log(1e-17 * denom) / math.log(mu)
    return int(min(max(k, 1.0) + 2, 10_000))


# ---------------------------------------------------------------------------
# Theta(q, zeta)
# ---------------------------------------------------------------------------

def theta_window(zeta: float, qp, tol: float = 1e-15):
    """Integer window and pmf of Theta(q, zeta) with neglected mass < tol.

    Away from the mode consecutive ratios zeta q^{k+1/2} shrink
    geometrically, so once the edge ratios are below 1/2 the mass outside
    the window is at most twice the edge probabilities.  The pmf is
    normalized over the window and checked against the triple product.
    """
    qp = as_qparam(qp)
    if zeta <= 0:
        raise DomainError("zeta must be positive")
    lz = math.log(zeta)
    mode = int(round(lz / qp.eta))
    log_norm = log_theta_norm(qp.q, zeta)
    half = 4
    while True:
        k = np.arange(mode - half, mode + half + 1)
        logp = -0.5 * qp.eta * k.astype(float) ** 2 + k * lz - log_norm
        p = np.exp(logp)
        # log ratios p(k+1)/p(k) just outside each edge
        up = lz - qp.eta * (k[-1] + 0.5)
        down = -lz + qp.eta * (k[0] - 0.5)
        if up < -math.log(2) and down < -math.log(2) and 2.0 * (p[0] + p[-1]) < tol:
            break
        half *= 2
    total = float(p.sum())
    if abs(total - 1.0) > 1e-12:
        raise AccuracyError("theta window mass disagrees with the triple product",
                            partial=total, diagnostics={"zeta": zeta, "q": qp.q})
    return k, p / total


def theta_pmf(k, zeta: float, qp) -> np.ndarray:
    qp = as_qparam(qp)
    k = np.asarray(k, dtype=float)
    return np.exp(-0.5 * qp.eta * k ** 2 + k * math.log(zeta) - log_theta_norm(qp.q, zeta))


def sample_theta(zeta: float, qp, rng, size: int | None = None):
    """Theta(q, zeta) draw(s) by inverse CDF on a certified window."""
    stream = as_stream(rng)
    k, p = theta_window(zeta, qp)
    cdf = np.cumsum(p)
    u = stream.gen.random(1 if size is None else size)
    idx = np.minimum(np.searchsorted(cdf, u * cdf[-1], side="right"), len(k) - 1)
    out = k[idx]
    return int(out[0]) if size is None else out


# ---------------------------------------------------------------------------
# Poisson, volume measure, Poisson point process
# ---------------------------------------------------------------------------

def sample_poisson(lam: float, rng, size: int | None = None):
    if lam < 0:
        raise DomainError("Poisson mean must be nonnegative")
    stream = as_stream(rng)
    if size is None:
        return int(stream.gen.poisson(lam))
    return stream.gen.poisson(lam, size=size)


def volume_size_pmf(qp, m_max: int) -> np.ndarray:
    """P(|nu| = m) = (q;q)_inf p_m q^m for m = 0..m_max."""
    qp = as_qparam(qp)
    table = default_table()
    norm = q_pochhammer(qp.q, qp.q)
    return np.array([norm * float(table.count(m)) * qp.q ** m for m in range(m_max + 1)])


def _volume_cutoff(qp: QParam) -> int:
    m = 8
    while True:
        tail = 1.0 - volume_size_pmf(qp, m).sum()
        if tail < 1e-15:
            return m
        m *= 2


@lru_cache(maxsize=32)
def _volume_cdf(q: float) -> np.ndarray:
    qp = QParam(q)
    return np.cumsum(volume_size_pmf(qp, _volume_cutoff(qp)))


def sample_volume_partition(qp, rng) -> Partition:
    """nu with P(nu) = q^{|nu|} (q;q)_inf: size first, then a uniform partition."""
    qp = as_qparam(qp)
    stream = as_stream(rng)
    cdf = _volume_cdf(qp.q)
    m = int(np.searchsorted(cdf, stream.gen.random() * cdf[-1], side="right"))
    return default_table().sample_uniform(m, stream.gen)


def sample_ppp_rect(intensity: float, width: float, height: float, rng) -> np.ndarray:
    """Poisson point process on [0, width] x [0, height]; returns an (N, 2) array."""
    if intensity < 0 or width < 0 or height < 0:
        raise DomainError("intensity and side lengths must be nonnegative")
    stream = as_stream(rng)
    n = int(stream.gen.poisson(intensity * width * height))
    pts = stream.gen.random((n, 2))
    pts[:, 0] *= width
    pts[:, 1] *= height
    return pts


def shift_cdf(n: int, zeta: float, qp) -> float:
    """P(chi + S_zeta <= n) for independent chi ~ q-Geo(q), S ~ Theta(q, zeta).

    Computed by direct convolution of the two pmfs; compare with
    F_q(zeta q^{n + 1/2}).
    """
    qp = as_qparam(qp)
    k, p = theta_window(zeta, qp)
    chi = q_geo_pmf(qp.q, qp, kmax=_q_geo_cutoff(qp.q, qp))
    chi_cdf = np.cumsum(chi)
    total = 0.0
    for kk, pk in zip(k, p):
        m = n - kk
        if m >= 0:
            total += pk * chi_cdf[min(m, len(chi_cdf) - 1)]
    return float(total)
