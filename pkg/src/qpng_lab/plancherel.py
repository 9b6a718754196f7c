"""Partitions under the (cylindric) Plancherel measure.

Hook length formula, RSK shapes, exact Poissonized Plancherel sampling, the
multiplicative-functional estimator of P(h + chi + S <= s), and the size
laws of the cylindric measure.
"""
from __future__ import annotations

import math
from bisect import bisect_left
from typing import Sequence

import numpy as np

from .distributions import SeededStream, as_stream, sample_volume_partition
from .errors import DomainError, InputError
from .partitions import Partition, PartitionCountTable, as_partition, partition_count
from .specialfn import as_qparam, log_f_q

__all__ = [
    "Partition", "PartitionCountTable", "partition_count", "hook_lengths",
    "f_lambda_log", "rsk_shape", "lis_length", "sample_plancherel",
    "mult_functional", "mult_functional_mc", "cplan_size_sample", "sample_sizes",
]


def hook_lengths(lam) -> np.ndarray:
    """Hook lengths lambda_i - i + lambda'_j - j + 1 of all cells (1-based i, j)."""
    lam = as_partition(lam)
    if not lam.parts:
        return np.zeros(0, dtype=np.int64)
    rows = np.asarray(lam.parts, dtype=np.int64)
    cols = np.asarray(lam.transpose().parts, dtype=np.int64)
    out = []
    for i, r in enumerate(rows):
        j = np.arange(r)
        out.append(r - (i + 1) + cols[j] - (j + 1) + 1)
    return np.concatenate(out)


def f_lambda_log(lam) -> float:
    """log f^lambda = log |lambda|! - sum of log hook lengths."""
    lam = as_partition(lam)
    n = lam.size
    if n > 10**6:
        raise DomainError("partition too large")
    if n == 0:
        return 0.0
    return math.lgamma(n + 1.0) - float(np.sum(np.log(hook_lengths(lam))))


def rsk_shape(word: Sequence[float]) -> Partition:
    """Shape of the Robinson-Schensted insertion tableau of a word of distinct entries."""
    word = list(word)
    if len(set(word)) != len(word):
        raise InputError("RSK input must have distinct entries")
    rows: list = []
    for x in word:
        for row in rows:
            i = bisect_left(row, x)
            if i == len(row):
                row.append(x)
                x = None
                break
            row[i], x = x, row[i]
        if x is not None:
            rows.append([x])
    return Partition(len(r) for r in rows)


def lis_length(word: Sequence[float]) -> int:
    """Longest strictly increasing subsequence by patience sorting."""
    piles: list = []
    for x in word:
        i = bisect_left(piles, x)
        if i == len(piles):
            piles.append(x)
        else:
            piles[i] = x
    return len(piles)


def sample_plancherel(gamma: float, rng) -> Partition:
    """Exact Poissonized Plancherel draw: n ~ Poisson(gamma^2), RSK of n uniforms."""
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    if gamma > 200:
        raise DomainError("gamma above 200 is outside the supported range")
    gen = as_stream(rng).gen
    n = int(gen.poisson(gamma * gamma))
    return rsk_shape(gen.random(n))


def mult_functional(lam, qp, zeta: float, s: int) -> float:
    """prod_{i>=1} 1/(1 + zeta q^{s+i-1/2-lambda_i}), tail past the last part closed.

    The half-integer shift makes the empty partition give
    F_q(zeta q^{s+1/2}) = P(chi + S_zeta <= s), so that the Plancherel
    average equals P(h(0,t) + chi + S_zeta <= s).  For i beyond the length
    l of lambda the factors form F_q(zeta q^{s+l+1/2}).
    """
    qp = as_qparam(qp)
    lam = as_partition(lam)
    if zeta == 0:
        return 1.0
    parts = np.asarray(lam.parts, dtype=float)
    ell = len(parts)
    i = np.arange(1, ell + 1)
    expo = s + i - 0.5 - parts
    # log(1 + zeta q^e) computed without overflow for very negative e
    a = math.log(zeta) - qp.eta * expo
    logs = np.logaddexp(0.0, a)
    return math.exp(-float(np.sum(logs)) + log_f_q(zeta * qp.q ** (s + ell + 0.5), qp))


def mult_functional_mc(t: float, qp, zeta: float, s: int, trials: int, rng,
                       theta: float | None = None):
    """Monte Carlo E_{Plan(gamma)} of the multiplicative functional.

    gamma = theta t / (sqrt(2)(1 - q)); the default theta = sqrt(2)(1 - q)
    (intensity 2(1-q)) gives gamma = t.  Returns (estimate, stderr); the
    estimate targets P(h(0,t) + chi + S_zeta <= s).
    """
    qp = as_qparam(qp)
    if trials < 1:
        raise DomainError("trials must be positive")
    if zeta == 0:
        return 1.0, 0.0
    if theta is None:
        theta = math.sqrt(2.0) * (1.0 - qp.q)
    gamma = theta * t / (math.sqrt(2.0) * (1.0 - qp.q))
    stream = as_stream(rng)
    vals = np.empty(int(trials))
    for k in range(int(trials)):
        lam = sample_plancherel(gamma, stream.substream(k))
        vals[k] = mult_functional(lam, qp, zeta, s)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def cplan_size_sample(gamma: float, qp, rng):
    """(n, |rho|) for the cylindric Plancherel measure via the size construction.

    A_k ~ Poisson(q^k gamma^2) independently for k = 0, 1, ... until the
    mean drops below 1e-12, nu from the volume measure; n = sum A_k and
    |rho| = |nu| + sum k A_k.
    """
    qp = as_qparam(qp)
    if gamma < 0:
        raise DomainError("gamma must be nonnegative")
    stream = as_stream(rng)
    gen = stream.gen
    g2 = gamma * gamma
    kmax = 0
    if g2 > 1e-12:
        kmax = int(math.ceil(math.log(1e-12 / g2) / math.log(qp.q)))
    means = g2 * qp.q ** np.arange(kmax + 1)
    a = gen.poisson(means)
    nu = sample_volume_partition(qp, stream.substream(0))
    n = int(a.sum())
    rho = nu.size + int(np.dot(np.arange(kmax + 1), a))
    return n, rho


def sample_sizes(gamma: float, qp, trials: int, rng) -> np.ndarray:
    """Vector of n from ``trials`` independent cylindric size draws."""
    stream = as_stream(rng)
    return np.array([cplan_size_sample(gamma, qp, stream.substream(k))[0]
                     for k in range(int(trials))])
