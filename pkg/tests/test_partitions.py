from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qpng_lab.errors import InputError
from qpng_lab.partitions import (
    Partition, PartitionCountTable, partition_count, partitions_of, restricted_counts,
)


def pentagonal_oracle(n):
    p = [1] + [0] * n
    for m in range(1, n + 1):
        k, total = 1, 0
        while True:
            g1 = k * (3 * k - 1) // 2
            if g1 > m:
                break
            sign = 1 if k % 2 else -1
            total += sign * p[m - g1]
            g2 = k * (3 * k + 1) // 2
            if g2 <= m:
                total += sign * p[m - g2]
            k += 1
        p[m] = total
    return p


@st.composite
def partition_strategy(draw, max_n=12):
    n = draw(st.integers(min_value=1, max_value=max_n))
    k = draw(st.integers(min_value=1, max_value=n))
    bins = draw(st.lists(st.integers(min_value=0, max_value=k - 1), min_size=n, max_size=n))
    return Partition(sorted(Counter(bins).values(), reverse=True))


def test_small_counts():
    assert partition_count(0) == 1
    assert partition_count(5) == 7
    assert partition_count(50) == 204226


def test_counts_match_pentagonal_oracle():
    ref = pentagonal_oracle(3000)
    for n in (1, 17, 100, 999, 2000, 2001, 3000):
        assert partition_count(n) == ref[n]


def test_count_bounds():
    with pytest.raises(InputError):
        partition_count(-1)
    with pytest.raises(InputError):
        partition_count(10**5 + 1)


def test_restricted_table():
    table = restricted_counts(10)
    # p(10, largest part <= 3) = 14
    assert int(table[3][10]) == 14
    t = PartitionCountTable(8)
    assert t.count(10) == 42
    assert t.count(10, 1) == 1


def test_partitions_of_enumerates_all():
    for n in range(1, 11):
        parts = partitions_of(n)
        assert len(parts) == partition_count(n)
        assert len(set(parts)) == len(parts)
        assert all(p.size == n for p in parts)


def test_partition_validation():
    with pytest.raises(InputError):
        Partition([1, 2])
    assert Partition([3, 1, 0, 0]) == (3, 1)
    assert Partition.from_json(Partition([4, 2, 2]).to_json()) == Partition([4, 2, 2])


@given(partition_strategy())
def test_transpose_involution(lam):
    assert lam.transpose().transpose() == lam
    assert lam.transpose().size == lam.size
    assert lam.transpose().first_row == len(lam)


def test_uniform_sampler_is_uniform():
    table = PartitionCountTable(16)
    rng = np.random.default_rng(3)
    draws = Counter(table.sample_uniform(6, rng) for _ in range(11000))
    assert len(draws) == partition_count(6)
    counts = np.array(list(draws.values()), dtype=float)
    expected = 11000 / partition_count(6)
    chi2 = float(np.sum((counts - expected) ** 2 / expected))
    # 10 degrees of freedom, 0.1% quantile is 29.6
    assert chi2 < 29.6
