"""Integer partitions and partition counting tables."""
from __future__ import annotations

import json
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError


class Partition:
    """Weakly decreasing sequence of positive integers (trailing zeros dropped)."""

    __slots__ = ("parts",)

    def __init__(self, parts: Iterable[int] = ()):
        parts = [int(p) for p in parts]
        while parts and parts[-1] == 0:
            parts.pop()
        for a, b in zip(parts, parts[1:]):
            if a < b:
                raise InputError(f"parts must be weakly decreasing: {parts}")
        if parts and parts[-1] < 0:
            raise InputError("parts must be nonnegative")
        self.parts = tuple(parts)

    @property
    def size(self) -> int:
        return sum(self.parts)

    def __len__(self) -> int:
        return len(self.parts)

    def __getitem__(self, i):
        return self.parts[i]

    def __iter__(self):
        return iter(self.parts)

    def __eq__(self, other) -> bool:
        if isinstance(other, Partition):
            return self.parts == other.parts
        if isinstance(other, (tuple, list)):
            return self.parts == Partition(other).parts
        return NotImplemented

    def __hash__(self) -> int:
        return hash(self.parts)

    def __repr__(self) -> str:
        return f"Partition({list(self.parts)})"

    @property
    def first_row(self) -> int:
        return self.parts[0] if self.parts else 0

    def transpose(self) -> "Partition":
        if not self.parts:
            return Partition()
        return Partition(sum(1 for r in self.parts if r > j) for j in range(self.parts[0]))

    def to_json(self) -> str:
        return json.dumps(list(self.parts))

    @classmethod
    def from_json(cls, text: str) -> "Partition":
        return cls(json.loads(text))


def restricted_counts(n_max: int) -> list:
    """Table ``T[k][m]`` = number of partitions of m with all parts <= k.

    Built by p(m, <=k) = p(m, <=k-1) + p(m-k, <=k); exact Python integers.
    """
    n_max = int(n_max)
    row = np.zeros(n_max + 1, dtype=object)
    row[0] = 1
    table = [row.copy()]
    for k in range(1, n_max + 1):
        row = row.copy()
        for r in range(k):
            row[r::k] = np.cumsum(row[r::k])
        table.append(row)
    return table


class PartitionCountTable:
    """Memoized restricted partition counts, grown on demand."""

    def __init__(self, n_max: int = 64):
        self._table = restricted_counts(n_max)

    @property
    def n_max(self) -> int:
        return len(self._table) - 1

    def ensure(self, n: int):
        if n > self.n_max:
            self._table = restricted_counts(max(n, 2 * self.n_max))

    def count(self, n: int, max_part: int | None = None) -> int:
        """p(n) or p(n, largest part <= max_part)."""
        if n < 0:
            return 0
        self.ensure(n)
        k = n if max_part is None else max(0, min(int(max_part), n))
        return int(self._table[k][n])

    def sample_uniform(self, m: int, rng: np.random.Generator) -> Partition:
        """Uniformly random partition of m by the conditional largest-part recursion."""
        self.ensure(m)
        parts = []
        remaining, bound = m, m
        while remaining > 0:
            k = min(bound, remaining)
            total = self.count(remaining, k)
            # P(next part = j) = p(remaining - j, <= j) / p(remaining, <= k)
            target = int(rng.integers(0, 2**62)) % total if total < 2**62 else \
                _big_uniform(total, rng)
            acc = 0
            for j in range(k, 0, -1):
                acc += self.count(remaining - j, j)
                if target < acc:
                    break
            parts.append(j)
            remaining -= j
            bound = j
        return Partition(parts)


def _big_uniform(total: int, rng: np.random.Generator) -> int:
    nbits = total.bit_length() + 64
    words = rng.integers(0, 2**32, size=(nbits + 31) // 32, dtype=np.uint64)
    val = 0
    for w in words:
        val = (val << 32) | int(w)
    return val % total


@lru_cache(maxsize=4)
def _restricted_row(n: int) -> np.ndarray:
    # final row of the restricted table: parts of every size up to n
    row = np.zeros(n + 1, dtype=object)
    row[0] = 1
    for k in range(1, n + 1):
        for r in range(k):
            row[r::k] = np.cumsum(row[r::k])
    return row


_DEFAULT_TABLE: PartitionCountTable | None = None
PENTAGONAL_SWITCH = 2000


def default_table() -> PartitionCountTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = PartitionCountTable(64)
    return _DEFAULT_TABLE


@lru_cache(maxsize=8)
def _pentagonal_counts(n: int) -> tuple:
    p = [0] * (n + 1)
    p[0] = 1
    for m in range(1, n + 1):
        total = 0
        k = 1
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
    return tuple(p)


def partition_count(n: int) -> int:
    """Exact number of partitions p(n).

    Uses the restricted-count table for n <= PENTAGONAL_SWITCH (the table the
    samplers share) and Euler's pentagonal recurrence above that, where the
    quadratic table would be too slow.
    """
    n = int(n)
    if n < 0:
        raise InputError("n must be nonnegative")
    if n > 10**5:
        raise InputError("n must be at most 1e5")
    if n <= PENTAGONAL_SWITCH:
        return int(_restricted_row(n)[n])
    return _pentagonal_counts(n)[n]


def partitions_of(n: int) -> list:
    """All partitions of n in reverse lexicographic order (small n only)."""
    out = []

    def rec(rem, bound, acc):
        if rem == 0:
            out.append(Partition(acc))
            return
        for j in range(min(rem, bound), 0, -1):
            rec(rem - j, j, acc + [j])

    rec(int(n), int(n), [])
    return out


def as_partition(obj: Partition | Sequence[int]) -> Partition:
    return obj if isinstance(obj, Partition) else Partition(obj)
