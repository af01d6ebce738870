"""Set partitions in order-of-arrival form and grouped species counts."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb, factorial
from typing import Hashable, Iterable, Iterator, Sequence

import numpy as np

MAX_ENUMERATION_N = 12


@dataclass(frozen=True)
class SetPartition:
    """Partition of ``[n]`` stored as a restricted-growth string.

    ``labels[i]`` is the (1-based) block of item ``i``; block ``k`` is the
    ``k``-th block to appear when scanning the items in order.
    """

    labels: tuple[int, ...]

    def __post_init__(self):
        top = 0
        for a in self.labels:
            if a < 1 or a > top + 1:
                raise ValueError(f"labels {self.labels} are not in order-of-arrival form")
            top = max(top, a)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def K(self) -> int:
        return max(self.labels, default=0)

    @property
    def block_sizes(self) -> tuple[int, ...]:
        sizes = [0] * self.K
        for a in self.labels:
            sizes[a - 1] += 1
        return tuple(sizes)

    def blocks(self) -> list[list[int]]:
        """Item indices (0-based) of each block, in order of first appearance."""
        out: list[list[int]] = [[] for _ in range(self.K)]
        for i, a in enumerate(self.labels):
            out[a - 1].append(i)
        return out


def canonicalize(raw_labels: Iterable[Hashable]) -> SetPartition:
    """Relabel arbitrary tags by order of first appearance.

    >>> canonicalize([7, 7, 3]).labels
    (1, 1, 2)
    """
    seen: dict = {}
    labels = []
    for tag in raw_labels:
        if tag not in seen:
            seen[tag] = len(seen) + 1
        labels.append(seen[tag])
    if not labels:
        raise ValueError("cannot canonicalize an empty sequence")
    return SetPartition(tuple(labels))


def bell_number(n: int) -> int:
    """Bell number via ``B_{m+1} = sum_k C(m, k) B_k``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    bell = [1]
    for m in range(n):
        bell.append(sum(comb(m, k) * bell[k] for k in range(m + 1)))
    return bell[n]


def enumerate_partitions(n: int) -> Iterator[SetPartition]:
    """Yield every set partition of ``[n]`` exactly once, for 1 <= n <= 12."""
    if not 1 <= n <= MAX_ENUMERATION_N:
        raise ValueError(f"n must lie in [1, {MAX_ENUMERATION_N}], got {n}")
    for rgs in _restricted_growth(n):
        yield SetPartition(rgs)


def _restricted_growth(n: int) -> Iterator[tuple[int, ...]]:
    # iterative odometer over restricted-growth strings, lexicographic order
    a = [1] * n
    top = [1] * n  # top[i] = max(a[0..i])
    while True:
        yield tuple(a)
        i = n - 1
        while i > 0 and a[i] > top[i - 1]:
            i -= 1
        if i == 0:
            return
        a[i] += 1
        top[i] = max(top[i - 1], a[i])
        for m in range(i + 1, n):
            a[m] = 1
            top[m] = top[i]


def integer_partitions_with_counts(n: int) -> Iterator[tuple[tuple[int, ...], int]]:
    """Yield ``(block_sizes, m)`` for each integer partition of ``n``.

    ``m`` is the number of set partitions of ``[n]`` with those block sizes,
    ``n! / (prod s! * prod mult_s!)``. Used to collapse sums of symmetric
    functions over set partitions.
    """
    if n == 0:
        yield (), 1
        return

    def parts(remaining, largest):
        if remaining == 0:
            yield ()
            return
        for s in range(min(remaining, largest), 0, -1):
            for rest in parts(remaining - s, s):
                yield (s,) + rest

    for p in parts(n, n):
        denom = 1
        for s in p:
            denom *= factorial(s)
        for s in set(p):
            denom *= factorial(p.count(s))
        yield p, factorial(n) // denom


@dataclass(frozen=True, eq=False)
class GroupedSample:
    """Species labels of a sample split into ``J`` groups.

    ``labels[j][i]`` is the 0-based global species index of the ``i``-th
    observation in group ``j``. Species are numbered by first appearance
    when scanning group 0, then group 1, and so on. ``freq[j, d]`` counts
    the observations of species ``d`` in group ``j``.
    """

    labels: tuple[tuple[int, ...], ...]
    freq: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        expected = 0
        for group in self.labels:
            for d in group:
                if d > expected or d < 0:
                    raise ValueError("species indices must follow order of arrival by group")
                if d == expected:
                    expected += 1
        freq = np.zeros((len(self.labels), expected), dtype=np.int64)
        for j, group in enumerate(self.labels):
            for d in group:
                freq[j, d] += 1
        freq.setflags(write=False)
        object.__setattr__(self, "freq", freq)

    @property
    def J(self) -> int:
        return len(self.labels)

    @property
    def D(self) -> int:
        return self.freq.shape[1]

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.labels)

    @property
    def n(self) -> int:
        return sum(self.sizes)

    def __eq__(self, other):
        return isinstance(other, GroupedSample) and self.labels == other.labels

    def __hash__(self):
        return hash(self.labels)

    def __repr__(self):
        return f"GroupedSample({[list(g) for g in self.labels]})"


def grouped_from_observations(groups: Sequence[Sequence[Hashable]]) -> GroupedSample:
    """Index species tags of per-group observation sequences by arrival order.

    >>> grouped_from_observations([["x", "x", "y"], ["y", "w"]]).freq.tolist()
    [[2, 1, 0], [0, 1, 1]]
    """
    seen: dict = {}
    labels = []
    for group in groups:
        row = []
        for tag in group:
            if tag not in seen:
                seen[tag] = len(seen)
            row.append(seen[tag])
        labels.append(tuple(row))
    return GroupedSample(tuple(labels))


def enumerate_grouped(sizes: Sequence[int]) -> Iterator[GroupedSample]:
    """Every grouped partition of a sample with the given group sizes.

    Observations are linearized group-major; each set partition of the
    ``n = sum(sizes)`` observations is one outcome.
    """
    n = sum(sizes)
    if n == 0:
        yield GroupedSample(tuple(() for _ in sizes))
        return
    cuts = np.cumsum([0, *sizes])
    for p in enumerate_partitions(n):
        lab = [a - 1 for a in p.labels]
        yield GroupedSample(tuple(tuple(lab[cuts[j]:cuts[j + 1]]) for j in range(len(sizes))))
