"""Fuzzy measures, the data-driven measure of agreement, and the Choquet integral.

Subsets of the ``n`` inputs are bitmasks: bit ``i`` set means input ``i``
(0-based) belongs to the subset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .errors import PermutationMismatch, TooManyInputs, ZeroAgreement
from .geometry import Interval

DEFAULT_MAX_INPUTS = 12


def mask_of(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << i
    return mask


def members(mask: int) -> list:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return out


@dataclass(frozen=True)
class FuzzyMeasure:
    """Set function over all ``2**n`` subsets, stored densely by bitmask."""

    n: int
    values: tuple

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("a fuzzy measure needs at least one input")
        if len(self.values) != 1 << self.n:
            raise ValueError(f"expected {1 << self.n} values for n={self.n}, got {len(self.values)}")

    @classmethod
    def from_dict(cls, n: int, table: dict) -> "FuzzyMeasure":
        """Build from ``{subset: value}``; subsets are masks or iterables of indices.

        Missing subsets default to 0.
        """
        values = [0.0] * (1 << n)
        for key, v in table.items():
            m = key if isinstance(key, int) else mask_of(key)
            values[m] = float(v)
        return cls(n, tuple(values))

    def __getitem__(self, subset) -> float:
        m = subset if isinstance(subset, int) else mask_of(subset)
        return self.values[m]

    def chain(self, permutation: Sequence[int]) -> "ChainMeasure":
        """Restrict to the nested sets induced by ``permutation``."""
        vals = []
        m = 0
        for i in permutation:
            m |= 1 << i
            vals.append(self.values[m])
        return ChainMeasure(tuple(permutation), tuple(vals))

    def to_json(self) -> dict:
        return {"n": self.n, "lattice": {str(m): v for m, v in enumerate(self.values)}}


@dataclass(frozen=True)
class ChainMeasure:
    """Measure values on ``A_1 ⊂ A_2 ⊂ ... ⊂ A_n`` where ``A_i`` holds the first
    ``i`` entries of ``permutation``. ``g(A_0) = 0`` is implicit."""

    permutation: tuple
    values: tuple

    def __post_init__(self):
        if len(self.permutation) != len(self.values):
            raise ValueError("permutation and chain values differ in length")
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError(f"not a permutation of 0..n-1: {self.permutation}")

    @property
    def n(self) -> int:
        return len(self.permutation)

    def masks(self) -> list:
        out = []
        m = 0
        for i in self.permutation:
            m |= 1 << i
            out.append(m)
        return out

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "permutation": list(self.permutation),
            "lattice": {str(m): v for m, v in zip(self.masks(), self.values)},
        }


@dataclass(frozen=True)
class Violation:
    """First failed fuzzy-measure axiom: ``kind`` is normality, range or monotonicity.

    For monotonicity, ``subset`` ⊆ ``superset`` but g(subset) > g(superset).
    """

    kind: str
    subset: int
    superset: Optional[int] = None

    def __str__(self):
        if self.superset is None:
            return f"{self.kind}: g({members(self.subset)})"
        return f"{self.kind}: g({members(self.subset)}) > g({members(self.superset)})"


def validate_measure(g, tol: float = 0.0) -> Optional[Violation]:
    """Return ``None`` if ``g`` is a fuzzy measure, otherwise the first violation.

    Works on a full :class:`FuzzyMeasure` (checks every covering edge of the
    lattice) or on a :class:`ChainMeasure` (checks along the chain).
    """
    if isinstance(g, ChainMeasure):
        prev, prev_mask = 0.0, 0
        for m, v in zip(g.masks(), g.values):
            if v < -tol or v > 1.0 + tol:
                return Violation("range", m)
            if v < prev - tol:
                return Violation("monotonicity", prev_mask, m)
            prev, prev_mask = v, m
        return None

    if abs(g.values[0]) > tol:
        return Violation("normality", 0)
    for m, v in enumerate(g.values):
        if v < -tol or v > 1.0 + tol:
            return Violation("range", m)
    for m, v in enumerate(g.values):
        for i in range(g.n):
            bit = 1 << i
            if not m & bit and v > g.values[m | bit] + tol:
                return Violation("monotonicity", m, m | bit)
    return None


def descending_permutation(h: Sequence[float]) -> tuple:
    """Indices sorting ``h`` in descending order, ties by ascending index."""
    return tuple(sorted(range(len(h)), key=lambda i: (-h[i], i)))


def weighted_overlap(intervals: Sequence[Interval], n: int) -> float:
    """Unnormalized agreement of ``intervals`` among ``n`` total inputs.

    Sum over k >= 2 of (k / n) times the length of the union of all k-wise
    intersections. A point lies in that union exactly when at least k
    intervals cover it, so each elementary segment of depth d contributes
    its length times (2 + 3 + ... + d) / n.
    """
    if len(intervals) < 2:
        return 0.0
    cuts = sorted({iv.lo for iv in intervals} | {iv.hi for iv in intervals})
    parts = []
    for a, b in zip(cuts, cuts[1:]):
        depth = 0
        for iv in intervals:
            if iv.lo <= a and iv.hi >= b:
                depth += 1
        if depth >= 2:
            parts.append((b - a) * (depth * (depth + 1) // 2 - 1))
    return math.fsum(parts) / n


def _check_size(n: int, max_inputs: Optional[int]):
    if max_inputs is not None and n > max_inputs:
        raise TooManyInputs(f"{n} inputs exceeds the cap of {max_inputs}")


def agreement_chain(
    evidence: Sequence[Interval],
    permutation: Optional[Sequence[int]] = None,
    max_inputs: Optional[int] = DEFAULT_MAX_INPUTS,
) -> ChainMeasure:
    """Fuzzy measure of agreement evaluated on the chain induced by ``permutation``.

    Parameters
    ----------
    evidence : sequence of Interval
        One interval per input, ``n >= 2``.
    permutation : sequence of int, optional
        0-based order of inputs. Defaults to descending left endpoints.
    max_inputs : int or None
        Refuse more than this many inputs. ``None`` disables the cap.

    Raises
    ------
    ZeroAgreement
        If no two inputs overlap with positive length.
    """
    n = len(evidence)
    if n < 2:
        raise ValueError("agreement needs at least two inputs")
    _check_size(n, max_inputs)
    if permutation is None:
        permutation = descending_permutation([iv.lo for iv in evidence])
    permutation = tuple(permutation)

    ordered = [evidence[i] for i in permutation]
    total = weighted_overlap(ordered, n)
    if total <= 0.0:
        raise ZeroAgreement("evidence intervals share no overlap")
    values = [0.0]
    for i in range(2, n):
        v = weighted_overlap(ordered[:i], n) / total
        values.append(max(v, values[-1]))
    values.append(1.0)
    return ChainMeasure(permutation, tuple(values[:n]))


def agreement_measure(
    evidence: Sequence[Interval], max_inputs: Optional[int] = DEFAULT_MAX_INPUTS
) -> FuzzyMeasure:
    """The full agreement lattice over every subset of the inputs."""
    n = len(evidence)
    if n < 2:
        raise ValueError("agreement needs at least two inputs")
    _check_size(n, max_inputs)
    total = weighted_overlap(evidence, n)
    if total <= 0.0:
        raise ZeroAgreement("evidence intervals share no overlap")
    values = []
    for m in range(1 << n):
        values.append(weighted_overlap([evidence[i] for i in members(m)], n) / total)
    values[-1] = 1.0
    return FuzzyMeasure(n, tuple(values))


def choquet(h: Sequence[float], chain: ChainMeasure) -> float:
    """Discrete Choquet integral of ``h`` with respect to ``chain``.

    ``chain.permutation`` must order ``h`` from largest to smallest.
    """
    n = chain.n
    if len(h) != n:
        raise ValueError(f"integrand has {len(h)} values, measure has {n} inputs")
    perm = chain.permutation
    for a, b in zip(perm, perm[1:]):
        if h[a] < h[b]:
            raise PermutationMismatch(f"permutation {perm} does not sort {list(h)} descending")
    total = 0.0
    prev = 0.0
    for i, g in zip(perm, chain.values):
        total += h[i] * (g - prev)
        prev = g
    return total


def choquet_interval(
    evidence: Sequence[Interval],
    g_lo: Optional[ChainMeasure] = None,
    g_hi: Optional[ChainMeasure] = None,
    max_inputs: Optional[int] = DEFAULT_MAX_INPUTS,
) -> tuple:
    """Interval-valued Choquet integral, one scalar integral per endpoint.

    Each endpoint gets its own agreement chain over ``evidence``, ordered by
    that endpoint in descending order, unless a chain is passed in.

    Returns
    -------
    (Interval, bool)
        The fused interval and whether its endpoints had to be swapped
        because the lower integral exceeded the upper one.
    """
    lefts = [iv.lo for iv in evidence]
    rights = [iv.hi for iv in evidence]
    if g_lo is None:
        g_lo = agreement_chain(evidence, descending_permutation(lefts), max_inputs)
    if g_hi is None:
        g_hi = agreement_chain(evidence, descending_permutation(rights), max_inputs)
    lo = choquet(lefts, g_lo)
    hi = choquet(rights, g_hi)
    if lo > hi:
        return Interval(hi, lo), True
    return Interval(lo, hi), False
