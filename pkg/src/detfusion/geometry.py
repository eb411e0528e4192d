"""Closed intervals, axis-aligned boxes and the measures defined on them."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union


@dataclass(frozen=True, order=True)
class Interval:
    """Closed interval ``[lo, hi]``; a single point is a valid interval."""

    lo: float
    hi: float

    def __post_init__(self):
        if math.isnan(self.lo) or math.isnan(self.hi):
            raise ValueError("Interval endpoints cannot be NaN")
        if self.lo > self.hi:
            raise ValueError(f"Interval requires lo <= hi, got [{self.lo}, {self.hi}]")

    @property
    def length(self) -> float:
        return self.hi - self.lo

    @property
    def is_empty(self) -> bool:
        return False

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def shift(self, delta: float) -> "Interval":
        return Interval(self.lo + delta, self.hi + delta)

    def __repr__(self):
        return f"[{self.lo:g}, {self.hi:g}]"


class _EmptyInterval:
    """The empty set. Result of intersecting disjoint intervals."""

    __slots__ = ()
    length = 0.0
    is_empty = True

    def __bool__(self):
        return False

    def __repr__(self):
        return "EMPTY"

    def __reduce__(self):
        return "EMPTY"


EMPTY = _EmptyInterval()

MaybeInterval = Union[Interval, _EmptyInterval]


def intersect(a: MaybeInterval, b: MaybeInterval) -> MaybeInterval:
    """Intersection of two intervals, or ``EMPTY`` when they do not meet."""
    if a is EMPTY or b is EMPTY:
        return EMPTY
    lo = max(a.lo, b.lo)
    hi = min(a.hi, b.hi)
    if lo > hi:
        return EMPTY
    return Interval(lo, hi)


@dataclass(frozen=True)
class IntervalUnion:
    """Sorted, pairwise disjoint segments covering a union of intervals.

    Segments that overlap or touch at a single point are merged.
    """

    segments: tuple = ()

    @classmethod
    def of(cls, intervals: Iterable[MaybeInterval]) -> "IntervalUnion":
        items = sorted(iv for iv in intervals if iv is not EMPTY)
        merged: list = []
        for iv in items:
            if merged and iv.lo <= merged[-1].hi:
                if iv.hi > merged[-1].hi:
                    merged[-1] = Interval(merged[-1].lo, iv.hi)
            else:
                merged.append(iv)
        return cls(tuple(merged))

    @property
    def total_length(self) -> float:
        return math.fsum(s.length for s in self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __len__(self):
        return len(self.segments)


def union_length(intervals: Iterable[MaybeInterval]) -> float:
    """Lebesgue measure of the union of ``intervals``."""
    return IntervalUnion.of(intervals).total_length


@dataclass(frozen=True)
class AABB:
    """Axis-aligned box as one interval per image axis.

    ``x`` spans columns, ``y`` spans rows. The list form is
    ``[x_lo, y_lo, x_hi, y_hi]``.
    """

    x: Interval
    y: Interval

    @classmethod
    def from_coords(cls, x_lo, y_lo, x_hi, y_hi) -> "AABB":
        return cls(Interval(float(x_lo), float(x_hi)), Interval(float(y_lo), float(y_hi)))

    @classmethod
    def from_list(cls, coords: Sequence[float]) -> "AABB":
        if len(coords) != 4:
            raise ValueError(f"box needs 4 coordinates, got {len(coords)}")
        return cls.from_coords(*coords)

    def to_list(self) -> list:
        return [self.x.lo, self.y.lo, self.x.hi, self.y.hi]

    @property
    def width(self) -> float:
        return self.x.length

    @property
    def height(self) -> float:
        return self.y.length

    @property
    def area(self) -> float:
        return self.x.length * self.y.length

    @property
    def center(self) -> tuple:
        return (self.x.midpoint, self.y.midpoint)

    def translate(self, dx: float, dy: float) -> "AABB":
        return AABB(self.x.shift(dx), self.y.shift(dy))

    def intersection(self, other: "AABB") -> Optional["AABB"]:
        ix = intersect(self.x, other.x)
        iy = intersect(self.y, other.y)
        if ix is EMPTY or iy is EMPTY:
            return None
        return AABB(ix, iy)

    def __repr__(self):
        return "AABB({:g}, {:g}, {:g}, {:g})".format(*self.to_list())


def iou(a: AABB, b: AABB) -> float:
    """Jaccard index of two boxes; 0 when the union has zero area."""
    inter = a.intersection(b)
    overlap = inter.area if inter is not None else 0.0
    union = a.area + b.area - overlap
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, overlap / union))
