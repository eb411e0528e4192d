"""Box fusers and the group-size dispatcher."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, ZeroAgreement
from .geometry import AABB, Interval, iou
from .grouping import majority_label
from .measure import DEFAULT_MAX_INPUTS, agreement_chain, choquet, descending_permutation


class FusionMethod(str, enum.Enum):
    AABBFI = "aabbfi"
    AVERAGE = "average"
    MEDIAN = "median"
    NMS = "nms"
    PASSTHROUGH = "passthrough"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Detection:
    box: AABB
    label: str
    score: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score must lie in [0, 1], got {self.score}")

    @classmethod
    def from_json(cls, obj: dict) -> "Detection":
        return cls(AABB.from_list(obj["bbox"]), str(obj["label"]), float(obj.get("score", 1.0)))

    def to_json(self) -> dict:
        return {"bbox": self.box.to_list(), "label": self.label, "score": self.score}


@dataclass(frozen=True)
class FusionResult:
    """One fused object.

    ``members`` indexes the detections (within the group handed to the
    fuser) that were actually fused; ``score`` is their mean confidence.
    """

    box: Optional[AABB]
    label: str = ""
    method: FusionMethod = FusionMethod.AABBFI
    repaired: bool = False
    fallback: Optional[str] = None
    score: float = 0.0
    members: tuple = field(default=())

    def to_json(self) -> dict:
        return {
            "bbox": self.box.to_list() if self.box is not None else None,
            "label": self.label,
            "score": self.score,
            "method": str(self.method),
            "repaired": self.repaired,
            "fallback": self.fallback,
            "members": list(self.members),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FusionResult":
        bbox = obj.get("bbox")
        return cls(
            box=AABB.from_list(bbox) if bbox is not None else None,
            label=obj.get("label", ""),
            method=FusionMethod(obj.get("method", "aabbfi")),
            repaired=bool(obj.get("repaired", False)),
            fallback=obj.get("fallback"),
            score=float(obj.get("score", 0.0)),
            members=tuple(obj.get("members", ())),
        )


def _fuse_axis(intervals, max_inputs):
    """Returns (interval, repaired, fell_back) for one axis."""
    lefts = [iv.lo for iv in intervals]
    rights = [iv.hi for iv in intervals]
    try:
        g_lo = agreement_chain(intervals, descending_permutation(lefts), max_inputs)
        g_hi = agreement_chain(intervals, descending_permutation(rights), max_inputs)
    except ZeroAgreement:
        return Interval(float(np.mean(lefts)), float(np.mean(rights))), False, True
    lo = choquet(lefts, g_lo)
    hi = choquet(rights, g_hi)
    if lo > hi:
        return Interval(hi, lo), True, False
    return Interval(lo, hi), False, False


def fuse_aabbfi(boxes: Sequence[AABB], max_inputs: Optional[int] = DEFAULT_MAX_INPUTS) -> FusionResult:
    """Fuse boxes with four Choquet integrals, one per box edge.

    Each axis builds its agreement measure from that axis's intervals. An
    axis whose intervals are pairwise disjoint falls back to the mean of its
    endpoints; an axis whose fused endpoints come out inverted is swapped.
    """
    if len(boxes) < 2:
        raise EmptyInput(f"AABBFI needs at least 2 boxes, got {len(boxes)}")
    x, rx, fx = _fuse_axis([b.x for b in boxes], max_inputs)
    y, ry, fy = _fuse_axis([b.y for b in boxes], max_inputs)
    failed = [axis for axis, flag in (("x", fx), ("y", fy)) if flag]
    fallback = "zero_agreement:" + ",".join(failed) if failed else None
    return FusionResult(
        AABB(x, y),
        method=FusionMethod.AABBFI,
        repaired=rx or ry,
        fallback=fallback,
        members=tuple(range(len(boxes))),
    )


def _coords(boxes: Sequence[AABB]) -> np.ndarray:
    if len(boxes) == 0:
        raise EmptyInput("no boxes to fuse")
    return np.array([b.to_list() for b in boxes], dtype=float)


def fuse_average(boxes: Sequence[AABB]) -> FusionResult:
    c = _coords(boxes).mean(axis=0)
    return FusionResult(AABB.from_list(c.tolist()), method=FusionMethod.AVERAGE,
                        members=tuple(range(len(boxes))))


def fuse_median(boxes: Sequence[AABB]) -> FusionResult:
    c = np.median(_coords(boxes), axis=0)
    return FusionResult(AABB.from_list(c.tolist()), method=FusionMethod.MEDIAN,
                        members=tuple(range(len(boxes))))


def nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> list:
    """Greedy non-maximum suppression. Returns kept indices, best first.

    Equal scores keep the lower index first.
    """
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    keep = []
    suppressed = set()
    for pos, i in enumerate(order):
        if i in suppressed:
            continue
        keep.append(i)
        for j in order[pos + 1:]:
            if j not in suppressed and iou(dets[i].box, dets[j].box) > iou_threshold:
                suppressed.add(j)
    return keep


def fuse_nms(dets: Sequence[Detection], iou_threshold: float = 0.5) -> FusionResult:
    """Representative box after greedy NMS: the top-scoring survivor."""
    if len(dets) == 0:
        raise EmptyInput("no detections for NMS")
    best = nms(dets, iou_threshold)[0]
    return FusionResult(dets[best].box, label=dets[best].label, method=FusionMethod.NMS,
                        score=dets[best].score, members=(best,))


def top_t(dets: Sequence[Detection], t: int) -> list:
    """Indices of the ``t`` highest scores; ties keep the lower index."""
    return sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))[:t]


def dispatch(
    group: Sequence[Detection],
    t: int = 3,
    method=FusionMethod.AABBFI,
    iou_threshold: float = 0.5,
    max_inputs: Optional[int] = DEFAULT_MAX_INPUTS,
) -> FusionResult:
    """Fuse one object group according to its size N.

    N >= 3 fuses the top ``t`` detections by score with ``method``, N == 2
    averages, N == 1 passes the detection through and N == 0 yields no box.
    The label is the group's majority label.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    method = FusionMethod(method)
    n = len(group)
    if n == 0:
        return FusionResult(None, method=FusionMethod.PASSTHROUGH)
    label = majority_label(group)
    if n == 1:
        d = group[0]
        return FusionResult(d.box, label, FusionMethod.PASSTHROUGH, score=d.score, members=(0,))
    if n == 2:
        res = fuse_average([d.box for d in group])
        chosen = [0, 1]
    else:
        chosen = top_t(group, t)
        picked = [group[i] for i in chosen]
        boxes = [d.box for d in picked]
        if method is FusionMethod.AABBFI and len(boxes) >= 2:
            res = fuse_aabbfi(boxes, max_inputs)
        elif method is FusionMethod.AABBFI or method is FusionMethod.PASSTHROUGH:
            res = FusionResult(boxes[0], method=FusionMethod.PASSTHROUGH, members=(0,))
        elif method is FusionMethod.AVERAGE:
            res = fuse_average(boxes)
        elif method is FusionMethod.MEDIAN:
            res = fuse_median(boxes)
        else:
            res = fuse_nms(picked, iou_threshold)
        chosen = [chosen[i] for i in res.members]
    score = float(np.mean([group[i].score for i in chosen]))
    return replace(res, label=label, score=score, members=tuple(chosen))
