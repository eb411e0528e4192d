"""Localization and detection metrics for fused results."""

from __future__ import annotations

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ClassMismatch, NoRecords
from .fusion import Detection, FusionMethod
from .geometry import AABB, iou
from .grouping import DetectionPool
from .pipeline import PipelineConfig, fuse_pool, run

RECALL_POINTS = tuple(i / 10 for i in range(11))
BASELINE = "baseline"
UNMATCHED_NOTE = "unmatched ground truth counts as IoU 0 in average_iou"


@dataclass
class EvalRecord:
    """Per-image pairing of predictions with ground truth.

    ``ious[i]`` is the IoU of truth ``i`` with its one-to-one partner, or 0
    when it has none; ``matched[i]`` says whether that IoU clears the match
    threshold.
    """

    image_id: str
    predictions: list  # Detection
    truths: list  # (AABB, label)
    ious: list = field(default_factory=list)
    matched: list = field(default_factory=list)
    method: str = ""


def pair_greedy(pred_boxes: Sequence[AABB], truth_boxes: Sequence[AABB]) -> list:
    """One-to-one pairing by descending IoU. Returns ``(truth, pred, iou)`` triples."""
    cand = []
    for ti, t in enumerate(truth_boxes):
        for pi, p in enumerate(pred_boxes):
            v = iou(p, t)
            if v > 0:
                cand.append((-v, ti, pi))
    cand.sort()
    used_t, used_p, out = set(), set(), []
    for v, ti, pi in cand:
        if ti in used_t or pi in used_p:
            continue
        used_t.add(ti)
        used_p.add(pi)
        out.append((ti, pi, -v))
    return out


def make_record(image_id: str, predictions: Sequence[Detection], truths, method: str = "",
                match_threshold: float = 0.5) -> EvalRecord:
    """Pair predictions with truths, ignoring labels (a localization metric)."""
    truths = list(truths)
    ious = [0.0] * len(truths)
    for ti, _, v in pair_greedy([p.box for p in predictions], [b for b, _ in truths]):
        ious[ti] = v
    return EvalRecord(image_id, list(predictions), truths, ious,
                      [v >= match_threshold and v > 0 for v in ious], method)


def average_iou(records: Sequence[EvalRecord]) -> float:
    values = [v for r in records for v in r.ious]
    if not values:
        raise NoRecords("no ground truth to score")
    return float(np.mean(values))


def detection_count(records: Sequence[EvalRecord], iou_threshold: float = 0.5) -> tuple:
    """``(detected, total)`` truths whose paired IoU reaches ``iou_threshold``."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError("iou_threshold must lie in (0, 1)")
    total = sum(len(r.ious) for r in records)
    detected = sum(1 for r in records for v in r.ious if v >= iou_threshold and v > 0)
    return detected, total


def format_count(count: tuple) -> str:
    return f"{count[0]}/{count[1]}"


@dataclass
class PRCurve:
    points: dict  # class -> [(recall, precision)] in rank order
    ap: dict  # class -> 11-point AP
    map: float

    def to_json(self) -> dict:
        return {
            "map": self.map,
            "ap": dict(self.ap),
            "points": {c: [list(p) for p in pts] for c, pts in self.points.items()},
        }


def eleven_point_ap(recall: Sequence[float], precision: Sequence[float]) -> float:
    recall = np.asarray(recall, dtype=float)
    precision = np.asarray(precision, dtype=float)
    total = 0.0
    for t in RECALL_POINTS:
        mask = recall >= t
        total += precision[mask].max() if mask.any() else 0.0
    return total / len(RECALL_POINTS)


def _rank_key(item):
    image_id, det = item
    return (-det.score, image_id, tuple(det.box.to_list()))


def mean_ap(predictions: dict, truths: dict, score_threshold: float = 0.25,
            iou_threshold: float = 0.5, classes: Optional[Sequence[str]] = None) -> PRCurve:
    """VOC2007 11-point mean average precision.

    ``predictions`` maps image id to a list of :class:`Detection`;
    ``truths`` maps image id to ``(AABB, label)`` pairs. Detections scoring
    below ``score_threshold`` are dropped. Each class is ranked by score and
    a detection is a true positive when its best same-class truth in that
    image has IoU >= ``iou_threshold`` and is not already taken.
    """
    truth_labels = {lab for objs in truths.values() for _, lab in objs}
    if classes is not None:
        allowed = set(classes)
        pred_labels = {d.label for dets in predictions.values() for d in dets}
        extra = (truth_labels | pred_labels) - allowed
        if extra:
            raise ClassMismatch(f"labels outside the class list: {sorted(extra)}")
        evaluated = sorted(c for c in allowed if c in truth_labels)
    else:
        evaluated = sorted(truth_labels)
    if not evaluated:
        raise NoRecords("no ground truth objects")

    points, ap = {}, {}
    for cls in evaluated:
        gt = {img: [b for b, lab in objs if lab == cls] for img, objs in truths.items()}
        npos = sum(len(v) for v in gt.values())
        taken = {img: [False] * len(v) for img, v in gt.items()}
        ranked = sorted(
            ((img, d) for img, dets in predictions.items() for d in dets
             if d.label == cls and d.score >= score_threshold),
            key=_rank_key,
        )
        tp = fp = 0
        curve = []
        for img, d in ranked:
            boxes = gt.get(img, [])
            best, best_j = 0.0, -1
            for j, b in enumerate(boxes):
                v = iou(d.box, b)
                if v > best:
                    best, best_j = v, j
            if best_j >= 0 and best >= iou_threshold and not taken[img][best_j]:
                taken[img][best_j] = True
                tp += 1
            else:
                fp += 1
            curve.append((tp / npos, tp / (tp + fp)))
        points[cls] = curve
        ap[cls] = float(eleven_point_ap([r for r, _ in curve], [p for _, p in curve])) if curve else 0.0
    return PRCurve(points, ap, float(np.mean([ap[c] for c in evaluated])))


def read_voc_annotation(path) -> tuple:
    """Minimal PASCAL VOC XML reader: ``(image_id, [(AABB, label)])``."""
    root = ET.parse(path).getroot()
    filename = root.findtext("filename") or Path(path).name
    objects = []
    for obj in root.iter("object"):
        bb = obj.find("bndbox")
        coords = [float(bb.findtext(k)) for k in ("xmin", "ymin", "xmax", "ymax")]
        objects.append((AABB.from_list(coords), obj.findtext("name").strip()))
    return Path(filename).stem, objects


@dataclass
class ComparisonTable:
    rows: list
    note: str = UNMATCHED_NOTE

    def to_json(self) -> dict:
        return {"note": self.note, "rows": list(self.rows)}

    def to_text(self) -> str:
        header = f"{'dataset':<16}{'method':<12}{'avg IoU':>10}{'detection':>14}{'mAP':>10}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            lines.append(
                f"{r['dataset']:<16}{r['method']:<12}{r['average_iou']:>10.4f}"
                f"{r['detection']:>14}{r['map']:>10.4f}"
            )
        lines.append(f"({self.note})")
        return "\n".join(lines)


def compare_methods(dataset: Sequence[dict], cfg: PipelineConfig, methods: Sequence[str],
                    name: str = "dataset", match_threshold: float = 0.5,
                    score_threshold: float = 0.25) -> ComparisonTable:
    """Score several fusion methods on the same detections.

    ``dataset`` entries hold ``image_id``, ``truth`` (list of ``(AABB, label)``)
    and optionally ``image``. Detection runs once per image; each method then
    re-fuses the same pool. ``"baseline"`` scores the identity augmentation's
    raw detections without fusion.
    """
    if not methods:
        raise ValueError("compare_methods needs at least one method")
    ids = cfg.augmentation_ids
    if BASELINE in methods and "identity" not in ids:
        raise ValueError("the baseline row needs the identity augmentation in the roster")
    reports = [run(s.get("image"), cfg, truth=s["truth"], image_id=str(s["image_id"])) for s in dataset]
    truths = {str(s["image_id"]): list(s["truth"]) for s in dataset}

    rows = []
    for method in methods:
        preds = {}
        for rep in reports:
            if method == BASELINE:
                preds[rep.image_id] = list(rep.raw["identity"])
                continue
            pool = DetectionPool([rep.raw[a] for a in ids], tuple(ids))
            results, _ = fuse_pool(pool, cfg.t, FusionMethod(method), cfg.grouping_seed, cfg.iou_threshold)
            preds[rep.image_id] = [Detection(r.box, r.label, r.score) for r in results if r.box is not None]
        records = [make_record(i, preds[i], truths[i], method, match_threshold) for i in truths]
        count = detection_count(records, match_threshold)
        rows.append({
            "dataset": name,
            "method": str(method),
            "average_iou": average_iou(records),
            "detected": count[0],
            "total": count[1],
            "detection": format_count(count),
            "map": mean_ap(preds, truths, score_threshold, match_threshold).map,
        })
    return ComparisonTable(rows)
