"""End-to-end detection fusion for one image or a manifest of images."""

from __future__ import annotations

import json
import logging
import tempfile
import time
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import augment
from .detector import DetectorBinding, load_truth, open_detector, truth_from_json
from .errors import DetectorError, SchemaError, ZeroAgreement
from .fusion import Detection, FusionMethod, FusionResult, dispatch
from .grouping import DetectionPool, group, object_count
from .measure import agreement_measure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    roster: tuple
    binding: DetectorBinding
    t: int = 3
    fusion_method: FusionMethod = FusionMethod.AABBFI
    grouping_seed: int = 0
    iou_threshold: float = 0.5
    jobs: int = 1
    work_dir: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "roster", tuple(self.roster))
        object.__setattr__(self, "fusion_method", FusionMethod(self.fusion_method))
        if len(self.roster) < 1:
            raise ValueError("the roster needs at least one augmentation")
        if not 1 <= self.t <= len(self.roster):
            raise ValueError(f"t must be in [1, {len(self.roster)}], got {self.t}")
        ids = [s.id for s in self.roster]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate augmentation ids in roster: {ids}")

    @property
    def m(self) -> int:
        return len(self.roster)

    @property
    def augmentation_ids(self) -> list:
        return [s.id for s in self.roster]

    def to_json(self) -> dict:
        return {
            "roster": [s.to_json() for s in self.roster],
            "binding": self.binding.to_json(),
            "t": self.t,
            "fusion_method": str(self.fusion_method),
            "grouping_seed": self.grouping_seed,
            "iou_threshold": self.iou_threshold,
        }


@dataclass
class PipelineReport:
    image_id: str
    objects: list  # FusionResult per object group, in object id order
    raw: dict  # augmentation id -> list of Detection
    groups: list  # per object: [(augmentation id, detection index)]
    tally: dict  # augmentation id -> 1 if it supplied a fused member
    timing: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    failed_augmentations: list = field(default_factory=list)
    lattices: list = field(default_factory=list)

    @property
    def s(self) -> int:
        return len(self.objects)

    def to_json(self, timing: bool = False, groups: bool = False, lattice: bool = False) -> dict:
        out = {
            "image_id": self.image_id,
            "objects": [r.to_json() for r in self.objects],
            "detections": {a: [d.to_json() for d in dets] for a, dets in self.raw.items()},
            "tally": dict(self.tally),
            "warnings": list(self.warnings),
            "failed_augmentations": list(self.failed_augmentations),
        }
        if groups:
            out["groups"] = [
                {"object_id": i + 1, "members": [{"augmentation_id": a, "index": j} for a, j in g]}
                for i, g in enumerate(self.groups)
            ]
        if lattice:
            out["lattices"] = self.lattices
        if timing:
            out["timing_ms"] = dict(self.timing)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "PipelineReport":
        try:
            return cls(
                image_id=str(obj["image_id"]),
                objects=[FusionResult.from_json(o) for o in obj["objects"]],
                raw={a: [Detection.from_json(d) for d in dets] for a, dets in obj.get("detections", {}).items()},
                groups=[[(m["augmentation_id"], m["index"]) for m in g["members"]] for g in obj.get("groups", [])],
                tally=dict(obj.get("tally", {})),
                warnings=list(obj.get("warnings", [])),
                failed_augmentations=list(obj.get("failed_augmentations", [])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed pipeline report: {exc}") from None


def axis_lattices(boxes) -> dict:
    """Full agreement lattices per axis, ``None`` for an axis without overlap."""
    out = {}
    for axis in ("x", "y"):
        try:
            out[axis] = agreement_measure([getattr(b, axis) for b in boxes]).to_json()
        except (ZeroAgreement, ValueError):
            out[axis] = None
    return out


def fuse_pool(pool: DetectionPool, t: int = 3, method=FusionMethod.AABBFI, seed: int = 0,
              iou_threshold: float = 0.5):
    """Group pooled detections and fuse each group.

    Returns ``(results, groups)`` where ``groups`` lists, per object,
    the ``(augmentation index, Detection)`` members.
    """
    s = object_count(pool)
    if s == 0:
        return [], []
    groups = group(pool, s, seed)
    results = [dispatch(g.detections, t, method, iou_threshold) for g in groups]
    return results, groups


def _load(image):
    if image is None:
        return None
    if isinstance(image, (str, Path)):
        return augment.read_image(image)
    return augment.check_image(image)


def _map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def run(image, cfg: PipelineConfig, truth=None, image_id: Optional[str] = None,
        detector=None, lattice: bool = False) -> PipelineReport:
    """Augment, detect, group and fuse one image.

    ``image`` is a path, a uint8 array, or ``None`` when the detector does
    not look at pixels (replay and synthetic bindings). Detector failures
    become warnings and an empty detection list for that augmentation.
    """
    if image_id is None:
        image_id = Path(image).stem if isinstance(image, (str, Path)) else "image"
    own_detector = detector is None
    if own_detector:
        detector = open_detector(cfg.binding)
    tmp = None
    try:
        t0 = time.perf_counter()
        pixels = _load(image)
        paths = {}
        if pixels is not None:
            variants = _map(lambda s: augment.apply(pixels, s), list(cfg.roster), cfg.jobs)
            if cfg.binding.kind == "subprocess":
                if cfg.work_dir is None:
                    tmp = tempfile.TemporaryDirectory(prefix="detfusion-")
                    out_dir = Path(tmp.name)
                else:
                    out_dir = Path(cfg.work_dir)
                    out_dir.mkdir(parents=True, exist_ok=True)
                for spec, img in zip(cfg.roster, variants):
                    p = out_dir / f"{image_id}__{spec.id}.ppm"
                    augment.write_pnm(p, img)
                    paths[spec.id] = p
        elif cfg.binding.kind == "subprocess":
            raise ValueError("a subprocess detector needs an input image")
        t1 = time.perf_counter()

        warnings = []
        failed = []

        def one(aug_id):
            try:
                return detector.detect(image_id=image_id, image_path=paths.get(aug_id),
                                       augmentation_id=aug_id, truth=truth)
            except DetectorError as exc:
                msg = f"{image_id}/{aug_id}: {type(exc).__name__}: {exc}"
                logger.warning(msg)
                warnings.append(msg)
                failed.append(aug_id)
                return []

        ids = cfg.augmentation_ids
        per_aug = _map(one, ids, cfg.jobs)
        t2 = time.perf_counter()

        pool = DetectionPool(per_aug, tuple(ids))
        s = object_count(pool)
        groups = group(pool, s, cfg.grouping_seed) if s else []
        t3 = time.perf_counter()
        results = [dispatch(g.detections, cfg.t, cfg.fusion_method, cfg.iou_threshold) for g in groups]
        t4 = time.perf_counter()
    finally:
        if tmp is not None:
            tmp.cleanup()
        if own_detector:
            detector.close()

    group_refs = [[(ids[a], j) for (a, _), j in zip(g.members, g.indices)] for g in groups]
    supplied = set()
    for res, g in zip(results, groups):
        for m in res.members:
            supplied.add(ids[g.members[m][0]])
    lattices = []
    if lattice:
        for res, g in zip(results, groups):
            fused = res.method is FusionMethod.AABBFI and len(res.members) >= 2
            lattices.append(axis_lattices([g.members[m][1].box for m in res.members]) if fused else None)

    timing = {
        "augment": (t1 - t0) * 1e3,
        "detect": (t2 - t1) * 1e3,
        "group": (t3 - t2) * 1e3,
        "fuse": (t4 - t3) * 1e3,
        "fuse_per_object": (t4 - t3) * 1e3 / len(results) if results else 0.0,
    }
    return PipelineReport(
        image_id=image_id,
        objects=results,
        raw={a: list(d) for a, d in zip(ids, per_aug)},
        groups=group_refs,
        tally={a: int(a in supplied) for a in ids},
        timing=timing,
        warnings=sorted(warnings),
        failed_augmentations=sorted(failed),
        lattices=lattices,
    )


@dataclass
class BatchResult:
    reports: list
    tally: dict
    skipped: list

    def summary(self) -> dict:
        return {"images": len(self.reports), "tally": dict(self.tally), "skipped": list(self.skipped)}


def load_manifest(path) -> list:
    """Manifest entries with paths resolved against the manifest's folder."""
    base = Path(path).parent
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    entries = doc["images"] if isinstance(doc, dict) else doc
    if not isinstance(entries, list):
        raise SchemaError("manifest must be a JSON list of entries")
    out = []
    for e in entries:
        if not isinstance(e, dict) or not ({"image_path", "image_id"} & e.keys()):
            raise SchemaError(f"manifest entry needs image_path or image_id: {e!r}")
        e = dict(e)
        for k in ("image_path", "truth_path"):
            if e.get(k):
                e[k] = str((base / e[k]) if not Path(e[k]).is_absolute() else Path(e[k]))
        out.append(e)
    return out


def batch(manifest, cfg: PipelineConfig, lattice: bool = False) -> BatchResult:
    """Run every manifest entry; unreadable entries are skipped with a warning.

    The tally counts, per augmentation, the images where it supplied at
    least one fused detection.
    """
    if isinstance(manifest, (str, Path)):
        manifest = load_manifest(manifest)
    reports, skipped = [], []
    tally = Counter({a: 0 for a in cfg.augmentation_ids})
    detector = open_detector(cfg.binding)
    try:
        for entry in manifest:
            image_path = entry.get("image_path")
            image_id = str(entry.get("image_id") or Path(image_path).stem)
            try:
                truth = None
                if entry.get("truth_path"):
                    truth = load_truth(entry["truth_path"])
                    truth = truth.get(image_id, next(iter(truth.values())))
                elif "truth" in entry:
                    truth = truth_from_json({"objects": entry["truth"]})[""]
                report = run(image_path, cfg, truth=truth, image_id=image_id, detector=detector,
                             lattice=lattice)
            except (OSError, ValueError) as exc:
                logger.warning("skipping %s: %s", image_id, exc)
                skipped.append(image_id)
                continue
            reports.append(report)
            tally.update(report.tally)
    finally:
        detector.close()
    return BatchResult(reports, dict(tally), skipped)
