"""Command-line entry point.

Exit codes: 0 ok, 1 golden or assertion failure, 2 invalid input,
3 detector failure (every augmentation failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import augment
from .augment import AugmentationSpec
from .detector import DetectorBinding, dumps, load_replay, load_truth
from .errors import DetectorError, SchemaError
from .evaluation import (
    UNMATCHED_NOTE,
    average_iou,
    compare_methods,
    detection_count,
    format_count,
    make_record,
    mean_ap,
    read_voc_annotation,
)
from .fusion import Detection, FusionMethod, fuse_average, fuse_median
from .geometry import AABB
from .grouping import DetectionPool
from .pipeline import PipelineConfig, PipelineReport, axis_lattices, batch, fuse_pool, load_manifest

logger = logging.getLogger("detfusion")

EXIT_OK, EXIT_GOLDEN, EXIT_INPUT, EXIT_DETECTOR = 0, 1, 2, 3
DEFAULT_SEED = 0

DEMO_EXAMPLES = [
    {
        "name": "three similar boxes",
        "boxes": [[1, 1, 4, 6], [2, 2, 5, 7], [3, 3, 6, 8]],
        "expected": {"aabbfi": [1.44, 1.42, 4.44, 6.42], "average": [2, 2, 5, 7], "median": [2, 2, 5, 7]},
    },
    {
        "name": "one outlier",
        "boxes": [[1, 1, 4, 6], [2, 2, 5, 7], [7, 4, 10, 9]],
        "expected": {"aabbfi": [1, 1.38, 4, 6.38], "average": [3.33, 2.33, 6.33, 7.33], "median": [2, 2, 5, 7]},
    },
    {
        "name": "one extreme outlier",
        "boxes": [[1, 1, 4, 6], [2, 2, 5, 7], [7, 8, 8, 9]],
        "expected": {"aabbfi": [1, 1, 4, 6], "average": [3.33, 3.66, 5.67, 7.33], "median": [2, 2, 5, 7]},
    },
]
DEMO_TOLERANCE = 0.01


class InputError(Exception):
    pass


def _write(doc, out, pretty_text=None):
    text = pretty_text if pretty_text is not None else dumps(doc)
    if out:
        Path(out).write_text(text if text.endswith("\n") else text + "\n")
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def parse_roster(text, seed):
    """``all``, an integer M, or comma-separated augmentation ids."""
    if text is None or text == "all":
        return augment.roster(None, seed=seed)
    if text.isdigit():
        return augment.roster(int(text), seed=seed)
    return [AugmentationSpec.parse(t.strip(), seed=seed + i) for i, t in enumerate(text.split(",")) if t.strip()]


# --- demo ---------------------------------------------------------------------

def cmd_demo(args) -> int:
    from .fusion import fuse_aabbfi

    out, ok = [], True
    for ex in DEMO_EXAMPLES:
        boxes = [AABB.from_list(b) for b in ex["boxes"]]
        got = {
            "aabbfi": fuse_aabbfi(boxes).box.to_list(),
            "average": fuse_average(boxes).box.to_list(),
            "median": fuse_median(boxes).box.to_list(),
        }
        checks = {}
        for method, want in ex["expected"].items():
            tol = 0.0 if method == "median" else DEMO_TOLERANCE
            checks[method] = all(abs(g - w) <= tol + 1e-12 for g, w in zip(got[method], want))
        ok &= all(checks.values())
        out.append({"name": ex["name"], "inputs": ex["boxes"], "lattices": axis_lattices(boxes),
                    "fused": got, "expected": ex["expected"], "passed": checks})
    doc = {"examples": out, "passed": ok}
    if args.pretty:
        lines = []
        for e in out:
            lines.append(f"{e['name']}: inputs {e['inputs']}")
            for axis in ("x", "y"):
                lat = e["lattices"][axis]
                vals = "none" if lat is None else ", ".join(
                    f"{k}:{v:.3f}" for k, v in sorted(lat["lattice"].items(), key=lambda kv: int(kv[0])))
                lines.append(f"  {axis} lattice (bitmask:g) {vals}")
            for m, box in e["fused"].items():
                mark = "ok" if e["passed"][m] else "MISMATCH"
                lines.append(f"  {m:<8} [{', '.join(f'{v:.2f}' for v in box)}]  {mark}")
        lines.append("all golden checks passed" if ok else "golden check FAILED")
        _write(doc, args.out, "\n".join(lines))
    else:
        _write(doc, args.out)
    return EXIT_OK if ok else EXIT_GOLDEN


# --- augment ------------------------------------------------------------------

def cmd_augment(args) -> int:
    try:
        img = augment.read_image(args.image)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read {args.image}: {exc}") from None
    specs = parse_roster(args.roster, args.seed)
    out_dir = Path(args.out)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = Path(args.image).stem
        entries = []
        for spec in specs:
            path = out_dir / f"{stem}__{spec.id}.ppm"
            augment.write_pnm(path, augment.apply(img, spec))
            entries.append({"augmentation_id": spec.id, "spec": spec.to_json(), "path": path.name})
        (out_dir / f"{stem}__manifest.json").write_text(
            dumps({"source": Path(args.image).name, "augmentations": entries}))
    except OSError as exc:
        raise InputError(str(exc)) from None
    return EXIT_OK


# --- fuse ---------------------------------------------------------------------

def cmd_fuse(args) -> int:
    replay = load_replay(args.detections)
    images = []
    for image_id, augs in replay.items():
        ids = list(augs)
        pool = DetectionPool([augs[a] for a in ids], tuple(ids))
        results, groups = fuse_pool(pool, args.top_t, args.method, args.seed, args.iou_threshold)
        entry = {"image_id": image_id, "objects": [r.to_json() for r in results]}
        if args.dump_groups:
            entry["groups"] = [
                {"object_id": g.object_id,
                 "members": [{"augmentation_id": ids[a], "index": j} for (a, _), j in zip(g.members, g.indices)]}
                for g in groups
            ]
        if args.dump_lattice:
            entry["lattices"] = [
                axis_lattices([g.detections[m].box for m in r.members])
                if r.method is FusionMethod.AABBFI and len(r.members) >= 2 else None
                for r, g in zip(results, groups)
            ]
        images.append(entry)
    _write({"images": images}, args.out)
    return EXIT_OK


# --- pipeline -----------------------------------------------------------------

def _binding(args) -> DetectorBinding:
    if not args.detector:
        raise InputError("--detector is required")
    try:
        b = DetectorBinding.parse(args.detector, timeout=args.timeout, workers=max(1, args.jobs),
                                  class_list=tuple(args.classes.split(",")) if args.classes else ())
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise InputError(f"bad detector spec: {exc}") from None
    if b.kind == "synthetic" and args.seed is not None:
        b = replace(b, model=replace(b.model, seed=args.seed))
    return b


def _config(args) -> PipelineConfig:
    settings = {}
    if args.config:
        settings = json.loads(Path(args.config).read_text())
    roster = parse_roster(args.roster or settings.get("roster"), args.seed)
    t = args.top_t if args.top_t is not None else settings.get("t", 3)
    t = min(int(t), len(roster))
    method = args.method or settings.get("fusion_method", "aabbfi")
    if args.detector is None and "detector" in settings:
        args.detector = settings["detector"]
    return PipelineConfig(roster, _binding(args), t=t, fusion_method=method,
                          grouping_seed=args.seed, iou_threshold=args.iou_threshold, jobs=args.jobs,
                          work_dir=settings.get("work_dir"))


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    result = batch(load_manifest(args.manifest), cfg, lattice=args.dump_lattice)
    if not result.reports:
        raise InputError("no manifest entry could be processed")
    docs = [r.to_json(timing=args.timing, groups=args.dump_groups, lattice=args.dump_lattice)
            for r in result.reports]
    summary = result.summary()
    summary["config"] = cfg.to_json()
    if args.out and Path(args.out).suffix != ".json":
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        for d in docs:
            (out_dir / f"{d['image_id']}.json").write_text(dumps(d))
        (out_dir / "summary.json").write_text(dumps(summary))
    else:
        _write({"reports": docs, "summary": summary}, args.out)
    if all(len(r.failed_augmentations) == cfg.m for r in result.reports):
        logger.error("every augmentation failed for every image")
        return EXIT_DETECTOR
    return EXIT_OK


# --- eval / compare -----------------------------------------------------------

def _load_reports(path) -> list:
    p = Path(path)
    if p.is_dir():
        docs = [json.loads(f.read_text()) for f in sorted(p.glob("*.json")) if f.name != "summary.json"]
    else:
        doc = json.loads(p.read_text())
        docs = doc["reports"] if isinstance(doc, dict) and "reports" in doc else (
            doc if isinstance(doc, list) else [doc])
    return [PipelineReport.from_json(d) for d in docs]


def _load_truths(path) -> dict:
    p = Path(path)
    if p.is_dir():
        out = {}
        for f in sorted(p.iterdir()):
            if f.suffix == ".xml":
                image_id, objs = read_voc_annotation(f)
                out[image_id] = objs
            elif f.suffix == ".json":
                for k, v in load_truth(f).items():
                    out[k or f.stem] = v
        return out
    if p.suffix == ".xml":
        image_id, objs = read_voc_annotation(p)
        return {image_id: objs}
    return load_truth(p)


def cmd_eval(args) -> int:
    try:
        reports = _load_reports(args.reports)
        truths = _load_truths(args.truths)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(str(exc)) from None
    if not reports:
        raise InputError("no reports to evaluate")
    preds, records = {}, []
    for rep in reports:
        if rep.image_id not in truths:
            raise InputError(f"no ground truth for image {rep.image_id!r}")
        preds[rep.image_id] = [Detection(o.box, o.label, o.score) for o in rep.objects if o.box is not None]
        records.append(make_record(rep.image_id, preds[rep.image_id], truths[rep.image_id],
                                   match_threshold=args.iou_threshold))
    used = {k: truths[k] for k in preds}
    count = detection_count(records, args.iou_threshold)
    curve = mean_ap(preds, used, args.score_threshold, args.iou_threshold)
    doc = {
        "note": UNMATCHED_NOTE,
        "images": len(records),
        "average_iou": average_iou(records),
        "detection": format_count(count),
        "detected": count[0],
        "total": count[1],
        "map": curve.map,
        "ap": curve.ap,
    }
    if args.pretty:
        text = "\n".join(f"{k:<12} {v}" for k, v in doc.items())
        _write(doc, args.out, text)
    else:
        _write(doc, args.out)
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _config(args)
    dataset = []
    for e in load_manifest(args.manifest):
        image_id = str(e.get("image_id") or Path(e["image_path"]).stem)
        if not e.get("truth_path"):
            raise InputError(f"{image_id}: compare needs truth_path for every entry")
        truth = load_truth(e["truth_path"])
        dataset.append({"image_id": image_id, "image": e.get("image_path"),
                        "truth": truth.get(image_id, next(iter(truth.values())))})
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    table = compare_methods(dataset, cfg, methods, name=args.name, match_threshold=args.iou_threshold,
                            score_threshold=args.score_threshold)
    _write(table.to_json(), args.out, table.to_text() if args.pretty else None)
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def _common(p, pipeline=False):
    p.add_argument("--seed", type=int, default=DEFAULT_SEED, help="seed for noise, k-means and synthetic detectors")
    p.add_argument("--out", help="output file (default stdout)")
    p.add_argument("--pretty", action="store_true", help="fixed-width text instead of JSON")
    if pipeline:
        p.add_argument("--roster", help="'all', a count M, or comma-separated augmentation ids")
        p.add_argument("--top-t", type=int, default=None)
        p.add_argument("--method", choices=[m.value for m in FusionMethod if m is not FusionMethod.PASSTHROUGH])
        p.add_argument("--detector", help="replay:<path> | cmd:<argv> | synthetic:<model.json>")
        p.add_argument("--classes", help="comma-separated class list accepted from the detector")
        p.add_argument("--timeout", type=float, default=30.0, help="per-request detector timeout (s)")
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--config", help="run-config JSON with roster, t, fusion_method, detector")
        p.add_argument("--iou-threshold", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="detfusion", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("demo", help="reproduce the three worked fusion examples")
    _common(p)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("augment", help="write the augmented variants of an image")
    p.add_argument("image")
    p.add_argument("--roster", default="all")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fuse", help="group and fuse detections from a replay file")
    p.add_argument("detections")
    _common(p)
    p.add_argument("--method", default="aabbfi",
                   choices=[m.value for m in FusionMethod if m is not FusionMethod.PASSTHROUGH])
    p.add_argument("--top-t", type=int, default=3)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--dump-lattice", action="store_true")
    p.add_argument("--dump-groups", action="store_true")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("pipeline", help="run augment, detect, group and fuse over a manifest")
    p.add_argument("manifest")
    _common(p, pipeline=True)
    p.add_argument("--dump-lattice", action="store_true")
    p.add_argument("--dump-groups", action="store_true")
    p.add_argument("--timing", action="store_true", help="include per-stage wall time in reports")
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("eval", help="score pipeline reports against ground truth")
    p.add_argument("reports")
    p.add_argument("truths")
    _common(p)
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.25)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="table of IoU, detections and mAP per fusion method")
    p.add_argument("manifest")
    _common(p, pipeline=True)
    p.add_argument("--methods", default="baseline,nms,average,median,aabbfi")
    p.add_argument("--name", default="dataset")
    p.add_argument("--score-threshold", type=float, default=0.25)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = os.environ.get("FUSE_LOG", "").upper() or ("DEBUG" if args.verbose > 1 else
                                                      "INFO" if args.verbose else "WARNING")
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except DetectorError as exc:
        logger.error("%s", exc)
        return EXIT_DETECTOR
    except (InputError, SchemaError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        logger.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
