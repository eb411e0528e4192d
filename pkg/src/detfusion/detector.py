"""Detector backends: replayed results, an external process, or synthetic noise.

The external process speaks newline-delimited JSON. Each request line is::

    {"image_path": "...", "augmentation_id": "...", "request_id": 7}

and each response line is::

    {"request_id": 7, "detections": [{"bbox": [x1, y1, x2, y2], "label": "cone", "score": 0.9}]}
"""

from __future__ import annotations

import itertools
import json
import logging
import math
import queue
import shlex
import subprocess
import sys
import threading
import zlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    DetectorError,
    DetectorProtocolError,
    DetectorTimeout,
    MissingReplayEntry,
    SchemaError,
)
from .fusion import Detection
from .geometry import AABB

logger = logging.getLogger(__name__)

KINDS = ("replay", "subprocess", "synthetic")


@dataclass(frozen=True)
class SyntheticModel:
    """Noise model turning ground-truth boxes into fake detections."""

    center_jitter_sd: float = 2.0
    scale_jitter_sd: float = 0.05
    outlier_rate: float = 0.0
    outlier_shift: float = 0.0
    miss_rate: float = 0.0
    score_base: float = 0.8
    score_sd: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("outlier_rate", "miss_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        for name in ("center_jitter_sd", "scale_jitter_sd", "score_sd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def from_json(cls, obj: dict) -> "SyntheticModel":
        obj = dict(obj)
        if "score_model" in obj:
            obj["score_base"], obj["score_sd"] = obj.pop("score_model")
        return cls(**obj)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DetectorBinding:
    """How to obtain detections.

    ``source`` is the replay file, the command line, or the synthetic model
    file. An empty ``class_list`` accepts any label.
    """

    kind: str
    source: str = ""
    class_list: tuple = ()
    timeout: float = 30.0
    model: Optional[SyntheticModel] = None
    workers: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"detector kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "subprocess" and self.timeout <= 0:
            raise ValueError("subprocess timeout must be positive")
        object.__setattr__(self, "class_list", tuple(self.class_list))

    @classmethod
    def parse(cls, text: str, **kwargs) -> "DetectorBinding":
        """Parse ``replay:<path>``, ``cmd:<argv>`` or ``synthetic:<model.json>``."""
        prefix, sep, rest = text.partition(":")
        if not sep:
            raise ValueError(f"detector must look like kind:source, got {text!r}")
        if prefix == "replay":
            return cls("replay", rest, **kwargs)
        if prefix == "cmd":
            return cls("subprocess", rest, **kwargs)
        if prefix == "synthetic":
            model = SyntheticModel.from_json(json.loads(Path(rest).read_text())) if rest else SyntheticModel()
            return cls("synthetic", rest, model=model, **kwargs)
        raise ValueError(f"unknown detector kind {prefix!r}")

    def to_json(self) -> dict:
        out = {"kind": self.kind, "source": self.source, "class_list": list(self.class_list),
               "timeout": self.timeout}
        if self.model is not None:
            out["model"] = self.model.to_json()
        return out


def _check_labels(dets, class_list):
    if class_list:
        for d in dets:
            if d.label not in class_list:
                raise DetectorProtocolError(f"label {d.label!r} not in class list {list(class_list)}")
    return dets


def parse_detections(items) -> list:
    if not isinstance(items, list):
        raise SchemaError("detections must be a list")
    out = []
    for obj in items:
        try:
            out.append(Detection.from_json(obj))
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed detection {obj!r}: {exc}") from None
    return out


# --- replay -----------------------------------------------------------------

def load_replay(path) -> dict:
    """Read a replay file into ``{image_id: {augmentation_id: [Detection]}}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None
    return replay_from_json(doc)


def replay_from_json(doc) -> dict:
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise SchemaError('replay document needs an "images" list')
    out = {}
    for img in doc["images"]:
        try:
            image_id = str(img["image_id"])
            augs = {}
            for aug in img["augmentations"]:
                augs[str(aug["augmentation_id"])] = parse_detections(aug["detections"])
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed replay entry: {exc}") from None
        out[image_id] = augs
    return out


def replay_to_json(replay: dict) -> dict:
    return {
        "images": [
            {
                "image_id": image_id,
                "augmentations": [
                    {"augmentation_id": aug_id, "detections": [d.to_json() for d in dets]}
                    for aug_id, dets in augs.items()
                ],
            }
            for image_id, augs in replay.items()
        ]
    }


def dumps(doc) -> str:
    """Canonical JSON text used for every file this package writes."""
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# --- ground truth -------------------------------------------------------------

def truth_from_json(doc) -> dict:
    """``{image_id: [(AABB, label)]}`` from a single-image or multi-image document.

    Single image: ``{"image_id": ..., "objects": [{"bbox": [...], "label": ...}]}``.
    Multi image: ``{"images": [<single image>, ...]}``.
    """
    entries = doc["images"] if isinstance(doc, dict) and "images" in doc else [doc]
    out = {}
    for e in entries:
        try:
            out[str(e.get("image_id", ""))] = [
                (AABB.from_list(o["bbox"]), str(o["label"])) for o in e["objects"]
            ]
        except (KeyError, TypeError, AttributeError, ValueError) as exc:
            raise SchemaError(f"malformed ground truth: {exc}") from None
    return out


def load_truth(path) -> dict:
    try:
        return truth_from_json(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def truth_to_json(image_id: str, truth) -> dict:
    return {"image_id": image_id, "objects": [{"bbox": b.to_list(), "label": lab} for b, lab in truth]}


# --- synthetic ----------------------------------------------------------------

def _key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def synthesize(model: SyntheticModel, truth, augmentation_id: str, image_key: str = "") -> list:
    """Noisy detections of ``truth`` as seen through one augmentation.

    Deterministic in ``(model.seed, image_key, augmentation_id)``. Every
    truth box consumes the same random draws whether or not it is missed,
    so changing one rate does not reshuffle the rest of the scene.
    """
    rng = np.random.default_rng([model.seed, _key(image_key), _key(str(augmentation_id))])
    out = []
    for box, label in truth:
        u_miss, u_out, theta = rng.random(3)
        dx, dy, sx, sy, zs = rng.standard_normal(5)
        if u_miss < model.miss_rate:
            continue
        cx, cy = box.center
        cx += dx * model.center_jitter_sd
        cy += dy * model.center_jitter_sd
        w = box.width * math.exp(sx * model.scale_jitter_sd)
        h = box.height * math.exp(sy * model.scale_jitter_sd)
        if u_out < model.outlier_rate:
            angle = 2.0 * math.pi * theta
            cx += model.outlier_shift * math.cos(angle)
            cy += model.outlier_shift * math.sin(angle)
        score = min(1.0, max(0.0, model.score_base + zs * model.score_sd))
        out.append(Detection(AABB.from_coords(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2), label, score))
    return out


# --- subprocess ---------------------------------------------------------------

class _Child:
    """One detector process; requests are serialized under a lock."""

    def __init__(self, argv, timeout):
        self.argv = argv
        self.timeout = timeout
        self.lock = threading.Lock()
        self.proc = None
        self.lines = None

    def _start(self):
        self.proc = subprocess.Popen(
            self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
        )
        self.lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self.proc, self.lines), daemon=True).start()

    @staticmethod
    def _pump(proc, lines):
        for line in proc.stdout:
            lines.put(line)
        lines.put(None)

    def kill(self):
        if self.proc is not None:
            self.proc.kill()
            self.proc.wait()
            self.proc = None

    def close(self):
        if self.proc is not None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=1.0)
            except (OSError, subprocess.TimeoutExpired):
                pass
            self.kill()

    def request(self, payload: dict) -> dict:
        with self.lock:
            if self.proc is None or self.proc.poll() is not None:
                self._start()
            try:
                self.proc.stdin.write(json.dumps(payload) + "\n")
                self.proc.stdin.flush()
            except OSError as exc:
                self.kill()
                raise DetectorProtocolError(f"cannot write to detector: {exc}") from None
            while True:
                try:
                    line = self.lines.get(timeout=self.timeout)
                except queue.Empty:
                    self.kill()
                    raise DetectorTimeout(f"no response within {self.timeout}s") from None
                if line is None:
                    self.kill()
                    raise DetectorProtocolError("detector process exited")
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    raise DetectorProtocolError(f"not JSON: {line[:200]!r}") from None
                if not isinstance(msg, dict) or "request_id" not in msg:
                    raise DetectorProtocolError(f"response without request_id: {line[:200]!r}")
                if msg["request_id"] == payload["request_id"]:
                    return msg
                logger.debug("dropping stale response %s", msg["request_id"])


class SubprocessDetector:
    """Pool of detector processes; calls may come from several threads."""

    def __init__(self, command, timeout: float = 30.0, workers: int = 1, class_list=()):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        self.class_list = tuple(class_list)
        self._ids = itertools.count()
        self._idle = queue.Queue()
        for _ in range(max(1, workers)):
            self._idle.put(_Child(argv, timeout))
        self._all = list(self._idle.queue)

    def detect(self, image_path, augmentation_id: str, **_) -> list:
        child = self._idle.get()
        try:
            msg = child.request({"image_path": str(image_path), "augmentation_id": augmentation_id,
                                 "request_id": next(self._ids)})
        finally:
            self._idle.put(child)
        try:
            dets = parse_detections(msg.get("detections"))
        except SchemaError as exc:
            raise DetectorProtocolError(str(exc)) from None
        return _check_labels(dets, self.class_list)

    def close(self):
        for c in self._all:
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class ReplayDetector:
    def __init__(self, source, class_list=()):
        self.replay = source if isinstance(source, dict) else load_replay(source)
        self.class_list = tuple(class_list)

    def detect(self, image_id: str, augmentation_id: str, **_) -> list:
        try:
            dets = self.replay[str(image_id)][str(augmentation_id)]
        except KeyError:
            raise MissingReplayEntry(f"no replay entry for ({image_id!r}, {augmentation_id!r})") from None
        return _check_labels(list(dets), self.class_list)

    def close(self):
        pass


class SyntheticDetector:
    def __init__(self, model: SyntheticModel, class_list=()):
        self.model = model
        self.class_list = tuple(class_list)

    def detect(self, image_id: str, augmentation_id: str, truth=None, **_) -> list:
        if truth is None:
            raise DetectorError("the synthetic detector needs ground truth")
        return _check_labels(synthesize(self.model, truth, augmentation_id, image_key=str(image_id)),
                             self.class_list)

    def close(self):
        pass


def open_detector(binding: DetectorBinding):
    """Instantiate the backend a binding describes. Call ``close()`` when done."""
    if binding.kind == "replay":
        return ReplayDetector(binding.source, binding.class_list)
    if binding.kind == "synthetic":
        return SyntheticDetector(binding.model or SyntheticModel(), binding.class_list)
    return SubprocessDetector(binding.source, binding.timeout, binding.workers, binding.class_list)


def detect(binding: DetectorBinding, image_ref, augmentation_id: str, truth=None) -> list:
    """One-shot detection. ``image_ref`` is the image id for replay and
    synthetic bindings and the image path for a subprocess binding."""
    det = open_detector(binding)
    try:
        return det.detect(image_id=str(image_ref), image_path=image_ref,
                          augmentation_id=augmentation_id, truth=truth)
    finally:
        det.close()


def serve(detect_fn: Callable[[str, str], Sequence], stdin=None, stdout=None) -> None:
    """Run the worker side of the subprocess protocol.

    ``detect_fn(image_path, augmentation_id)`` returns an iterable of
    ``(bbox, label, score)`` triples or :class:`Detection` objects.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        dets = []
        for d in detect_fn(req["image_path"], req["augmentation_id"]):
            if isinstance(d, Detection):
                dets.append(d.to_json())
            else:
                bbox, label, score = d
                dets.append({"bbox": list(map(float, bbox)), "label": label, "score": float(score)})
        stdout.write(json.dumps({"request_id": req["request_id"], "detections": dets}) + "\n")
        stdout.flush()
