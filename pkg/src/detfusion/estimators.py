"""scikit-learn style wrappers so fusion composes with estimator tooling.

None of these estimators learn anything from data: ``fit`` validates
parameters and records derived attributes, like ``FunctionTransformer``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import augment
from .detector import DetectorBinding
from .fusion import Detection, FusionMethod, dispatch, fuse_aabbfi, fuse_average, fuse_median, fuse_nms
from .geometry import AABB
from .pipeline import PipelineConfig, run


def check_boxes(boxes, min_boxes: int = 1) -> np.ndarray:
    """Validate ``[x_lo, y_lo, x_hi, y_hi]`` rows, optionally with a score column.

    Returns a float array of shape ``(n, 4)`` or ``(n, 5)``.
    """
    arr = check_array(boxes, dtype=float, ensure_min_samples=min_boxes)
    if arr.shape[1] not in (4, 5):
        raise ValueError(f"boxes need 4 coordinates (plus optional score), got {arr.shape[1]} columns")
    if np.any(arr[:, 0] > arr[:, 2]) or np.any(arr[:, 1] > arr[:, 3]):
        raise ValueError("boxes must satisfy x_lo <= x_hi and y_lo <= y_hi")
    if arr.shape[1] == 5 and (np.any(arr[:, 4] < 0) or np.any(arr[:, 4] > 1)):
        raise ValueError("scores must lie in [0, 1]")
    return arr


def to_detections(group, labels: Optional[Sequence[str]] = None) -> list:
    """Rows from :func:`check_boxes` as :class:`Detection` objects (score 1 if absent)."""
    if len(group) == 0:
        return []
    arr = check_boxes(group)
    labels = labels if labels is not None else [""] * len(arr)
    return [
        Detection(AABB.from_list(row[:4].tolist()), str(lab), float(row[4]) if len(row) == 5 else 1.0)
        for row, lab in zip(arr, labels)
    ]


class BoxFuser(BaseEstimator):
    """Fuse groups of boxes that describe the same object.

    Parameters
    ----------
    method : {"aabbfi", "average", "median", "nms"}
    top_t : int
        Boxes fused per group when ``dispatch`` is on.
    dispatch : bool
        Apply the group-size rules (N >= 3 fuses the top ``top_t``, N = 2
        averages, N = 1 passes through, N = 0 gives NaN). When off, every
        group is fused with ``method`` directly.
    iou_threshold : float
        Suppression threshold for ``method="nms"``.

    Examples
    --------
    >>> BoxFuser().fit_predict([[[1, 1, 4, 6], [2, 2, 5, 7], [3, 3, 6, 8]]]).round(2)
    array([[1.44, 1.42, 4.44, 6.42]])
    """

    def __init__(self, method="aabbfi", top_t=3, dispatch=True, iou_threshold=0.5):
        self.method = method
        self.top_t = top_t
        self.dispatch = dispatch
        self.iou_threshold = iou_threshold

    def _validate(self):
        FusionMethod(self.method)
        if int(self.top_t) < 1:
            raise ValueError("top_t must be at least 1")

    def fit(self, X=None, y=None):
        self._validate()
        self.method_ = FusionMethod(self.method)
        return self

    def fuse(self, X, labels=None) -> list:
        """:class:`FusionResult` per group of ``X``."""
        check_is_fitted(self, "method_")
        out = []
        for k, group in enumerate(X):
            dets = to_detections(group, labels[k] if labels is not None else None)
            if self.dispatch:
                out.append(dispatch(dets, int(self.top_t), self.method_, self.iou_threshold))
                continue
            boxes = [d.box for d in dets]
            if self.method_ is FusionMethod.AABBFI:
                out.append(fuse_aabbfi(boxes))
            elif self.method_ is FusionMethod.AVERAGE:
                out.append(fuse_average(boxes))
            elif self.method_ is FusionMethod.MEDIAN:
                out.append(fuse_median(boxes))
            else:
                out.append(fuse_nms(dets, self.iou_threshold))
        return out

    def predict(self, X) -> np.ndarray:
        """Fused ``[x_lo, y_lo, x_hi, y_hi]`` per group; NaN rows for empty groups."""
        rows = [r.box.to_list() if r.box is not None else [np.nan] * 4 for r in self.fuse(X)]
        return np.array(rows, dtype=float).reshape(len(rows), 4)

    def fit_predict(self, X, y=None) -> np.ndarray:
        return self.fit(X).predict(X)


class Augmenter(TransformerMixin, BaseEstimator):
    """Produce the roster of photometric variants of an image.

    ``transform`` maps one uint8 image to a stacked array of shape
    ``(m, *image.shape)``.
    """

    def __init__(self, m=None, seed=0, ranking=None):
        self.m = m
        self.seed = seed
        self.ranking = ranking

    def fit(self, X=None, y=None):
        self.roster_ = augment.roster(self.m, self.ranking, self.seed)
        self.augmentation_ids_ = [s.id for s in self.roster_]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "roster_")
        img = augment.check_image(X)
        return np.stack([augment.apply(img, s) for s in self.roster_])


class DetectionFusion(BaseEstimator):
    """Augment, detect, group and fuse, image by image.

    ``predict`` returns, per image, the list of fused
    :class:`~detfusion.fusion.FusionResult` objects.
    """

    def __init__(self, detector=None, m=None, top_t=3, method="aabbfi", seed=0, jobs=1,
                 iou_threshold=0.5):
        self.detector = detector
        self.m = m
        self.top_t = top_t
        self.method = method
        self.seed = seed
        self.jobs = jobs
        self.iou_threshold = iou_threshold

    def fit(self, X=None, y=None):
        binding = self.detector
        if binding is None:
            raise ValueError("a detector binding is required")
        if isinstance(binding, str):
            binding = DetectorBinding.parse(binding)
        roster = augment.roster(self.m, seed=self.seed)
        self.config_ = PipelineConfig(
            roster, binding, t=min(int(self.top_t), len(roster)), fusion_method=self.method,
            grouping_seed=self.seed, iou_threshold=self.iou_threshold, jobs=self.jobs,
        )
        return self

    def run(self, images, truths=None, image_ids=None) -> list:
        """Full :class:`~detfusion.pipeline.PipelineReport` per image."""
        check_is_fitted(self, "config_")
        n = len(images)
        truths = truths if truths is not None else [None] * n
        image_ids = image_ids if image_ids is not None else [f"image{i}" for i in range(n)]
        return [run(img, self.config_, truth=t, image_id=i) for img, t, i in zip(images, truths, image_ids)]

    def predict(self, images, truths=None, image_ids=None) -> list:
        return [rep.objects for rep in self.run(images, truths, image_ids)]
