"""Pooling detections across augmentations and grouping them into objects."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np

from .errors import EmptyGroup, Underdetermined

if TYPE_CHECKING:
    from .fusion import Detection


@dataclass(frozen=True)
class DetectionPool:
    """Detections per augmented variant, in roster order.

    ``augmentation_ids`` names each position; it defaults to ``"0"``, ``"1"``...
    """

    per_augmentation: tuple
    augmentation_ids: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "per_augmentation", tuple(tuple(d) for d in self.per_augmentation))
        if len(self.per_augmentation) < 1:
            raise ValueError("a detection pool needs at least one augmentation")
        if self.augmentation_ids is None:
            ids = tuple(str(i) for i in range(len(self.per_augmentation)))
            object.__setattr__(self, "augmentation_ids", ids)
        elif len(self.augmentation_ids) != len(self.per_augmentation):
            raise ValueError("augmentation_ids must match per_augmentation in length")
        else:
            object.__setattr__(self, "augmentation_ids", tuple(self.augmentation_ids))

    @property
    def m(self) -> int:
        return len(self.per_augmentation)

    def flat(self) -> list:
        """``(augmentation index, detection index, detection)`` triples."""
        return [(a, j, d) for a, dets in enumerate(self.per_augmentation) for j, d in enumerate(dets)]

    def __len__(self):
        return sum(len(d) for d in self.per_augmentation)


@dataclass(frozen=True)
class ObjectGroup:
    object_id: int
    members: tuple  # (augmentation index, Detection), sorted by augmentation index
    indices: tuple = ()  # position of each member within its augmentation's list

    @property
    def detections(self) -> list:
        return [d for _, d in self.members]

    @property
    def augmentations(self) -> list:
        return [a for a, _ in self.members]

    def __len__(self):
        return len(self.members)


def object_count(pool: DetectionPool) -> int:
    """Largest number of detections any single augmentation produced."""
    return max((len(d) for d in pool.per_augmentation), default=0)


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(points)
    centers = [points[rng.integers(n)]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=float)


def kmeans(points, k: int, seed: int = 0, max_iter: int = 100):
    """Lloyd's k-means with k-means++ seeding.

    Stops when assignments no longer change or after ``max_iter`` rounds.
    An emptied cluster is re-seeded at the point farthest from its centroid.

    Returns
    -------
    labels : ndarray of int, shape (n,)
    centroids : ndarray, shape (k, d)
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if k < 1 or k > len(points):
        raise Underdetermined(f"cannot form {k} clusters from {len(points)} points")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(points, k, rng)
    labels = np.full(len(points), -1)
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = dist.argmin(axis=1)
        for c in range(k):
            if not np.any(new == c):
                own = dist[np.arange(len(points)), new]
                sizes = np.bincount(new, minlength=k)
                own[sizes[new] < 2] = -np.inf
                far = int(own.argmax())
                new[far] = c
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            centroids[c] = points[labels == c].mean(axis=0)
    return labels, centroids


def group(pool: DetectionPool, s: int, seed: int = 0) -> list:
    """Partition pooled detections into ``s`` object groups.

    Clusters box centers with k-means (k = ``s``). A group keeps at most one
    detection per augmentation: when an augmentation lands several
    detections in one cluster, the highest-scoring one stays and the others
    move to their next-nearest cluster that has no member from that
    augmentation yet. Groups are numbered 1..s by centroid (x, then y).
    """
    if s < 1:
        raise ValueError("s must be at least 1")
    flat = pool.flat()
    if len(flat) < s:
        raise Underdetermined(f"{len(flat)} detections cannot fill {s} groups")
    centers = np.array([d.box.center for _, _, d in flat], dtype=float)
    _, centroids = kmeans(centers, s, seed)

    dist = ((centers[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    order = sorted(range(len(flat)), key=lambda i: (-flat[i][2].score, flat[i][0], flat[i][1]))
    taken = defaultdict(set)
    assignment = {}
    for i in order:
        aug = flat[i][0]
        for c in np.argsort(dist[i], kind="stable"):
            if aug not in taken[int(c)]:
                taken[int(c)].add(aug)
                assignment[i] = int(c)
                break
        else:
            raise Underdetermined(f"augmentation {aug} has more detections than groups")

    rank = sorted(range(s), key=lambda c: (centroids[c][0], centroids[c][1], c))
    groups = []
    for obj, c in enumerate(rank, start=1):
        idx = sorted((i for i, cc in assignment.items() if cc == c), key=lambda i: (flat[i][0], flat[i][1]))
        groups.append(ObjectGroup(obj, tuple((flat[i][0], flat[i][2]) for i in idx),
                                  tuple(flat[i][1] for i in idx)))
    return groups


def majority_label(dets: Sequence["Detection"]) -> str:
    """Most common label; ties go to the higher summed score, then alphabetical."""
    if len(dets) == 0:
        raise EmptyGroup("cannot vote on an empty group")
    count = defaultdict(int)
    mass = defaultdict(float)
    for d in dets:
        count[d.label] += 1
        mass[d.label] += d.score
    return min(count, key=lambda lab: (-count[lab], -mass[lab], lab))
