import itertools

import numpy as np
import pytest

from detfusion.errors import EmptyGroup, Underdetermined
from detfusion.fusion import Detection
from detfusion.geometry import AABB
from detfusion.grouping import DetectionPool, group, kmeans, majority_label, object_count


def det(cx, cy, score=0.5, label="car", size=4):
    return Detection(AABB.from_coords(cx - size, cy - size, cx + size, cy + size), label, score)


def scatter(rng, centers, m, sd=1.0, miss=0.0):
    per_aug = []
    for _ in range(m):
        dets = [det(cx + rng.normal(0, sd), cy + rng.normal(0, sd), float(rng.random()))
                for cx, cy in centers if rng.random() >= miss]
        per_aug.append(dets)
    return DetectionPool(per_aug)


def best_partition(pool, s):
    """Exhaustive search over valid assignments minimizing within-group squared error."""
    flat = pool.flat()
    pts = np.array([d.box.center for _, _, d in flat])
    best, best_cost = None, np.inf
    for assign in itertools.product(range(s), repeat=len(flat)):
        if len(set(assign)) < s:
            continue
        seen = set()
        ok = True
        for (aug, _, _), c in zip(flat, assign):
            if (aug, c) in seen:
                ok = False
                break
            seen.add((aug, c))
        if not ok:
            continue
        a = np.array(assign)
        cost = sum(((pts[a == c] - pts[a == c].mean(axis=0)) ** 2).sum() for c in range(s))
        if cost < best_cost:
            best, best_cost = assign, cost
    return frozenset(frozenset(i for i, c in enumerate(best) if c == g) for g in range(s))


def as_partition(pool, groups):
    flat = pool.flat()
    index = {(a, j): i for i, (a, j, _) in enumerate(flat)}
    return frozenset(frozenset(index[(a, j)] for (a, _), j in zip(g.members, g.indices)) for g in groups)


def test_object_count_is_max_per_augmentation():
    pool = DetectionPool([[det(0, 0)] * 3, [det(0, 0)] * 2, [det(0, 0)] * 2])
    assert object_count(pool) == 3
    assert object_count(DetectionPool([[], []])) == 0


@pytest.mark.parametrize("seed", range(12))
def test_grouping_matches_exhaustive_partition(seed):
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0, 100, (2 + seed % 2, 2))
    pool = scatter(rng, centers, m=3, sd=1.5, miss=0.2)
    s = object_count(pool)
    if len(pool) > 9 or s < 2:
        pytest.skip("pool too large for exhaustive search")
    assert as_partition(pool, group(pool, s, seed=seed)) == best_partition(pool, s)


def test_one_detection_per_augmentation_per_group():
    rng = np.random.default_rng(0)
    pool = scatter(rng, [(10, 10), (12, 11), (80, 80)], m=6, sd=2.0)
    for g in group(pool, object_count(pool)):
        assert len(set(g.augmentations)) == len(g.augmentations)


def test_spill_moves_lower_score_detection():
    # Two detections from augmentation 0 sit on the same object; the weaker must spill.
    pool = DetectionPool([
        [det(10, 10, 0.9), det(11, 10, 0.2)],
        [det(10, 11, 0.8)],
        [det(50, 50, 0.7)],
    ])
    groups = group(pool, 2)
    near = [g for g in groups if any(d.score == 0.9 for d in g.detections)][0]
    assert 0.2 not in [d.score for d in near.detections]
    assert len(set(near.augmentations)) == len(near.augmentations)


def test_groups_sorted_by_centroid():
    pool = DetectionPool([[det(90, 0), det(10, 0)], [det(91, 1), det(11, 1)]])
    groups = group(pool, 2)
    assert [g.object_id for g in groups] == [1, 2]
    assert groups[0].detections[0].box.center[0] < 50 < groups[1].detections[0].box.center[0]


def test_three_two_two_fixture():
    pool = DetectionPool([
        [det(10, 10), det(50, 10), det(100, 100)],
        [det(11, 10), det(101, 99)],
        [det(51, 11), det(99, 101)],
    ])
    s = object_count(pool)
    groups = group(pool, s)
    assert s == 3
    assert sorted(len(g) for g in groups) == [2, 2, 3]


def test_grouping_is_deterministic():
    rng = np.random.default_rng(5)
    pool = scatter(rng, rng.uniform(0, 200, (5, 2)), m=8, sd=3)
    a = group(pool, object_count(pool), seed=4)
    b = group(pool, object_count(pool), seed=4)
    assert a == b


def test_underdetermined():
    with pytest.raises(Underdetermined):
        group(DetectionPool([[det(0, 0)]]), 2)


def test_kmeans_separates_blobs():
    pts = np.array([[0, 0], [0, 1], [1, 0], [10, 10], [10, 11], [11, 10]], dtype=float)
    labels, centroids = kmeans(pts, 2, seed=1)
    assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1 and labels[0] != labels[3]


def test_kmeans_duplicate_points():
    pts = np.zeros((4, 2))
    labels, _ = kmeans(pts, 2, seed=0)
    assert len(labels) == 4


class TestMajorityLabel:
    def test_plain_majority(self):
        assert majority_label([det(0, 0, label="a"), det(0, 0, label="b"), det(0, 0, label="b")]) == "b"

    def test_tie_broken_by_score(self):
        assert majority_label([det(0, 0, 0.9, "a"), det(0, 0, 0.4, "b")]) == "a"

    def test_full_tie_is_alphabetical(self):
        assert majority_label([det(0, 0, 0.5, "zebra"), det(0, 0, 0.5, "ant")]) == "ant"

    def test_empty(self):
        with pytest.raises(EmptyGroup):
            majority_label([])


def test_two_far_triplets():
    pool = DetectionPool([[det(10, 10), det(300, 300)], [det(11, 10), det(301, 299)], [det(10, 11), det(299, 300)]])
    groups = group(pool, object_count(pool))
    assert [len(g) for g in groups] == [3, 3]
    assert as_partition(pool, groups) == best_partition(pool, 2)


@pytest.mark.parametrize("seed", range(5))
def test_planted_partition_recovered(seed):
    rng = np.random.default_rng(seed)
    centers = [(k * 100.0, (k % 2) * 100.0) for k in range(4)]
    pool = scatter(rng, centers, m=5, sd=1.0)  # separation 100 > 10x scatter
    for g in group(pool, object_count(pool), seed=seed):
        cs = np.array([d.box.center for d in g.detections])
        assert np.ptp(cs, axis=0).max() < 20
        assert len(g) == 5
