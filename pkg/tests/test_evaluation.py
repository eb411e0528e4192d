import numpy as np
import pytest

from detfusion import augment
from detfusion.detector import DetectorBinding, SyntheticModel
from detfusion.errors import ClassMismatch, NoRecords
from detfusion.evaluation import (
    average_iou,
    compare_methods,
    detection_count,
    eleven_point_ap,
    format_count,
    make_record,
    mean_ap,
    read_voc_annotation,
)
from detfusion.fusion import Detection
from detfusion.geometry import AABB, iou
from detfusion.pipeline import PipelineConfig, run
from helpers import random_scene, spread_scene
from oracles import exhaustive_ap, raster_iou


def ap_fixture(seed, n_images=5):
    """Noisy predictions for a 2-class scene set, with distinct scores."""
    rng = np.random.default_rng(seed)
    truths, preds, flat = {}, {}, []
    scores = iter(rng.permutation(np.linspace(0.3, 0.99, 100)))
    for i in range(n_images):
        img = f"im{i}"
        truths[img] = random_scene(rng, int(rng.integers(1, 5)))
        preds[img] = []
        for box, lab in truths[img]:
            for _ in range(int(rng.integers(0, 3))):
                d = Detection(box.translate(*rng.normal(0, 6, 2)), lab, float(next(scores)))
                preds[img].append(d)
        for _ in range(int(rng.integers(0, 3))):
            x, y = rng.uniform(0, 150, 2)
            preds[img].append(Detection(AABB.from_coords(x, y, x + 30, y + 30), str(rng.choice(["car", "person"])),
                                        float(next(scores))))
        flat += [(img, d.box.to_list(), d.label, d.score) for d in preds[img]]
    return preds, truths, flat


@pytest.mark.parametrize("seed", range(10))
def test_ap_matches_exhaustive_cutoffs(seed):
    preds, truths, flat = ap_fixture(seed)
    assert len(flat) <= 100
    curve = mean_ap(preds, truths, score_threshold=0.0)
    oracle_truths = {img: [(b.to_list(), lab) for b, lab in objs] for img, objs in truths.items()}
    for cls in ("car", "person"):
        assert curve.ap[cls] == pytest.approx(exhaustive_ap(flat, oracle_truths, cls), abs=1e-9)


def test_perfect_predictor():
    truths = {f"im{i}": random_scene(np.random.default_rng(i), 3) for i in range(4)}
    preds = {k: [Detection(b, lab, 0.9) for b, lab in v] for k, v in truths.items()}
    assert mean_ap(preds, truths).map == 1.0


def test_empty_predictor():
    truths = {"a": spread_scene(2)}
    assert mean_ap({"a": []}, truths).map == 0.0


def test_order_invariance():
    preds, truths, _ = ap_fixture(3)
    rng = np.random.default_rng(0)
    shuffled = {k: [v[i] for i in rng.permutation(len(v))] for k, v in reversed(list(preds.items()))}
    assert mean_ap(preds, truths).map == mean_ap(shuffled, truths).map


def test_ties_are_order_invariant():
    truths = {"a": spread_scene(2)}
    preds = [Detection(b, lab, 0.5) for b, lab in truths["a"]] + [Detection(AABB.from_list([500, 0, 510, 9]), "car", 0.5)]
    assert mean_ap({"a": preds}, truths).map == mean_ap({"a": preds[::-1]}, truths).map


def test_deletion_never_raises_recall():
    # AP itself can rise when deleted predictions were false positives, so the
    # monotone quantity under arbitrary deletion is the recall reached.
    for seed in range(10):
        preds, truths, _ = ap_fixture(seed)
        full = mean_ap(preds, truths, score_threshold=0.0)
        rng = np.random.default_rng(seed)
        fewer = {k: [d for d in v if rng.random() < 0.6] for k, v in preds.items()}
        part = mean_ap(fewer, truths, score_threshold=0.0)
        for cls, pts in part.points.items():
            reached = max((r for r, _ in pts), default=0.0)
            assert reached <= max((r for r, _ in full.points[cls]), default=0.0)


def test_deleting_false_positives_never_lowers_ap():
    for seed in range(20):
        preds, truths, _ = ap_fixture(seed)
        full = mean_ap(preds, truths, score_threshold=0.0).map
        rng = np.random.default_rng(seed)

        def pure_fp(img, d):
            return all(lab != d.label or iou(d.box, b) < 0.5 for b, lab in truths[img])

        fewer = {k: [d for d in v if not (pure_fp(k, d) and rng.random() < 0.5)] for k, v in preds.items()}
        assert mean_ap(fewer, truths, score_threshold=0.0).map >= full - 1e-12


def test_score_threshold_drops_low_scores():
    truths = {"a": spread_scene(1)}
    preds = {"a": [Detection(truths["a"][0][0], "car", 0.2)]}
    assert mean_ap(preds, truths, score_threshold=0.25).map == 0.0
    assert mean_ap(preds, truths, score_threshold=0.1).map == 1.0


def test_class_mismatch():
    truths = {"a": spread_scene(1)}
    with pytest.raises(ClassMismatch):
        mean_ap({"a": [Detection(truths["a"][0][0], "dog", 0.9)]}, truths, classes=["car"])


def test_no_truth():
    with pytest.raises(NoRecords):
        mean_ap({}, {})
    with pytest.raises(NoRecords):
        average_iou([])


def test_eleven_point_hand_example():
    assert eleven_point_ap([0.5, 1.0], [1.0, 0.5]) == pytest.approx((6 * 1.0 + 5 * 0.5) / 11)


class TestAverageIoU:
    def test_perfect(self):
        truth = spread_scene(1)
        rec = make_record("a", [Detection(truth[0][0], "car")], truth)
        assert average_iou([rec]) == 1.0

    def test_two_records(self):
        t = [(AABB.from_list([0, 0, 10, 10]), "car")]
        r1 = make_record("a", [Detection(AABB.from_list([0, 0, 6, 10]), "car")], t)
        r2 = make_record("b", [Detection(AABB.from_list([0, 0, 8, 10]), "car")], t)
        assert average_iou([r1, r2]) == pytest.approx(0.7)

    def test_unmatched_truth_counts_zero(self):
        t = spread_scene(2)
        rec = make_record("a", [Detection(t[0][0], "car")], t)
        assert average_iou([rec]) == 0.5

    def test_matches_raster_oracle(self):
        rng = np.random.default_rng(0)
        records, values = [], []
        for i in range(20):
            x, y, w, h = (int(v) for v in rng.integers(0, 20, 4) + [0, 0, 5, 5])
            dx, dy = (int(v) for v in rng.integers(-4, 5, 2))
            t, p = (x, y, x + w, y + h), (x + dx, y + dy, x + dx + w, y + dy + h)
            records.append(make_record(str(i), [Detection(AABB.from_list(p), "car")], [(AABB.from_list(t), "car")]))
            values.append(raster_iou(t, p))
        assert average_iou(records) == pytest.approx(float(np.mean(values)), abs=1e-12)


def test_detection_count():
    t = spread_scene(3)
    preds = [Detection(t[0][0], "car"), Detection(t[1][0].translate(30, 0), "car")]
    count = detection_count([make_record("a", preds, t)], 0.5)
    assert count == (1, 3) and format_count(count) == "1/3"
    assert detection_count([make_record("a", [], t)], 0.5) == (0, 3)
    with pytest.raises(ValueError):
        detection_count([], 1.0)


def test_detection_count_brute_force():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = random_scene(rng, 4)
        preds = [Detection(b.translate(*rng.normal(0, 8, 2)), lab) for b, lab in t if rng.random() < 0.8]
        rec = make_record("a", preds, t)
        detected, _ = detection_count([rec], 0.5)
        assert detected == sum(1 for v in rec.ious if v >= 0.5)


def test_voc_reader(tmp_path):
    xml = tmp_path / "a.xml"
    xml.write_text("<annotation><filename>a.jpg</filename><object><name>car</name>"
                   "<bndbox><xmin>1</xmin><ymin>2</ymin><xmax>3</xmax><ymax>4</ymax></bndbox>"
                   "</object></annotation>")
    image_id, objs = read_voc_annotation(xml)
    assert image_id == "a" and objs[0][0].to_list() == [1, 2, 3, 4] and objs[0][1] == "car"


def dataset(n, model):
    return [{"image_id": f"im{i}", "truth": spread_scene(2)} for i in range(n)], PipelineConfig(
        augment.roster(4), DetectorBinding("synthetic", model=model), t=3)


def test_compare_degenerate_agreement():
    data, cfg = dataset(3, SyntheticModel(center_jitter_sd=0, scale_jitter_sd=0, score_sd=0))
    table = compare_methods(data, cfg, ["baseline", "average", "median", "aabbfi", "nms"])
    first = table.rows[0]
    for row in table.rows:
        assert (row["average_iou"], row["detection"], row["map"]) == (first["average_iou"], first["detection"], first["map"])
    assert "aabbfi" in table.to_text()


def test_compare_empty_methods():
    data, cfg = dataset(1, SyntheticModel())
    with pytest.raises(ValueError):
        compare_methods(data, cfg, [])


def test_baseline_matches_identity_detections():
    data, cfg = dataset(4, SyntheticModel(seed=2))
    table = compare_methods(data, cfg, ["baseline"])
    records = []
    for s in data:
        rep = run(None, cfg, truth=s["truth"], image_id=s["image_id"])
        records.append(make_record(s["image_id"], rep.raw["identity"], s["truth"]))
    assert table.rows[0]["average_iou"] == average_iou(records)
