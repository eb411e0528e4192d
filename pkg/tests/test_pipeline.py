import json

import numpy as np
import pytest

from detfusion import augment
from detfusion.detector import DetectorBinding, SyntheticModel, dumps, truth_to_json
from detfusion.fusion import FusionMethod
from detfusion.pipeline import PipelineConfig, PipelineReport, batch, load_manifest, run
from detfusion.errors import SchemaError
from helpers import spread_scene


def replay_cfg(fixtures, name="example1_replay.json", m=3, **kw):
    return PipelineConfig(augment.roster(m), DetectorBinding("replay", str(fixtures / name)), **kw)


def synthetic_cfg(m=5, t=3, seed=0, **model):
    binding = DetectorBinding("synthetic", model=SyntheticModel(seed=seed, **model))
    return PipelineConfig(augment.roster(m), binding, t=t, grouping_seed=seed)


def test_example1_through_replay(fixtures):
    rep = run(None, replay_cfg(fixtures), image_id="ex1")
    assert rep.s == 1
    assert rep.objects[0].box.to_list() == pytest.approx([13 / 9, 27 / 19, 40 / 9, 122 / 19])
    assert rep.tally == {"identity": 1, "contrast_1.5": 1, "contrast_2": 1}


def test_single_augmentation_passes_through(fixtures):
    rep = run(None, replay_cfg(fixtures, m=1, t=1), image_id="ex1")
    assert rep.objects[0].method is FusionMethod.PASSTHROUGH
    assert rep.objects[0].box.to_list() == [1, 1, 4, 6]


def test_three_two_two_gives_three_objects(fixtures):
    rep = run(None, replay_cfg(fixtures, "scene322_replay.json"), image_id="scene")
    assert rep.s == 3
    assert sorted(r.method.value for r in rep.objects) == ["aabbfi", "average", "average"]


def test_missing_replay_entries_become_warnings(fixtures):
    rep = run(None, replay_cfg(fixtures, m=5), image_id="ex1")
    assert rep.failed_augmentations == ["brightness_1.5", "hist_equalize"]
    assert len(rep.warnings) == 2 and rep.s == 1


def test_config_validation(fixtures):
    with pytest.raises(ValueError):
        replay_cfg(fixtures, m=3, t=4)
    with pytest.raises(ValueError):
        PipelineConfig([augment.roster(1)[0]] * 2, DetectorBinding("replay", "x"), t=1)


def test_batch_tally_sums_to_images_times_t():
    truths = {f"im{i}": spread_scene(1) for i in range(10)}
    manifest = [{"image_id": k, "truth": truth_to_json(k, v)["objects"]} for k, v in truths.items()]
    cfg = synthetic_cfg(m=6, t=3)
    result = batch(manifest, cfg)
    assert len(result.reports) == 10
    assert sum(result.tally.values()) == 10 * 3


def test_batch_skips_bad_entries(tmp_path):
    cfg = synthetic_cfg()
    result = batch([{"image_id": "x", "truth_path": str(tmp_path / "missing.json")}], cfg)
    assert result.skipped == ["x"] and result.reports == []


def test_reports_deterministic_across_jobs():
    truth = spread_scene(4)
    a = run(None, synthetic_cfg(m=8, seed=3), truth=truth, image_id="im")
    b_cfg = synthetic_cfg(m=8, seed=3)
    b_cfg = PipelineConfig(b_cfg.roster, b_cfg.binding, t=b_cfg.t, grouping_seed=3, jobs=4)
    b = run(None, b_cfg, truth=truth, image_id="im")
    assert dumps(a.to_json(groups=True)) == dumps(b.to_json(groups=True))


def test_report_json_round_trip(fixtures):
    rep = run(None, replay_cfg(fixtures), image_id="ex1")
    doc = rep.to_json(groups=True)
    again = PipelineReport.from_json(json.loads(dumps(doc)))
    assert dumps(again.to_json(groups=True)) == dumps(doc)
    assert "timing_ms" not in doc and "timing_ms" in rep.to_json(timing=True)


def test_report_schema_error():
    with pytest.raises(SchemaError):
        PipelineReport.from_json({"objects": []})


def test_lattice_dump(fixtures):
    rep = run(None, replay_cfg(fixtures), image_id="ex1", lattice=True)
    lat = rep.to_json(lattice=True)["lattices"][0]
    assert lat["x"]["lattice"]["3"] == pytest.approx(4 / 9)


def test_image_input_and_subprocess_detector(fixtures, tmp_path):
    import sys

    img = np.random.default_rng(0).integers(0, 256, (16, 16, 3), dtype=np.uint8)
    path = tmp_path / "photo.ppm"
    augment.write_pnm(path, img)
    binding = DetectorBinding("subprocess", f"{sys.executable} {fixtures / 'worker.py'} ok", timeout=20)
    cfg = PipelineConfig(augment.roster(3), binding, t=3, work_dir=str(tmp_path / "work"))
    rep = run(path, cfg)
    assert rep.image_id == "photo"
    assert rep.objects[0].box.to_list() == pytest.approx([1, 1, 4, 6])
    assert len(list((tmp_path / "work").glob("photo__*.ppm"))) == 3


def test_manifest_paths_resolve(tmp_path):
    (tmp_path / "sub").mkdir()
    m = tmp_path / "sub" / "manifest.json"
    m.write_text(json.dumps([{"image_path": "a.ppm", "truth_path": "a.json"}]))
    entry = load_manifest(m)[0]
    assert entry["image_path"] == str(tmp_path / "sub" / "a.ppm")
    m.write_text(json.dumps([{"bogus": 1}]))
    with pytest.raises(SchemaError):
        load_manifest(m)
