import csv
import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from conftest import LOW_BEAMS, LOW_STEPS
from lidarinsert.bevmap import BevGrid
from lidarinsert.boxfit import read_stats
from lidarinsert.cli import main
from lidarinsert.config import CONFIG_ENV
from lidarinsert.kitti_io import read_detection_labels, read_labels, read_scene_json
from lidarinsert.synth import street_spec

LOW_SET = ["--set", f"spherical.rows={LOW_BEAMS}", "--set", f"spherical.cols={LOW_STEPS}"]


def run(*argv):
    return main([str(a) for a in argv])


def tree_bytes(root):
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="session")
def spec_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("spec")
    spec = street_spec(seed=21, frames=4, beams=LOW_BEAMS, azimuth_steps=LOW_STEPS, persons=3, bicyclists=3)
    p = d / "street.yaml"
    p.write_text(yaml.safe_dump(spec.to_dict()))
    return p


@pytest.fixture(scope="session")
def native_ds(tmp_path_factory, spec_file):
    out = tmp_path_factory.mktemp("native")
    assert run("synth", spec_file, "-o", out) == 0
    return out


@pytest.fixture(scope="session")
def kitti_ds(tmp_path_factory, spec_file):
    out = tmp_path_factory.mktemp("kitti")
    assert run("synth", spec_file, "-o", out, "--format", "kitti") == 0
    return out


@pytest.fixture(scope="session")
def augmented(tmp_path_factory, native_ds):
    out = tmp_path_factory.mktemp("aug")
    code = run("augment", native_ds, "-o", out, "--seed", 3, *LOW_SET)
    return code, out


# -- synth --

def test_synth_native_layout(native_ds):
    files = sorted(p.name for p in (native_ds / "scenes").iterdir())
    assert files == [f"{k:06d}.json" for k in range(4)]
    assert len((native_ds / "poses.txt").read_text().splitlines()) == 4
    s = read_scene_json(native_ds / "scenes" / "000000.json")
    assert len(s.scan) > 1000 and s.boxes


def test_synth_kitti_layout(kitti_ds, native_ds):
    for sub, ext in (("velodyne", ".bin"), ("labels", ".label"), ("label_2", ".txt")):
        assert sorted(p.name for p in (kitti_ds / sub).iterdir()) == [f"{k:06d}{ext}" for k in range(4)]
    sem, inst = read_labels(kitti_ds / "labels" / "000000.label")
    s = read_scene_json(native_ds / "scenes" / "000000.json")
    assert np.array_equal(sem, s.scan.labels) and np.array_equal(inst, s.scan.instances)
    names = {lab.name for lab in read_detection_labels(kitti_ds / "label_2" / "000000.txt")}
    assert names <= {"Car", "Pedestrian", "Cyclist"} and names
    assert (kitti_ds / "calib.txt").exists()


def test_synth_deterministic(tmp_path, spec_file, native_ds):
    assert run("synth", spec_file, "-o", tmp_path / "again") == 0
    assert tree_bytes(tmp_path / "again") == tree_bytes(native_ds)


def test_synth_malformed_spec(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("walls: [{p0: [0, 0]}]\n")
    assert run("synth", bad, "-o", tmp_path / "o") == 2
    assert "SchemaViolation" in capsys.readouterr().err
    bad.write_text("bogus_key: 1\n")
    assert run("synth", bad, "-o", tmp_path / "o") == 2
    assert run("synth", "-o", tmp_path / "o") == 2


# -- make-maps --

def test_make_maps(tmp_path, native_ds, capsys):
    assert run("make-maps", native_ds, "-o", tmp_path / "m", "--debug-renders") == 0
    grid = BevGrid.load(tmp_path / "m" / "maps" / "000000.npz")
    assert grid.road.any() and grid.pedestrian.any() and not (grid.road & grid.pedestrian).any()
    assert (tmp_path / "m" / "debug" / "000000_map.png").exists()
    assert (tmp_path / "m" / "debug" / "000000_map.pgm").exists()
    assert "road_cells=" in capsys.readouterr().out


def test_make_maps_accumulate_is_superset(tmp_path, native_ds):
    assert run("make-maps", native_ds, "-o", tmp_path / "single") == 0
    assert run("make-maps", native_ds, "-o", tmp_path / "acc", "--accumulate", "--window", 1) == 0
    for k in range(4):
        a = BevGrid.load(tmp_path / "single" / "maps" / f"{k:06d}.npz")
        b = BevGrid.load(tmp_path / "acc" / "maps" / f"{k:06d}.npz")
        assert a.spec.cell_size == b.spec.cell_size
        # compare in world coordinates: every single-scan road cell is road in the accumulated map
        ii, jj = np.nonzero(a.road)
        x, y = a.spec.cell_center(ii, jj)
        bi, bj, ok = b.spec.index(np.column_stack([x, y]))
        assert ok.all() and b.road[bi, bj].all()
        assert b.road.sum() >= a.road.sum()


def test_make_maps_missing_labels(tmp_path, capsys):
    from lidarinsert.kitti_io import Scene, write_scene_json
    from lidarinsert.model import LidarScan
    (tmp_path / "ds" / "scenes").mkdir(parents=True)
    write_scene_json(Scene(LidarScan(np.array([[5.0, 0, -1.7, 0.5]]), frame_id="000000")),
                     tmp_path / "ds" / "scenes" / "000000.json")
    assert run("make-maps", tmp_path / "ds", "-o", tmp_path / "m") == 2
    assert "MissingLabels" in capsys.readouterr().err


def test_missing_input_dir(tmp_path, capsys):
    assert run("make-maps", tmp_path / "nope", "-o", tmp_path / "m") == 2
    assert capsys.readouterr().err.startswith("error:")


# -- stats / fit-boxes --

def test_stats_and_fit_boxes(tmp_path, native_ds):
    assert run("stats", native_ds, "-o", tmp_path / "stats.txt", "--classes", "30,31", "--min-samples", 5) == 0
    stats = read_stats(tmp_path / "stats.txt")
    assert sorted(stats) == [30, 31]
    # synthetic persons are 0.7 x 0.6 x 1.75 with small jitter
    assert 1.4 < stats[30].min_dims[2] <= stats[30].max_dims[2] < 2.1
    assert run("fit-boxes", native_ds, "-o", tmp_path / "fit", "--stats", tmp_path / "stats.txt") == 0
    rows = json.loads((tmp_path / "fit" / "boxes" / "000000.json").read_text())
    assert rows and {r["class_id"] for r in rows} <= {10, 30, 31}
    for r in rows:
        if r["class_id"] in stats:
            s = stats[r["class_id"]]
            assert all(lo <= v <= hi for v, lo, hi in zip((r["l"], r["w"], r["h"]), s.min_dims, s.max_dims))


def test_stats_insufficient(tmp_path, native_ds, capsys):
    assert run("stats", native_ds, "-o", tmp_path / "s.txt", "--classes", "30", "--min-samples", 1000) == 2
    assert "InsufficientData" in capsys.readouterr().err
    assert run("stats", native_ds, "-o", tmp_path / "s.txt", "--classes", "18", "--min-samples", 1) == 2


# -- augment --

def test_augment_outputs(augmented, native_ds):
    code, out = augmented
    assert code == 0
    assert sorted(p.name for p in (out / "scenes").iterdir()) == sorted(p.name for p in (native_ds / "scenes").iterdir())
    for name in ("report.csv", "insertions.csv", "bank.csv", "report.png", "config.yaml", "poses.txt"):
        assert (out / name).exists(), name
    with open(out / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(r["status"] == "ok" for r in rows)
    assert sum(int(r["inserted_total"]) for r in rows) >= 4
    cfg = yaml.safe_load((out / "config.yaml").read_text())
    assert cfg["seed"] == 3 and cfg["spherical"]["rows"] == LOW_BEAMS
    s0 = read_scene_json(native_ds / "scenes" / "000001.json")
    s1 = read_scene_json(out / "scenes" / "000001.json")
    assert s1.boxes[:len(s0.boxes)] == s0.boxes
    assert (s1.scan.instances >= 0xF000).sum() > 0


def test_augment_deterministic_across_runs_and_jobs(tmp_path, augmented, native_ds):
    _, first = augmented
    assert run("augment", native_ds, "-o", tmp_path / "b", "--seed", 3, *LOW_SET) == 0
    assert run("augment", native_ds, "-o", tmp_path / "c", "--seed", 3, "--jobs", 3, *LOW_SET) == 0
    ref = tree_bytes(first)
    assert tree_bytes(tmp_path / "b") == ref
    assert tree_bytes(tmp_path / "c") == ref
    assert run("augment", native_ds, "-o", tmp_path / "d", "--seed", 4, *LOW_SET) == 0
    assert tree_bytes(tmp_path / "d")["scenes/000000.json"] != ref["scenes/000000.json"]


def test_augment_max_objects_zero_is_identity(tmp_path, native_ds):
    assert run("augment", native_ds, "-o", tmp_path / "z", "--max-objects", 0, *LOW_SET) == 0
    for p in (native_ds / "scenes").iterdir():
        assert (tmp_path / "z" / "scenes" / p.name).read_bytes() == p.read_bytes()


def test_augment_with_precomputed_maps_matches(tmp_path, augmented, native_ds):
    _, first = augmented
    assert run("make-maps", native_ds, "-o", tmp_path / "m") == 0
    assert run("augment", native_ds, "-o", tmp_path / "a", "--seed", 3, "--maps", tmp_path / "m", *LOW_SET) == 0
    assert tree_bytes(tmp_path / "a")["scenes/000002.json"] == tree_bytes(first)["scenes/000002.json"]


def test_check_real3d_clean_and_naive_flagged(tmp_path, augmented, native_ds, capsys):
    _, out = augmented
    for k in range(4):
        assert run("check", out / "scenes" / f"{k:06d}.json", *LOW_SET) == 0
    assert run("augment", native_ds, "-o", tmp_path / "n", "--mode", "naive", "--seed", 3, *LOW_SET) == 0
    codes = [run("check", tmp_path / "n" / "scenes" / f"{k:06d}.json", *LOW_SET) for k in range(4)]
    assert 1 in codes
    assert "violations=" in capsys.readouterr().out


def test_augment_kitti_layout(tmp_path, kitti_ds):
    out = tmp_path / "k"
    assert run("augment", kitti_ds, "-o", out, "--seed", 1, *LOW_SET) == 0
    for sub in ("velodyne", "labels", "label_2"):
        assert len(list((out / sub).iterdir())) == 4
    assert (out / "calib.txt").read_bytes() == (kitti_ds / "calib.txt").read_bytes()
    assert run("check", out / "velodyne" / "000000.bin", out / "labels" / "000000.label", *LOW_SET) == 0
    n_in = len(read_detection_labels(kitti_ds / "label_2" / "000000.txt"))
    n_out = len(read_detection_labels(out / "label_2" / "000000.txt"))
    assert n_out >= n_in


def test_augment_detection_task(tmp_path, kitti_ds):
    out = tmp_path / "det"
    assert run("augment", kitti_ds, "-o", out, "--task", "detection", "--seed", 2, *LOW_SET) == 0
    with open(out / "report.csv") as fh:
        assert sum(int(r["inserted_total"]) for r in csv.DictReader(fh)) >= 1


# -- configuration --

def test_config_file_env_and_overrides(tmp_path, native_ds, monkeypatch):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({"augment": {"max_objects_per_scene": 0}, "spherical": {"rows": LOW_BEAMS,
                                                                                          "cols": LOW_STEPS}}))
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    assert run("augment", native_ds, "-o", tmp_path / "a") == 0
    written = yaml.safe_load((tmp_path / "a" / "config.yaml").read_text())
    assert written["augment"]["max_objects_per_scene"] == 0
    # command-line flags beat --set, which beats the file
    assert run("augment", native_ds, "-o", tmp_path / "b", "--set", "augment.max_objects_per_scene=2",
               "--set", "seed=7") == 0
    written = yaml.safe_load((tmp_path / "b" / "config.yaml").read_text())
    assert written["augment"]["max_objects_per_scene"] == 2 and written["seed"] == 7
    assert run("augment", native_ds, "-o", tmp_path / "c", "--set", "augment.max_objects_per_scene=2",
               "--max-objects", 1) == 0
    assert yaml.safe_load((tmp_path / "c" / "config.yaml").read_text())["augment"]["max_objects_per_scene"] == 1


def test_config_errors(tmp_path, native_ds, capsys):
    assert run("augment", native_ds, "-o", tmp_path / "a", "--set", "augment.bogus=1") == 2
    assert run("augment", native_ds, "-o", tmp_path / "a", "--set", "nokeyvalue") == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text("map: {cell_size: -1}\n")
    assert run("make-maps", native_ds, "-o", tmp_path / "m", "--config", bad) == 2
    assert "SchemaViolation" in capsys.readouterr().err
