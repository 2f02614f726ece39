import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lidarinsert.bevmap import BevGrid, GridSpec, read_pgm, write_pgm
from lidarinsert.errors import CountMismatch, MalformedFile, MissingCalib, SchemaViolation
from lidarinsert.kitti_io import (
    Calibration,
    DetectionLabel,
    Scene,
    boxes_camera_to_lidar,
    boxes_lidar_to_camera,
    pack_labels,
    read_calib,
    read_detection_labels,
    read_labeled_scan,
    read_labels,
    read_poses,
    read_scan,
    read_scene_json,
    scene_to_json,
    velodyne_poses,
    write_calib,
    write_detection_labels,
    write_labels,
    write_poses,
    write_scan,
    write_scene_json,
)
from lidarinsert.model import LidarScan, OrientedBox, Pose

# lidar x forward, y left, z up -> camera x right, y down, z forward
KITTI_TR = np.array([[0, -1, 0, 0.1], [0, 0, -1, -0.2], [1, 0, 0, -0.3]], float)

f32 = st.floats(-200, 200, width=32, allow_nan=False)
unit32 = st.floats(0, 1, width=32)
finite = st.floats(-1e3, 1e3, allow_nan=False)


def rotation(q):
    q = np.asarray(q, float)
    q = q / np.linalg.norm(q)
    a, b, c, d = q
    return np.array([
        [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
        [2 * (b * c + a * d), a * a - b * b + c * c - d * d, 2 * (c * d - a * b)],
        [2 * (b * d - a * c), 2 * (c * d + a * b), a * a - b * b - c * c + d * d],
    ])


quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(lambda q: np.linalg.norm(q) > 0.1)


# -- velodyne bin --

@given(st.lists(st.tuples(f32, f32, f32, unit32), max_size=50))
def test_scan_roundtrip_bit_exact(tmp_path_factory, rows):
    d = tmp_path_factory.mktemp("bin")
    raw = np.array(rows, dtype="<f4").reshape(-1, 4).tobytes()
    (d / "a.bin").write_bytes(raw)
    s = read_scan(d / "a.bin")
    assert s.frame_id == "a" and len(s) == len(rows)
    write_scan(s, d / "b.bin")
    assert (d / "b.bin").read_bytes() == raw


def test_scan_malformed_length(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"\0" * 17)
    with pytest.raises(MalformedFile):
        read_scan(tmp_path / "x.bin")


# -- SemanticKITTI labels --

@given(arrays(np.uint32, st.integers(0, 60)))
def test_labels_roundtrip_bit_exact(tmp_path_factory, raw):
    p = tmp_path_factory.mktemp("lab") / "a.label"
    p.write_bytes(raw.astype("<u4").tobytes())
    sem, inst = read_labels(p)
    assert np.array_equal(sem | (inst << 16), raw.astype(np.int64))
    write_labels(sem, inst, p.with_suffix(".out"))
    assert p.with_suffix(".out").read_bytes() == p.read_bytes()


def test_label_packing_example(tmp_path):
    assert pack_labels([10], [1]).tolist() == [0x0001000A]
    assert pack_labels([10], [1]).tobytes() == b"\x0a\x00\x01\x00"
    with pytest.raises(ValueError):
        pack_labels([70000], [0])
    (tmp_path / "l.label").write_bytes(b"\0" * 6)
    with pytest.raises(MalformedFile):
        read_labels(tmp_path / "l.label")


def test_labeled_scan_count_mismatch(tmp_path):
    write_scan(LidarScan(np.zeros((3, 4))), tmp_path / "s.bin")
    write_labels([1, 2], [0, 0], tmp_path / "s.label")
    with pytest.raises(CountMismatch):
        read_labeled_scan(tmp_path / "s.bin", tmp_path / "s.label")
    write_labels([1, 2, 3], [0, 5, 0], tmp_path / "s.label")
    s = read_labeled_scan(tmp_path / "s.bin", tmp_path / "s.label")
    assert s.labels.tolist() == [1, 2, 3] and s.instances.tolist() == [0, 5, 0]


# -- poses --

@given(st.lists(st.tuples(quats, st.tuples(finite, finite, finite)), max_size=8))
def test_poses_roundtrip_bit_exact(tmp_path_factory, raw):
    p = tmp_path_factory.mktemp("pose") / "poses.txt"
    poses = [Pose(rotation(q), t) for q, t in raw]
    write_poses(poses, p)
    back = read_poses(p)
    assert len(back) == len(poses)
    for a, b in zip(poses, back):
        assert np.array_equal(a.as_matrix(), b.as_matrix())
    text = p.read_text()
    write_poses(back, p)
    assert p.read_text() == text


def test_poses_malformed(tmp_path):
    p = tmp_path / "poses.txt"
    p.write_text("1 0 0 0 0 1 0 0 0 0 1\n")
    with pytest.raises(MalformedFile):
        read_poses(p)
    p.write_text("2 0 0 0 0 1 0 0 0 0 1 0\n")
    with pytest.raises(MalformedFile):
        read_poses(p)
    # a 1e-5 perturbation is tolerated
    p.write_text("1.00001 0 0 0 0 1 0 0 0 0 1 0\n")
    assert len(read_poses(p)) == 1


def test_velodyne_poses_convention():
    tr = Pose.from_matrix(KITTI_TR)
    # camera moving forward along its z axis is the lidar moving along x
    cam = [Pose.identity(), Pose(np.eye(3), [0, 0, 5.0])]
    velo = velodyne_poses(cam, tr)
    assert np.allclose(velo[0].as_matrix(), Pose.identity().as_matrix())
    assert np.allclose(velo[1].translation, [5, 0, 0])


# -- calibration --

@given(quats, st.tuples(finite, finite, finite), st.booleans(),
       arrays(np.float64, (3, 4), elements=st.floats(-1e3, 1e3)))
def test_calib_roundtrip_bit_exact(tmp_path_factory, q, t, with_p2, p2):
    p = tmp_path_factory.mktemp("cal") / "calib.txt"
    c = Calibration(np.hstack([rotation(q), np.array(t)[:, None]]), rotation(q[::-1]), p2 if with_p2 else None)
    write_calib(c, p)
    back = read_calib(p)
    assert np.array_equal(back.tr_velo_to_cam, c.tr_velo_to_cam)
    assert np.array_equal(back.r0_rect, c.r0_rect)
    assert (back.p2 is None) == (not with_p2)
    if with_p2:
        assert np.array_equal(back.p2, c.p2)


def test_calib_odometry_key_and_missing(tmp_path):
    p = tmp_path / "calib.txt"
    p.write_text("P0: " + " ".join(["0"] * 12) + "\nTr: " + " ".join(map(str, KITTI_TR.ravel())) + "\n")
    assert np.array_equal(read_calib(p).tr_velo_to_cam, KITTI_TR)
    p.write_text("P0: " + " ".join(["0"] * 12) + "\n")
    with pytest.raises(MissingCalib):
        read_calib(p)
    p.write_text("no colon here\n")
    with pytest.raises(MalformedFile):
        read_calib(p)
    with pytest.raises(MissingCalib):
        Calibration(np.zeros((3, 4))).lidar_to_rect([[1, 2, 3]])


# -- detection labels --

labels_st = st.builds(
    DetectionLabel, st.sampled_from(["Car", "Pedestrian", "Cyclist", "Van", "DontCare"]),
    st.floats(0, 1), st.integers(0, 3), finite, st.tuples(finite, finite, finite, finite),
    st.floats(0, 10), st.floats(0, 10), st.floats(0, 10), finite, finite, finite, finite,
    st.none() | finite)


@given(st.lists(labels_st, max_size=6))
def test_detection_labels_roundtrip(tmp_path_factory, labels):
    p = tmp_path_factory.mktemp("det") / "000000.txt"
    write_detection_labels(labels, p)
    assert read_detection_labels(p) == labels


def test_detection_label_parsing(tmp_path):
    p = tmp_path / "l.txt"
    p.write_text("Pedestrian 0.00 0 -0.20 712.40 143.00 810.73 307.92 1.89 0.48 1.20 1.84 1.47 8.41 0.01\n")
    (lab,) = read_detection_labels(p)
    assert lab.name == "Pedestrian" and lab.bbox == (712.40, 143.00, 810.73, 307.92)
    assert (lab.h, lab.w, lab.l, lab.rotation_y, lab.score) == (1.89, 0.48, 1.20, 0.01, None)
    assert lab.difficulty == "easy"
    p.write_text("Car 0 0 0 0 0 0\n")
    with pytest.raises(MalformedFile):
        read_detection_labels(p)


def test_box_camera_convention():
    calib = Calibration(KITTI_TR)
    b = OrientedBox(10, 2, -0.8, 4, 1.8, 1.5, 0.0)
    (lab,) = boxes_lidar_to_camera([b], calib, ["Car"])
    assert lab.rotation_y == pytest.approx(-math.pi / 2)
    # bottom-face center: lidar (10, 2, -1.55) -> camera (-2 + .1, 1.55 - .2, 10 - .3)
    assert (lab.x, lab.y, lab.z) == pytest.approx((-1.9, 1.35, 9.7))
    assert (lab.h, lab.w, lab.l) == (1.5, 1.8, 4)
    with pytest.raises(MissingCalib):
        boxes_lidar_to_camera([b], None)


@pytest.mark.parametrize("seed", range(5))
def test_box_camera_roundtrip(seed):
    rng = np.random.default_rng(seed)
    calib = Calibration(KITTI_TR, rotation(rng.normal(size=4)))
    boxes = [OrientedBox(*rng.uniform(-30, 30, 3), *rng.uniform(0.5, 5, 3), rng.uniform(-3, 3)) for _ in range(10)]
    back = boxes_camera_to_lidar(boxes_lidar_to_camera(boxes, calib), calib)
    for a, b in zip(boxes, back):
        assert np.allclose(a.to_array()[:6], b.to_array()[:6], atol=1e-9)
        assert abs(math.remainder(a.yaw - b.yaw, 2 * math.pi)) < 1e-9


# -- native scene JSON --

@st.composite
def scenes(draw):
    n = draw(st.integers(0, 30))
    pts = draw(arrays(np.float64, (n, 3), elements=st.floats(-100, 100)))
    inten = draw(arrays(np.float64, (n,), elements=st.floats(0, 1)))
    labeled = draw(st.booleans())
    labels = draw(arrays(np.int64, (n,), elements=st.integers(0, 259))) if labeled else None
    inst = draw(arrays(np.int64, (n,), elements=st.integers(0, 0xFFFF))) if labeled else None
    k = draw(st.integers(0, 4))
    boxes = [OrientedBox(*draw(st.tuples(*[st.floats(-50, 50)] * 3)), *draw(st.tuples(*[st.floats(0, 9)] * 3)),
                         draw(st.floats(-3, 3))) for _ in range(k)]
    classes = draw(st.lists(st.integers(0, 259), min_size=k, max_size=k))
    params = draw(st.dictionaries(st.sampled_from(["cell_size", "window"]), st.integers(0, 5)))
    return Scene(LidarScan(np.column_stack([pts, inten]), labels, inst, draw(st.text("abc012", max_size=6))),
                 boxes, classes, [], params)


@given(scenes())
def test_scene_json_roundtrip(tmp_path_factory, scene):
    p = tmp_path_factory.mktemp("scn") / "s.json"
    write_scene_json(scene, p)
    back = read_scene_json(p)
    assert back.scan.equals(scene.scan) and back.scan.frame_id == scene.scan.frame_id
    assert back.boxes == scene.boxes and back.box_classes == scene.box_classes
    assert back.map_params == scene.map_params
    assert scene_to_json(back).encode() == p.read_bytes()


def test_scene_json_schema_errors(tmp_path):
    p = tmp_path / "s.json"
    for text in ['{"schema": "other"}', '{"schema": "lidarinsert.scene", "version": 9}',
                 '{"schema": "lidarinsert.scene", "version": 1, "points": [[0, 0, 0]]}',
                 '{"schema": "lidarinsert.scene", "version": 1, "points": [], "boxes": [{"cx": 0}]}',
                 "not json"]:
        p.write_text(text)
        with pytest.raises(SchemaViolation):
            read_scene_json(p)


# -- grid and pgm --

@given(arrays(bool, (6, 9)), arrays(bool, (6, 9)), arrays(np.float64, (6, 9), elements=st.floats(-5, 5)))
def test_grid_npz_roundtrip(tmp_path_factory, road, ped, elev):
    from dataclasses import replace
    g = replace(BevGrid.empty(GridSpec(-3.0, 2.5, 0.5, 6, 9)), road=road, pedestrian=ped & ~road,
                elevation=np.where(road | ped, elev, np.nan), hit_count=road.astype(np.int64),
                elev_sum=np.where(road, elev, 0.0))
    p = tmp_path_factory.mktemp("g") / "m.npz"
    g.save(p)
    h = BevGrid.load(p)
    assert h.spec == g.spec
    for name in ("road", "pedestrian", "sidewalk", "hit_count", "elev_sum"):
        assert np.array_equal(getattr(h, name), getattr(g, name))
    assert np.array_equal(h.elevation, g.elevation, equal_nan=True)


@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_pgm_roundtrip(tmp_path_factory, img):
    p = tmp_path_factory.mktemp("pgm") / "a.pgm"
    write_pgm(img, p)
    data = p.read_bytes()
    assert np.array_equal(read_pgm(p), img)
    write_pgm(read_pgm(p), p)
    assert p.read_bytes() == data
