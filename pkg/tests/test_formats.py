import math

import numpy as np
import pytest

from densecount.errors import InvalidInput
from densecount.extraction import build_voxel_grid
from densecount.formats import (
    read_csv,
    read_depth,
    read_pgm,
    read_ply,
    read_scene,
    read_voxels,
    write_csv,
    write_depth,
    write_pgm,
    write_ply,
    write_scene,
    write_voxels,
)
from densecount.geometry import PointCloud
from densecount.scene import generate_scene


def test_ply_round_trip_all_channels(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(50, 3))
    colors = rng.integers(0, 256, (50, 3)) / 255.0
    prob = rng.random(50)
    labels = rng.integers(-1, 5, 50)
    write_ply(tmp_path / "c.ply", PointCloud(pts, colors, prob), labels)
    cloud, got = read_ply(tmp_path / "c.ply")
    assert np.array_equal(cloud.points, pts)
    assert np.allclose(cloud.colors, colors, atol=1e-12)
    assert np.array_equal(cloud.semantic, prob)
    assert np.array_equal(got, labels)


def test_ply_positions_only_and_empty(tmp_path):
    write_ply(tmp_path / "a.ply", PointCloud([[1.5, -2.25, 3.0]]))
    cloud, labels = read_ply(tmp_path / "a.ply")
    assert cloud.points.tolist() == [[1.5, -2.25, 3.0]] and cloud.colors is None and labels is None
    write_ply(tmp_path / "e.ply", PointCloud.empty(with_colors=True, with_semantic=True))
    assert len(read_ply(tmp_path / "e.ply")[0]) == 0


def test_ply_header_is_standard(tmp_path):
    write_ply(tmp_path / "h.ply", PointCloud(np.zeros((2, 3)), np.ones((2, 3))))
    text = (tmp_path / "h.ply").read_text().splitlines()
    assert text[:3] == ["ply", "format ascii 1.0", "element vertex 2"]
    assert "property uchar red" in text and "end_header" in text


def test_ply_rejects_garbage_and_label_mismatch(tmp_path):
    (tmp_path / "bad.ply").write_text("not a ply\n")
    with pytest.raises(InvalidInput):
        read_ply(tmp_path / "bad.ply")
    with pytest.raises(InvalidInput):
        write_ply(tmp_path / "x.ply", PointCloud(np.zeros((3, 3))), [1, 2])


def test_pgm_round_trip(tmp_path):
    mask = np.random.default_rng(1).random((17, 23)) < 0.3
    write_pgm(tmp_path / "m.pgm", mask)
    assert np.array_equal(read_pgm(tmp_path / "m.pgm"), mask)
    assert (tmp_path / "m.pgm").read_bytes().startswith(b"P5\n23 17\n255\n")


def test_pgm_with_comment_line(tmp_path):
    (tmp_path / "c.pgm").write_bytes(b"P5\n# made by hand\n2 1\n255\n\x00\xff")
    assert read_pgm(tmp_path / "c.pgm").tolist() == [[False, True]]


def test_depth_round_trip_keeps_inf(tmp_path):
    depth = np.random.default_rng(2).random((5, 7)).astype(np.float32).astype(np.float64)
    depth[0, 0] = np.inf
    write_depth(tmp_path / "d.raw", depth)
    assert np.array_equal(read_depth(tmp_path / "d.raw"), depth)


def test_scene_round_trip_is_exact(tmp_path):
    scene = generate_scene("moderate", 40, 3)
    write_scene(tmp_path / "s.txt", scene)
    back = read_scene(tmp_path / "s.txt")
    assert back.instances == scene.instances and back.occluders == scene.occluders
    assert np.array_equal(back.canopy_bbox.min, scene.canopy_bbox.min)
    assert (back.preset, back.seed, back.sigma_fruit) == (scene.preset, scene.seed, scene.sigma_fruit)


def test_scene_file_count_mismatch(tmp_path):
    scene = generate_scene("separated", 5, 1)
    write_scene(tmp_path / "s.txt", scene)
    text = (tmp_path / "s.txt").read_text().replace("instance_count = 5", "instance_count = 6")
    (tmp_path / "s.txt").write_text(text)
    with pytest.raises(InvalidInput):
        read_scene(tmp_path / "s.txt")


def test_voxel_round_trip(tmp_path):
    grid = build_voxel_grid(generate_scene("separated", 4, 2), 0.02)
    grid.fruit_votes = np.arange(len(grid)) % 7
    grid.bg_votes = np.arange(len(grid)) % 3
    write_voxels(tmp_path / "v.txt", grid)
    back = read_voxels(tmp_path / "v.txt")
    assert np.array_equal(back.keys, grid.keys)
    assert np.array_equal(back.origin, grid.origin) and back.voxel_size == grid.voxel_size
    assert np.array_equal(back.fruit_votes, grid.fruit_votes) and np.array_equal(back.bg_votes, grid.bg_votes)


def test_csv_round_trip_and_float_repr(tmp_path):
    rows = [("a", 1, 0.1 + 0.2, True), ("b,c", -2, math.inf, False)]
    write_csv(tmp_path / "t.csv", ("name", "n", "x", "flag"), rows)
    raw = (tmp_path / "t.csv").read_bytes()
    assert b"\r" not in raw
    back = read_csv(tmp_path / "t.csv")
    assert back[0] == {"name": "a", "n": "1", "x": repr(0.1 + 0.2), "flag": "true"}
    assert back[1]["name"] == "b,c" and float(back[1]["x"]) == math.inf
