import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densecount.denoise import (
    bbox_crop,
    color_filter,
    denoise,
    nearest_rank,
    outlier_mask,
    remove_statistical_outliers,
)
from densecount.errors import InvalidInput, InvalidParameter
from densecount.geometry import Aabb, PointCloud


def brute_force_removed(pts, k, percentile):
    d = np.linalg.norm(pts[:, None] - pts[None], axis=2)
    np.fill_diagonal(d, np.inf)
    mean_d = np.sort(d, axis=1)[:, :k].mean(axis=1)
    ranked = sorted(mean_d)
    cutoff = ranked[max(1, math.ceil(percentile / 100 * len(pts))) - 1]
    return {i for i in range(len(pts)) if mean_d[i] > cutoff}


def removed_set(cloud, k, percentile):
    return set(np.flatnonzero(~outlier_mask(cloud, k, percentile)).tolist())


# ---------------------------------------------------------------- colour


def test_color_filter_white_and_black():
    pts = np.random.default_rng(0).random((20, 3))
    white = PointCloud(pts, np.ones((20, 3)))
    black = PointCloud(pts, np.zeros((20, 3)))
    assert len(color_filter(white, 0.5)) == 20
    assert len(color_filter(black, 0.5)) == 0


def test_color_filter_matches_per_point_check():
    rng = np.random.default_rng(1)
    pts, cols = rng.random((500, 3)), rng.random((500, 3))
    prob = rng.random(500)
    out = color_filter(PointCloud(pts, cols, prob), 0.4)
    keep = [i for i in range(500) if (cols[i][0] + cols[i][1] + cols[i][2]) / 3 >= 0.4]
    assert np.array_equal(out.points, pts[keep])
    assert np.array_equal(out.semantic, prob[keep])


def test_color_filter_needs_colors():
    with pytest.raises(InvalidInput):
        color_filter(PointCloud(np.zeros((3, 3))), 0.1)


# ---------------------------------------------------------------- crop


def test_bbox_crop_cases():
    pts = np.random.default_rng(2).uniform(-1, 1, (400, 3))
    cloud = PointCloud(pts)
    assert len(bbox_crop(cloud, Aabb([-1, -1, -1], [1, 1, 1]))) == 400
    assert len(bbox_crop(cloud, Aabb([5, 5, 5], [6, 6, 6]))) == 0
    left = bbox_crop(cloud, Aabb([-1, -1, -1], [0, 1, 1]))
    right = bbox_crop(cloud, Aabb([0, -1, -1], [1, 1, 1]))
    assert len(left) + len(right) == 400
    assert np.array_equal(left.points, pts[pts[:, 0] <= 0])


def test_bbox_crop_is_inclusive():
    cloud = PointCloud([[0, 0, 0], [1, 1, 1], [1.0000001, 0, 0]])
    assert len(bbox_crop(cloud, Aabb([0, 0, 0], [1, 1, 1]))) == 2


# ---------------------------------------------------------------- outliers


def test_nearest_rank_percentile():
    assert nearest_rank(np.arange(1, 11), 90) == 9
    assert nearest_rank(np.arange(1, 11), 91) == 10
    assert nearest_rank([5.0], 50) == 5.0


def test_grid_with_far_outliers():
    rng = np.random.default_rng(3)
    gx, gy = np.meshgrid(np.arange(10), np.arange(10))
    grid = np.stack([gx.ravel(), gy.ravel(), np.zeros(100)], axis=1) * 0.1
    grid += rng.normal(scale=0.005, size=grid.shape)
    outliers = rng.normal(size=(10, 3))
    outliers = 20 * outliers / np.linalg.norm(outliers, axis=1, keepdims=True)
    pts = np.vstack([grid, outliers])
    removed = removed_set(PointCloud(pts), 4, 90)
    d = np.linalg.norm(grid[:, None] - grid[None], axis=2)
    np.fill_diagonal(d, np.inf)
    worst = int(np.argmax(np.sort(d, axis=1)[:, :4].mean(axis=1)))
    assert removed == set(range(100, 110)) | {worst}


def test_removed_set_matches_brute_force_ranking():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        pts = np.vstack([rng.normal(size=(300, 3)), rng.uniform(-6, 6, (30, 3))])
        assert removed_set(PointCloud(pts), 10, 90) == brute_force_removed(pts, 10, 90)


def test_uniform_cloud_removes_about_ten_percent():
    for seed in range(5):
        pts = np.random.default_rng(seed).random((2000, 3))
        out = remove_statistical_outliers(PointCloud(pts), 10, 90)
        assert 0.09 <= 1 - len(out) / 2000 <= 0.11


def test_identical_points_keep_everything():
    cloud = PointCloud(np.ones((30, 3)))
    assert len(remove_statistical_outliers(cloud, 10, 90)) == 30


@pytest.mark.parametrize("n, k, pct", [(10, 10, 90), (5, 10, 90), (50, 10, 0), (50, 10, 100)])
def test_outlier_preconditions(n, k, pct):
    with pytest.raises(InvalidParameter):
        remove_statistical_outliers(PointCloud(np.random.default_rng(0).random((n, 3))), k, pct)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(12, 300))
def test_outlier_filter_preserves_order_and_channels(seed, n):
    rng = np.random.default_rng(seed)
    pts, cols, prob = rng.normal(size=(n, 3)), rng.random((n, 3)), rng.random(n)
    out = remove_statistical_outliers(PointCloud(pts, cols, prob), 10, 90)
    keep = outlier_mask(PointCloud(pts), 10, 90)
    assert np.array_equal(out.points, pts[keep])
    assert np.array_equal(out.colors, cols[keep]) and np.array_equal(out.semantic, prob[keep])
    assert keep.sum() >= math.ceil(0.9 * n)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), thresh=st.floats(0, 1))
def test_colour_and_crop_are_idempotent(seed, thresh):
    rng = np.random.default_rng(seed)
    cloud = PointCloud(rng.uniform(-2, 2, (200, 3)), rng.random((200, 3)))
    box = Aabb([-1, -1, -1], [1, 1, 1])
    once = color_filter(cloud, thresh)
    assert np.array_equal(color_filter(once, thresh).points, once.points)
    cropped = bbox_crop(cloud, box)
    assert np.array_equal(bbox_crop(cropped, box).points, cropped.points)


# ---------------------------------------------------------------- chain


def test_denoise_chain_order():
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1.5, 1.5, (600, 3))
    cols = rng.random((600, 3))
    box = Aabb([-1, -1, -1], [1, 1, 1])
    cloud = PointCloud(pts, cols)
    expected = remove_statistical_outliers(bbox_crop(color_filter(cloud, 0.3), box), 10, 90)
    got = denoise(cloud, box, 0.3, 10, 90)
    assert np.array_equal(got.points, expected.points)


def test_denoise_tolerates_tiny_and_colourless_clouds():
    box = Aabb([-1, -1, -1], [1, 1, 1])
    assert len(denoise(PointCloud.empty(with_colors=True), box)) == 0
    few = PointCloud(np.zeros((4, 3)))
    assert len(denoise(few, box)) == 4
