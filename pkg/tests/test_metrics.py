import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import special, stats

from densecount.errors import EmptyInput, InvalidInput, InvalidParameter, Undefined
from densecount.geometry import PointCloud, convex_hull_volume, mean_radial_extent
from densecount.metrics import (
    PSNR_CAP_DB,
    PairedTestResult,
    dice,
    extent_report,
    iou,
    mean_pixel_recall,
    paired_t_test,
    per_view_recall,
    psnr,
    recovery_rate,
    regularized_incomplete_beta,
    student_t_two_sided_p,
)

# d = [1, 2, 3, 4, 5]: t = 3 / (sqrt(2.5) / sqrt(5)) = 3 * sqrt(2), df = 4.
T_FIXED = 3.0 * math.sqrt(2.0)
P_FIXED = 0.013236  # two-sided Student-t tail at 4.2426 with 4 df, 6 significant digits


# ---------------------------------------------------------------- IoU / Dice


def test_iou_dice_examples():
    full = np.ones((8, 8), bool)
    left = np.zeros((8, 8), bool)
    left[:, :4] = True
    right = ~left
    assert iou(full, full) == 1.0 and dice(full, full) == 1.0
    assert iou(left, right) == 0.0 and dice(left, right) == 0.0
    assert iou(left, full) == 0.5
    assert dice(left, full) == pytest.approx(2 / 3, abs=1e-15)


def test_empty_masks_score_one():
    z = np.zeros((4, 4), bool)
    assert iou(z, z) == 1.0 and dice(z, z) == 1.0


def test_mask_shape_mismatch():
    with pytest.raises(InvalidInput):
        iou(np.zeros((3, 3)), np.zeros((3, 4)))
    with pytest.raises(InvalidInput):
        dice(np.zeros((3, 3)), np.zeros((4, 3)))


def test_dice_iou_identity_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(100):
        a = rng.random((32, 32)) < rng.random()
        b = rng.random((32, 32)) < rng.random()
        j = iou(a, b)
        assert dice(a, b) == pytest.approx(2 * j / (1 + j), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), pa=st.floats(0, 1), pb=st.floats(0, 1))
def test_iou_never_exceeds_dice(seed, pa, pb):
    rng = np.random.default_rng(seed)
    a, b = rng.random((16, 16)) < pa, rng.random((16, 16)) < pb
    j, d = iou(a, b), dice(a, b)
    assert j <= d + 1e-15
    if j not in (0.0, 1.0):
        assert j < d


# ---------------------------------------------------------------- PSNR


def test_psnr_cap_and_closed_form():
    img = np.random.default_rng(1).random((16, 16, 3))
    assert psnr(img, img) == PSNR_CAP_DB == 99.0
    assert psnr(np.zeros((8, 8)), np.full((8, 8), 0.5)) == pytest.approx(10 * math.log10(4), abs=1e-6)
    assert psnr(np.zeros((8, 8)), np.full((8, 8), 127.5), max_val=255.0) == pytest.approx(6.0206, abs=1e-4)


def test_psnr_matches_direct_mse_on_8bit_images():
    rng = np.random.default_rng(2)
    a = rng.integers(0, 256, (24, 24, 3))
    b = rng.integers(0, 256, (24, 24, 3))
    mse = sum(float(x - y) ** 2 for x, y in zip(a.ravel(), b.ravel())) / a.size
    assert psnr(a, b, 255.0) == pytest.approx(10 * math.log10(255.0**2 / mse), abs=1e-9)


def test_psnr_errors():
    with pytest.raises(InvalidInput):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(InvalidParameter):
        psnr(np.zeros((2, 2)), np.zeros((2, 2)), 0.0)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), e1=st.floats(0.01, 0.4), e2=st.floats(0.01, 0.4))
def test_psnr_symmetric_and_decreasing(seed, e1, e2):
    a = np.random.default_rng(seed).random((8, 8))
    assert psnr(a, a + e1) == psnr(a + e1, a)
    if e1 < e2:
        assert psnr(a, a + e1) > psnr(a, a + e2)


# ---------------------------------------------------------------- recall


def test_mean_pixel_recall_cases():
    rng = np.random.default_rng(3)
    gts, halves = [], []
    for _ in range(4):
        g = np.zeros((10, 10), bool)
        idx = rng.choice(100, size=2 * int(rng.integers(1, 30)), replace=False)
        g.ravel()[idx] = True
        p = np.zeros_like(g)
        p.ravel()[idx[: len(idx) // 2]] = True
        gts.append(g)
        halves.append(p)
    assert mean_pixel_recall(gts, gts) == 1.0
    assert mean_pixel_recall([np.zeros_like(g) for g in gts], gts) == 0.0
    assert mean_pixel_recall(halves, gts) == 0.5


def test_views_without_fruit_are_skipped():
    g = np.zeros((4, 4), bool)
    g[0, 0] = True
    z = np.zeros((4, 4), bool)
    assert per_view_recall([g, z], [g, z]) == [1.0]
    with pytest.raises(Undefined):
        mean_pixel_recall([z], [z])
    with pytest.raises(InvalidInput):
        mean_pixel_recall([z, z], [z])


# ---------------------------------------------------------------- recovery


@pytest.mark.parametrize("count, gt, expected", [(714, 745, 95.84), (661, 745, 88.72), (0, 152, 0.0)])
def test_recovery_rate(count, gt, expected):
    assert recovery_rate(count, gt) == pytest.approx(expected, abs=0.005)


def test_recovery_rate_scale_consistent_and_guarded():
    assert recovery_rate(300, 400) == recovery_rate(600, 800)
    with pytest.raises(InvalidInput):
        recovery_rate(3, 0)


# ---------------------------------------------------------------- extent


def test_extent_report_unit_cube():
    cube = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], float)
    rep = extent_report(PointCloud(cube))
    assert rep.point_count == 8
    assert rep.convex_hull_volume == pytest.approx(1.0, abs=1e-9)
    assert rep.mean_radius == pytest.approx(math.sqrt(3) / 2, abs=1e-12)
    assert not rep.hull_degenerate


def test_extent_report_matches_geometry_oracles():
    rng = np.random.default_rng(4)
    v = rng.normal(size=(500, 3))
    pts = v / np.linalg.norm(v, axis=1, keepdims=True) * rng.random((500, 1)) ** (1 / 3)
    rep = extent_report(PointCloud(pts))
    assert (rep.point_count, rep.convex_hull_volume, rep.mean_radius) == (
        500, convex_hull_volume(pts), mean_radial_extent(PointCloud(pts)))


def test_extent_report_empty():
    with pytest.raises(EmptyInput):
        extent_report(PointCloud.empty())


def test_extent_report_flat_cloud_flags_degenerate_hull():
    rep = extent_report(PointCloud([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]]))
    assert rep.convex_hull_volume == 0.0 and rep.hull_degenerate


# ---------------------------------------------------------------- t-test


def test_t_test_fixed_case():
    res = paired_t_test([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.t_statistic == pytest.approx(T_FIXED, abs=1e-4)
    assert res.degrees_of_freedom == 4
    assert res.p_value == pytest.approx(P_FIXED, abs=1e-4)
    ref = stats.ttest_rel([1, 2, 3, 4, 5], [0, 0, 0, 0, 0])
    assert res.t_statistic == pytest.approx(ref.statistic, abs=1e-9)
    assert res.p_value == pytest.approx(ref.pvalue, abs=1e-9)


def test_t_test_zero_variance_conventions():
    assert paired_t_test([1, 2, 3], [1, 2, 3]) == PairedTestResult(0.0, 2, 1.0)
    up = paired_t_test([2, 3, 4], [1, 2, 3])
    assert up.t_statistic == math.inf and up.p_value == 0.0
    down = paired_t_test([1, 2, 3], [2, 3, 4])
    assert down.t_statistic == -math.inf and down.p_value == 0.0


def test_t_test_errors():
    with pytest.raises(InvalidInput):
        paired_t_test([1, 2], [1])
    with pytest.raises(InvalidInput):
        paired_t_test([1], [2])


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 60), shift=st.floats(-100, 100))
def test_t_test_against_scipy_and_symmetries(seed, n, shift):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(size=n) + rng.normal()
    res = paired_t_test(x, y)
    ref = stats.ttest_rel(x, y)
    assert res.t_statistic == pytest.approx(ref.statistic, rel=1e-9, abs=1e-12)
    assert res.p_value == pytest.approx(ref.pvalue, rel=1e-7, abs=1e-12)
    assert 0.0 <= res.p_value <= 1.0
    flipped = paired_t_test(y, x)
    assert flipped.t_statistic == pytest.approx(-res.t_statistic, rel=1e-12)
    assert flipped.p_value == pytest.approx(res.p_value, rel=1e-12)
    same_d = paired_t_test(x - y, np.zeros(n))
    assert same_d.p_value == pytest.approx(res.p_value, rel=1e-9)
    shifted = paired_t_test(x + shift, y + shift)
    assert shifted.p_value == pytest.approx(res.p_value, rel=1e-6, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(a=st.floats(0.1, 50), b=st.floats(0.1, 50), x=st.floats(0, 1))
def test_incomplete_beta_against_scipy(a, b, x):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(special.betainc(a, b, x), abs=1e-9)


def test_two_sided_p_limits():
    assert student_t_two_sided_p(0.0, 5) == pytest.approx(1.0)
    assert student_t_two_sided_p(math.inf, 5) == 0.0
    assert student_t_two_sided_p(2.0, 10) == pytest.approx(2 * stats.t.sf(2.0, 10), rel=1e-9)
