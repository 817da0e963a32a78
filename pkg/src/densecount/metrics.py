"""Mask overlap scores, image fidelity, counting recovery, extent reports and paired t-tests."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from densecount.errors import EmptyInput, InvalidInput, InvalidParameter, Undefined
from densecount.geometry import PointCloud, convex_hull, mean_radial_extent

PSNR_CAP_DB = 99.0


def _pair(pred, gt) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise InvalidInput(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def iou(pred, gt) -> float:
    """Intersection over union; 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    union = np.count_nonzero(pred | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred & gt) / union


def dice(pred, gt) -> float:
    """Twice the intersection over the summed areas; 1.0 when both masks are empty."""
    pred, gt = _pair(pred, gt)
    total = np.count_nonzero(pred) + np.count_nonzero(gt)
    if total == 0:
        return 1.0
    return 2.0 * np.count_nonzero(pred & gt) / total


def psnr(img_a, img_b, max_val: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all pixels and channels, capped at 99 dB."""
    if max_val <= 0:
        raise InvalidParameter("max_val must be positive")
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInput(f"image shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2)) if a.size else 0.0
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(max_val * max_val / mse))


def per_view_recall(preds: Sequence, gts: Sequence) -> list[float]:
    """TP / (TP + FN) for each view with ground-truth fruit; other views are skipped."""
    if len(preds) != len(gts):
        raise InvalidInput(f"{len(preds)} predictions for {len(gts)} ground-truth masks")
    out = []
    for p, g in zip(preds, gts):
        p, g = _pair(p, g)
        n_gt = np.count_nonzero(g)
        if n_gt:
            out.append(np.count_nonzero(p & g) / n_gt)
    return out


def mean_pixel_recall(preds: Sequence, gts: Sequence) -> float:
    recalls = per_view_recall(preds, gts)
    if not recalls:
        raise Undefined("no view contains ground-truth fruit pixels")
    return float(np.mean(recalls))


def recovery_rate(count: int, gt_count: int) -> float:
    """Predicted count as a percentage of the ground-truth count."""
    if gt_count <= 0:
        raise InvalidInput("ground-truth count must be positive")
    return 100.0 * count / gt_count


@dataclass(frozen=True)
class ExtentReport:
    point_count: int
    convex_hull_volume: float
    mean_radius: float
    hull_degenerate: bool = False


def extent_report(cloud: PointCloud) -> ExtentReport:
    if len(cloud) == 0:
        raise EmptyInput("extent report of an empty cloud")
    hull = convex_hull(cloud)
    return ExtentReport(len(cloud), hull.volume, mean_radial_extent(cloud), hull.degenerate)


# ---------------------------------------------------------------- paired t-test

_BETA_EPS = 1e-10
_BETA_TINY = 1e-300
_BETA_MAX_ITER = 500


def _beta_continued_fraction(a: float, b: float, x: float) -> float:
    # Modified Lentz evaluation of the incomplete-beta continued fraction.
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > _BETA_TINY else _BETA_TINY)
    h = d
    for m in range(1, _BETA_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _BETA_TINY else _BETA_TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _BETA_TINY else _BETA_TINY
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > _BETA_TINY else _BETA_TINY)
        c = 1.0 + aa / c
        c = c if abs(c) > _BETA_TINY else _BETA_TINY
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _BETA_EPS:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise InvalidParameter("beta shape parameters must be positive")
    if not 0.0 <= x <= 1.0:
        raise InvalidParameter("x must lie in [0, 1]")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    # The fraction converges fast only below the mean; use the symmetry otherwise.
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _beta_continued_fraction(a, b, x) / a
    return 1.0 - front * _beta_continued_fraction(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    return regularized_incomplete_beta(0.5 * df, 0.5, df / (df + t * t))


@dataclass(frozen=True)
class PairedTestResult:
    t_statistic: float
    degrees_of_freedom: int
    p_value: float


def paired_t_test(xs: Sequence[float], ys: Sequence[float]) -> PairedTestResult:
    """Two-sided paired t-test on the differences xs - ys.

    Zero-variance differences: t = 0, p = 1 when the mean is zero, else
    t = +/-inf and p = 0.
    """
    x = np.asarray(xs, dtype=np.float64).reshape(-1)
    y = np.asarray(ys, dtype=np.float64).reshape(-1)
    if len(x) != len(y):
        raise InvalidInput(f"paired samples differ in length: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 2:
        raise InvalidInput("paired t-test needs at least two pairs")
    d = x - y
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return PairedTestResult(0.0, df, 1.0)
        return PairedTestResult(math.copysign(math.inf, mean), df, 0.0)
    t = mean / (sd / math.sqrt(n))
    p = min(1.0, max(0.0, student_t_two_sided_p(t, df)))
    return PairedTestResult(t, df, p)
