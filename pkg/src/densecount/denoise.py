"""Point-cloud cleanup applied before clustering: colour, crop, kNN outliers."""

from __future__ import annotations

import math

import numpy as np

from densecount.errors import InvalidInput, InvalidParameter
from densecount.geometry import Aabb, PointCloud, knn_mean_distances


def luminance(colors: np.ndarray) -> np.ndarray:
    return np.asarray(colors, dtype=np.float64).mean(axis=1)


def color_filter(cloud: PointCloud, luminance_thresh: float = 0.15) -> PointCloud:
    if cloud.colors is None:
        raise InvalidInput("color_filter needs a colour channel")
    return cloud.subset(luminance(cloud.colors) >= luminance_thresh)


def bbox_crop(cloud: PointCloud, box: Aabb) -> PointCloud:
    return cloud.subset(box.contains(cloud.points))


def nearest_rank(values: np.ndarray, percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    rank = max(1, math.ceil(percentile / 100.0 * len(v)))
    return float(v[rank - 1])


def outlier_mask(cloud: PointCloud, k: int = 10, percentile: float = 90.0,
                 workers: int = 1) -> np.ndarray:
    """True for points kept: mean kNN distance not strictly above the cutoff."""
    if not 0.0 < percentile < 100.0:
        raise InvalidParameter("percentile must lie in (0, 100)")
    if len(cloud) <= k:
        raise InvalidParameter(f"need more than k={k} points, got {len(cloud)}")
    d = knn_mean_distances(cloud, k, workers=workers)
    return d <= nearest_rank(d, percentile)


def remove_statistical_outliers(cloud: PointCloud, k: int = 10, percentile: float = 90.0,
                                workers: int = 1) -> PointCloud:
    return cloud.subset(outlier_mask(cloud, k, percentile, workers))


def denoise(cloud: PointCloud, box: Aabb, luminance_thresh: float = 0.15, k: int = 10,
            percentile: float = 90.0, workers: int = 1) -> PointCloud:
    """color_filter -> bbox_crop -> remove_statistical_outliers.

    Steps that cannot apply (no colours; too few points for k neighbours) are
    skipped rather than failing, so sparse or empty reconstructions still count.
    """
    if cloud.colors is not None:
        cloud = color_filter(cloud, luminance_thresh)
    cloud = bbox_crop(cloud, box)
    if len(cloud) > k:
        cloud = remove_statistical_outliers(cloud, k, percentile, workers)
    return cloud
