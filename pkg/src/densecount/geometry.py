"""Point clouds, boxes, nearest-neighbour queries and extent statistics."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import ConvexHull, QhullError, cKDTree

from densecount.errors import EmptyInput, InvalidInput, InvalidParameter

LEAF_SIZE = 16


@dataclass(frozen=True)
class PointCloud:
    """Positions plus optional per-point RGB and fruit probability.

    Arrays are copied to float64 on construction and treated as read-only.
    """

    points: np.ndarray
    colors: Optional[np.ndarray] = None
    semantic: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise InvalidInput("point coordinates must be finite")
        object.__setattr__(self, "points", pts)
        n = len(pts)
        if self.colors is not None:
            colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
            if len(colors) != n:
                raise InvalidInput(f"{len(colors)} colors for {n} points")
            object.__setattr__(self, "colors", colors)
        if self.semantic is not None:
            sem = np.asarray(self.semantic, dtype=np.float64).reshape(-1)
            if len(sem) != n:
                raise InvalidInput(f"{len(sem)} probabilities for {n} points")
            if n and (sem.min() < 0.0 or sem.max() > 1.0):
                raise InvalidInput("fruit probabilities must lie in [0, 1]")
            object.__setattr__(self, "semantic", sem)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, with_colors: bool = False, with_semantic: bool = False) -> "PointCloud":
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 3)) if with_colors else None,
            np.zeros(0) if with_semantic else None,
        )

    def subset(self, index) -> "PointCloud":
        """Select points by boolean mask or integer index, keeping every channel."""
        index = np.asarray(index)
        return PointCloud(
            self.points[index],
            None if self.colors is None else self.colors[index],
            None if self.semantic is None else self.semantic[index],
        )

    @classmethod
    def concatenate(cls, clouds) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            return cls.empty()
        pts = np.concatenate([c.points for c in clouds])
        colors = semantic = None
        if all(c.colors is not None for c in clouds):
            colors = np.concatenate([c.colors for c in clouds])
        if all(c.semantic is not None for c in clouds):
            semantic = np.concatenate([c.semantic for c in clouds])
        return cls(pts, colors, semantic)


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3)
        hi = np.asarray(self.max, dtype=np.float64).reshape(3)
        if np.any(lo > hi):
            raise InvalidInput(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return np.all((points >= self.min) & (points <= self.max), axis=1)

    def expanded(self, margin: float) -> "Aabb":
        return Aabb(self.min - margin, self.max + margin)


def aabb(cloud: PointCloud) -> Aabb:
    if len(cloud) == 0:
        raise EmptyInput("bounding box of an empty cloud")
    return Aabb(cloud.points.min(axis=0), cloud.points.max(axis=0))


def aabb_volume(box: Aabb) -> float:
    return float(np.prod(box.max - box.min))


class SpatialIndex:
    """Balanced k-d tree (median splits, 16-point leaves) over a cloud."""

    def __init__(self, cloud: PointCloud | np.ndarray, workers: int = 1):
        pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float)
        self.points = pts
        self.workers = workers
        self._tree = cKDTree(pts, leafsize=LEAF_SIZE, balanced_tree=True, compact_nodes=True)

    def __len__(self) -> int:
        return len(self.points)

    def knn(self, queries: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (distances, indices), each of shape (len(queries), k), nearest first."""
        d, i = self._tree.query(np.asarray(queries, float).reshape(-1, 3), k=k, workers=self.workers)
        return d.reshape(-1, k), i.reshape(-1, k)

    def radius_pairs(self, r: float) -> np.ndarray:
        """All index pairs (i < j) with distance <= r, sorted lexicographically."""
        pairs = self._tree.query_pairs(r, output_type="ndarray")
        if len(pairs):
            pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
        return pairs.astype(np.int64).reshape(-1, 2)

    def radius_query(self, query: np.ndarray, r: float) -> np.ndarray:
        return np.sort(np.asarray(self._tree.query_ball_point(np.asarray(query, float), r), dtype=np.int64))


def knn_mean_distances(cloud: PointCloud, k: int, workers: int = 1) -> np.ndarray:
    """Mean Euclidean distance from each point to its k nearest other points."""
    n = len(cloud)
    if k < 1 or k >= n:
        raise InvalidParameter(f"k={k} needs 1 <= k < point count ({n})")
    dist, _ = SpatialIndex(cloud, workers=workers).knn(cloud.points, k + 1)
    # Column 0 is the query point itself (or a coincident duplicate, also at distance 0).
    return dist[:, 1:].mean(axis=1)


class HullResult(NamedTuple):
    volume: float
    degenerate: bool


def convex_hull(cloud: PointCloud | np.ndarray) -> HullResult:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    if len(pts) < 4:
        return HullResult(0.0, True)
    centered = pts - pts.mean(axis=0)
    scale = np.abs(centered).max()
    if scale == 0.0:
        return HullResult(0.0, True)
    # Rank test first; qhull's own degeneracy handling is noisy for near-flat sets.
    sv = np.linalg.svd(centered / scale, compute_uv=False)
    if sv[2] <= 1e-12 * max(sv[0], 1.0) * np.sqrt(len(pts)):
        return HullResult(0.0, True)
    try:
        hull = ConvexHull(pts)
    except QhullError:
        return HullResult(0.0, True)
    return HullResult(float(hull.volume), False)


def convex_hull_volume(cloud: PointCloud | np.ndarray) -> float:
    return convex_hull(cloud).volume


def mean_radial_extent(cloud: PointCloud) -> float:
    if len(cloud) == 0:
        raise EmptyInput("radial extent of an empty cloud")
    pts = cloud.points
    return float(np.linalg.norm(pts - pts.mean(axis=0), axis=1).mean())
