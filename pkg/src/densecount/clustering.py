"""DBSCAN, principal-axis 2-means bisection and median-relative recursive splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from densecount.errors import DegenerateSplit, InvalidParameter
from densecount.geometry import PointCloud, SpatialIndex

NOISE = -1


@dataclass(frozen=True)
class ClusterInfo:
    id: int
    members: np.ndarray
    aabb_volume: float
    count: int
    centroid: np.ndarray


@dataclass
class ClusterSet:
    """Per-point labels (cluster id >= 0 or NOISE) over a fixed point array."""

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if np.any(self.labels >= 0) else 0

    @property
    def clusters(self) -> list[ClusterInfo]:
        out = []
        members = _members(self.labels)
        for cid, idx in enumerate(members):
            p = self.points[idx]
            lo, hi = p.min(axis=0), p.max(axis=0)
            out.append(ClusterInfo(cid, idx, float(np.prod(hi - lo)), len(idx), p.mean(axis=0)))
        return out

    def canonical(self) -> "ClusterSet":
        return ClusterSet(self.points, canonicalize(self.labels))


def _members(labels: np.ndarray) -> list[np.ndarray]:
    valid = np.flatnonzero(labels >= 0)
    if len(valid) == 0:
        return []
    order = valid[np.argsort(labels[valid], kind="stable")]
    bounds = np.flatnonzero(np.diff(labels[order])) + 1
    return np.split(order, bounds)


def canonicalize(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters 0..k-1 in order of their lowest member index."""
    labels = np.asarray(labels, dtype=np.int64)
    out = np.full(len(labels), NOISE, dtype=np.int64)
    valid = labels >= 0
    if not valid.any():
        return out
    uniq, first = np.unique(labels[valid], return_index=True)
    pos = np.flatnonzero(valid)[first]
    rank = np.empty(len(uniq), dtype=np.int64)
    rank[np.argsort(pos)] = np.arange(len(uniq))
    out[valid] = rank[np.searchsorted(uniq, labels[valid])]
    return out


def dbscan(cloud: PointCloud | np.ndarray, eps: float, min_pts: int, workers: int = 1) -> ClusterSet:
    """Density clustering with inclusive, self-counting eps-neighbourhoods.

    Equivalent to the sequential algorithm visiting points in ascending
    index: a border point joins the earliest-discovered cluster among its
    core neighbours. Ids are canonicalised by lowest member index.
    """
    if eps <= 0 or min_pts < 1:
        raise InvalidParameter("need eps > 0 and min_pts >= 1")
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, float).reshape(-1, 3)
    n = len(pts)
    labels = np.full(n, NOISE, dtype=np.int64)
    if n == 0:
        return ClusterSet(pts, labels)
    pairs = SpatialIndex(pts, workers=workers).radius_pairs(eps)
    degree = np.bincount(pairs.ravel(), minlength=n) + 1
    core = degree >= min_pts
    core_idx = np.flatnonzero(core)
    if len(core_idx) == 0:
        return ClusterSet(pts, labels)
    cc = pairs[core[pairs[:, 0]] & core[pairs[:, 1]]]
    graph = coo_matrix((np.ones(len(cc), dtype=np.int8), (cc[:, 0], cc[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    comp_core = comp[core_idx]
    uniq, first = np.unique(comp_core, return_index=True)
    # Discovery order of a component = its smallest core index.
    rank = np.empty(comp.max() + 1, dtype=np.int64)
    rank[uniq[np.argsort(core_idx[first])]] = np.arange(len(uniq))
    labels[core_idx] = rank[comp_core]
    a, b = pairs[:, 0], pairs[:, 1]
    src = np.concatenate([a[~core[a] & core[b]], b[core[a] & ~core[b]]])
    dst = np.concatenate([b[~core[a] & core[b]], a[core[a] & ~core[b]]])
    if len(src):
        best = np.full(n, np.iinfo(np.int64).max, dtype=np.int64)
        np.minimum.at(best, src, labels[dst])
        border = np.unique(src)
        labels[border] = best[border]
    return ClusterSet(pts, canonicalize(labels))


def _lloyd(pts: np.ndarray, centers: np.ndarray, max_iter: int = 100):
    assign = None
    history = []
    for _ in range(max_iter):
        d = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = (d[:, 1] < d[:, 0]).astype(np.int64)
        for side in (0, 1):
            if not np.any(new == side):
                # Refill an empty side with the point farthest from the other centre.
                far = int(np.argmax(d[:, 1 - side]))
                new[far] = side
        centers = np.stack([pts[new == 0].mean(axis=0), pts[new == 1].mean(axis=0)])
        history.append(float(sum(((pts[new == s] - centers[s]) ** 2).sum() for s in (0, 1))))
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
    return new, history


def kmeans2(points: np.ndarray, seed: int = 0, max_iter: int = 100, return_history: bool = False):
    """Split points in two with Lloyd iterations seeded at the principal-axis extremes.

    Returns an int array of 0/1 sides; the first point is always on side 0.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 2 or np.all(pts == pts[0]):
        raise DegenerateSplit("need at least two distinct points")
    centered = pts - pts.mean(axis=0)
    _, vecs = np.linalg.eigh(centered.T @ centered)
    proj = centered @ vecs[:, -1]
    rng = np.random.default_rng(seed)
    lo_c = np.flatnonzero(proj == proj.min())
    hi_c = np.flatnonzero(proj == proj.max())
    lo = lo_c[0] if len(lo_c) == 1 else rng.choice(lo_c)
    hi = hi_c[0] if len(hi_c) == 1 else rng.choice(hi_c)
    sides, history = _lloyd(pts, pts[[lo, hi]].copy(), max_iter)
    if sides[0] == 1:
        sides = 1 - sides
    return (sides, history) if return_history else sides


@dataclass(frozen=True)
class SplitConfig:
    volume_multiplier: float = 4.5
    size_multiplier: float = math.inf  # finite values add a point-count trigger
    max_depth: int = 16
    min_cluster_size: int = 0  # 0 = permissive: any separable fragment counts
    refresh_medians: bool = False

    def __post_init__(self):
        if self.volume_multiplier <= 0 or self.size_multiplier <= 0:
            raise InvalidParameter("split multipliers must be positive")
        if self.max_depth < 1:
            raise InvalidParameter("max_depth must be >= 1")
        if self.min_cluster_size < 0:
            raise InvalidParameter("min_cluster_size must be >= 0")


def _box_volume(pts: np.ndarray) -> float:
    return float(np.prod(pts.max(axis=0) - pts.min(axis=0)))


def lower_median(values) -> float:
    v = np.sort(np.asarray(values, dtype=np.float64))
    return float(v[(len(v) - 1) // 2])


def recursive_split(clusters: ClusterSet, cfg: SplitConfig = SplitConfig(), seed: int = 0) -> ClusterSet:
    """Bisect clusters whose box volume or size exceeds a multiple of the median.

    Medians come from the input clusters and stay fixed while splitting runs
    to a fixpoint (``cfg.refresh_medians`` recomputes them every pass
    instead). Children rejoin the pool; a lineage stops after
    ``cfg.max_depth`` splits or on a degenerate split. Returns canonicalised
    labels.
    """
    pts = clusters.points
    labels = clusters.labels.copy()
    n_next = clusters.n_clusters
    depth = np.zeros(max(n_next, 1), dtype=np.int64)
    frozen = np.zeros(max(n_next, 1), dtype=bool)
    v_med = n_med = None
    while True:
        members = _members(labels)
        if not members:
            break
        ids = np.array([labels[m[0]] for m in members])
        vols = np.array([_box_volume(pts[m]) for m in members])
        counts = np.array([len(m) for m in members])
        if v_med is None or cfg.refresh_medians:
            v_med, n_med = lower_median(vols), lower_median(counts)
        over = vols > cfg.volume_multiplier * v_med
        if math.isfinite(cfg.size_multiplier):
            over |= counts > cfg.size_multiplier * n_med
        over &= ~frozen[ids] & (depth[ids] < cfg.max_depth) & (counts >= 2)
        if not over.any():
            break
        for k in np.flatnonzero(over):
            m, cid = members[k], ids[k]
            try:
                sides = kmeans2(pts[m], seed=seed)
            except DegenerateSplit:
                frozen[cid] = True
                continue
            if cfg.min_cluster_size and min(sides.sum(), len(sides) - sides.sum()) < cfg.min_cluster_size:
                frozen[cid] = True
                continue
            labels[m[sides == 1]] = n_next
            depth = np.append(depth, 0)
            frozen = np.append(frozen, False)
            depth[cid] += 1
            depth[n_next] = depth[cid]
            n_next += 1
    return ClusterSet(pts, canonicalize(labels))


def count_instances(clusters: ClusterSet) -> int:
    return clusters.n_clusters
