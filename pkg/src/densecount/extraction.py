"""Point-cloud extraction under three strategies.

* ``extract_surface_points``: one max-weight sample per marched ray.
* ``extract_volumetric_points``: every marched sample above a density gate.
* ``build_voxel_grid`` + ``lift_masks``: explicit occupancy labelled by
  visibility-aware majority voting of 2D masks.

The two ray-marched strategies read semantics from a *field*. ``OracleField``
is the exact scene; ``LearnedField`` stands in for a mask-supervised implicit
model whose per-point supervision is attenuated by transmittance from each
training view.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from densecount.errors import InvalidInput, InvalidParameter
from densecount.geometry import Aabb, PointCloud
from densecount.scene import (
    OCCLUDER_COLOR,
    Camera,
    SceneSpec,
    cast_grid,
    instance_at,
    ray_grid,
    ray_sphere_intervals,
)

DEFAULT_SAMPLES = 128
POINT_CHUNK = 200_000


@dataclass(frozen=True)
class RaySample:
    position: tuple
    sigma: float
    alpha: float
    transmittance: float
    weight: float
    fruit_prob: float


# --------------------------------------------------------------------------- fields


class OracleField:
    """Exact semantics: probability 1 inside any fruit, 0 elsewhere."""

    mask_tuned = False

    def fruit_prob(self, points: np.ndarray, in_fruit: np.ndarray) -> np.ndarray:
        return in_fruit.astype(np.float64)


class LearnedField:
    """Semantic field of an implicit model fitted to per-view masks.

    At a point x the fitted probability is the stationary point of a ridge
    penalised, transmittance-weighted squared loss against the mask labels::

        p(x) = sum_v T_v(x) m_v(x) / (prior_weight + sum_v T_v(x))

    ``T_v`` approximates the transmittance from camera v to x from the view's
    depth map: 1 up to the first visible surface (plus ``surface_tol``), then
    exp(-sigma_fruit * excess depth). Points seen by few views, or only
    through other surfaces, receive little supervision and fall back to the
    background prior.

    With ``mask_tuned=True`` the density itself is scaled by p (a density
    field fine-tuned on masks), which is what a density gate then thresholds.
    """

    def __init__(self, cameras: Sequence[Camera], masks: Sequence[np.ndarray],
                 depths: Sequence[np.ndarray], sigma_fruit: float, prior_weight: float = 6.0,
                 surface_tol: float = 0.01, mask_tuned: bool = False):
        if len(cameras) != len(masks) or len(cameras) != len(depths):
            raise InvalidInput("need one mask and one depth map per camera")
        if prior_weight < 0:
            raise InvalidParameter("prior_weight must be non-negative")
        self.cameras = list(cameras)
        self.masks = [np.asarray(m, dtype=bool) for m in masks]
        self.depths = [np.asarray(d, dtype=np.float64) for d in depths]
        self.sigma_fruit = sigma_fruit
        self.prior_weight = prior_weight
        self.surface_tol = surface_tol
        self.mask_tuned = mask_tuned

    def supervision(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(sum_v T_v m_v, sum_v T_v) at each point."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        num = np.zeros(len(pts))
        den = np.zeros(len(pts))
        for s in range(0, len(pts), POINT_CHUNK):
            chunk = pts[s:s + POINT_CHUNK]
            for cam, mask, depth in zip(self.cameras, self.masks, self.depths):
                row, col, ok, dist = cam.pixel_of(chunk)
                surf = depth[row, col]
                excess = np.where(np.isfinite(surf), dist - surf - self.surface_tol, 0.0)
                t = np.where(ok, np.exp(-self.sigma_fruit * np.maximum(excess, 0.0)), 0.0)
                den[s:s + POINT_CHUNK] += t
                num[s:s + POINT_CHUNK] += t * mask[row, col]
        return num, den

    def fruit_prob(self, points: np.ndarray, in_fruit: Optional[np.ndarray] = None) -> np.ndarray:
        num, den = self.supervision(points)
        return num / (self.prior_weight + den + 1e-300)


# --------------------------------------------------------------------------- ray marching


def _composite(sigma: np.ndarray, delta: np.ndarray):
    """alpha, transmittance and weights for (rays, samples) densities."""
    alpha = 1.0 - np.exp(-sigma * delta[:, None])
    trans = np.cumprod(1.0 - alpha, axis=1)
    trans = np.concatenate([np.ones((len(sigma), 1)), trans[:, :-1]], axis=1)
    return alpha, trans, trans * alpha


def _ray_box(origin, dirs, box: Aabb):
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
        t1 = (box.min - origin) * inv
        t2 = (box.max - origin) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmin = np.max(np.minimum(t1, t2), axis=1)
    tmax = np.min(np.maximum(t1, t2), axis=1)
    return np.maximum(tmin, 0.0), tmax


def march_ray(scene: SceneSpec, ray, n_samples: int, t_near: float, t_far: float,
              field=None, jitter: float = 0.5) -> list[RaySample]:
    """Stratified samples along one ray with alpha compositing weights.

    ``ray`` is ``(origin, direction)``; the direction is normalised here.
    Sample k sits at ``t_near + (k + jitter) * delta``.
    """
    if n_samples < 2:
        raise InvalidParameter("n_samples must be >= 2")
    if not t_near < t_far:
        raise InvalidParameter("t_near must be < t_far")
    origin = np.asarray(ray[0], dtype=np.float64)
    d = np.asarray(ray[1], dtype=np.float64)
    d = d / np.linalg.norm(d)
    pos, sigma, in_fruit, delta = march_rays(scene, origin, d[None, :], np.array([t_near]),
                                             np.array([t_far]), n_samples, np.array([jitter]))
    alpha, trans, w = _composite(sigma, delta)
    field = field or OracleField()
    prob = field.fruit_prob(pos[0], in_fruit[0])
    return [
        RaySample(tuple(pos[0, k]), float(sigma[0, k]), float(alpha[0, k]), float(trans[0, k]),
                  float(w[0, k]), float(prob[k]))
        for k in range(n_samples)
    ]


def march_rays(scene: SceneSpec, origin: np.ndarray, dirs: np.ndarray, t_near: np.ndarray,
               t_far: np.ndarray, n_samples: int, jitter: np.ndarray, hits=None):
    """Densities at stratified samples for many rays sharing one origin.

    Returns (positions (R,S,3), sigma (R,S), in_fruit (R,S), delta (R,)).
    ``hits`` may carry precomputed (ray, obj, t_in, t_out) intersections.
    """
    n_rays = len(dirs)
    delta = (t_far - t_near) / n_samples
    if hits is None:
        hits = _all_intersections(scene, origin, dirs)
    ray, obj, t_in, t_out = hits
    fruit_cov = np.zeros((n_rays, n_samples + 1), dtype=np.int32)
    occ_cov = np.zeros((n_rays, n_samples + 1), dtype=np.int32)
    if len(ray):
        d = delta[ray]
        safe = np.where(d > 0, d, 1.0)
        lo = np.ceil((t_in - t_near[ray]) / safe - jitter[ray])
        hi = np.floor((t_out - t_near[ray]) / safe - jitter[ray])
        lo = np.clip(lo, 0, n_samples).astype(np.int64)
        hi = np.clip(hi, -1, n_samples - 1).astype(np.int64)
        ok = (hi >= lo) & (d > 0)
        for target, sel in ((fruit_cov, ok & (obj >= 0)), (occ_cov, ok & (obj < 0))):
            flat = target.reshape(-1)
            np.add.at(flat, ray[sel] * (n_samples + 1) + lo[sel], 1)
            np.add.at(flat, ray[sel] * (n_samples + 1) + hi[sel] + 1, -1)
    in_fruit = np.cumsum(fruit_cov, axis=1)[:, :n_samples] > 0
    in_occ = np.cumsum(occ_cov, axis=1)[:, :n_samples] > 0
    sigma = np.zeros((n_rays, n_samples))
    if len(scene.occluders):
        occ_sigma = _occluder_sigma(scene, hits, n_rays, n_samples, t_near, delta, jitter, in_occ)
        sigma = np.where(in_occ, occ_sigma, 0.0)
    sigma = np.where(in_fruit, scene.sigma_fruit, sigma)
    t = t_near[:, None] + (np.arange(n_samples)[None, :] + jitter[:, None]) * delta[:, None]
    pos = origin[None, None, :] + t[:, :, None] * dirs[:, None, :]
    return pos, sigma, in_fruit, delta


def _occluder_sigma(scene, hits, n_rays, n_samples, t_near, delta, jitter, in_occ):
    dens = scene.occ_density
    if np.ptp(dens) == 0.0:
        return np.full((n_rays, n_samples), dens[0])
    # Mixed blob densities: take the maximum over covering blobs sample by sample.
    ray, obj, t_in, t_out = hits
    sel = obj < 0
    out = np.zeros(n_rays * n_samples)
    for r, o, a, b in zip(ray[sel], obj[sel], t_in[sel], t_out[sel]):
        if delta[r] <= 0:
            continue
        lo = max(int(np.ceil((a - t_near[r]) / delta[r] - jitter[r])), 0)
        hi = min(int(np.floor((b - t_near[r]) / delta[r] - jitter[r])), n_samples - 1)
        if hi >= lo:
            seg = slice(r * n_samples + lo, r * n_samples + hi + 1)
            out[seg] = np.maximum(out[seg], dens[-1 - o])
    return out.reshape(n_rays, n_samples)


def _all_intersections(scene: SceneSpec, origin, dirs):
    parts = []
    for centers, radii, occ in ((scene.centers, scene.radii, False),
                                (scene.occ_centers, scene.occ_radii, True)):
        if len(centers) == 0:
            continue
        r_idx = np.repeat(np.arange(len(dirs)), len(centers))
        o_idx = np.tile(np.arange(len(centers)), len(dirs))
        hit, t0, t1 = ray_sphere_intervals(origin, dirs[r_idx], centers[o_idx], radii[o_idx])
        code = (-1 - o_idx) if occ else o_idx
        parts.append((r_idx[hit], code[hit], t0[hit], t1[hit]))
    if not parts:
        e = np.zeros(0)
        return e.astype(np.int64), e.astype(np.int64), e, e
    return tuple(np.concatenate(x) for x in zip(*parts))


@dataclass
class MarchedView:
    positions: np.ndarray
    sigma: np.ndarray
    in_fruit: np.ndarray
    weights: np.ndarray
    valid: np.ndarray  # ray intersects the crop box


def march_view(scene: SceneSpec, camera: Camera, cell: int, n_samples: int, crop: Aabb,
               rng: np.random.Generator) -> MarchedView:
    """March one camera's stratified ray grid (one ray per ``cell``^2 pixels) through ``crop``."""
    u, v, _, _ = ray_grid(camera, cell, rng)
    jitter = rng.random(len(u))
    dirs = camera.ray_directions(u, v)
    t_near, t_far = _ray_box(camera.position, dirs, crop)
    valid = t_far > t_near
    idx = np.flatnonzero(valid)
    hl = cast_grid(scene, camera, u, v, cell)
    # Remap intersections onto the compacted list of valid rays.
    remap = np.full(len(u), -1, dtype=np.int64)
    remap[idx] = np.arange(len(idx))
    keep = remap[hl.ray] >= 0
    hits = (remap[hl.ray[keep]], hl.obj[keep], hl.t_in[keep], hl.t_out[keep])
    pos, sigma, in_fruit, delta = march_rays(scene, camera.position, dirs[idx], t_near[idx],
                                             t_far[idx], n_samples, jitter[idx], hits=hits)
    _, _, w = _composite(sigma, delta)
    return MarchedView(pos, sigma, in_fruit, w, valid)


def _colors_at(scene: SceneSpec, pts: np.ndarray) -> np.ndarray:
    inst = instance_at(scene, pts)
    colors = np.tile(np.array(OCCLUDER_COLOR), (len(pts), 1))
    hit = inst >= 0
    colors[hit] = scene.fruit_colors[inst[hit]]
    return colors


def extract_surface_points(scene: SceneSpec, cameras: Sequence[Camera], rays_per_view: int,
                           prob_thresh: float = 0.5, rel_density_thresh: float = 0.5,
                           crop: Optional[Aabb] = None, field=None, n_samples: int = DEFAULT_SAMPLES,
                           seed: int = 0) -> PointCloud:
    """Keep the single max-weight sample of each ray, then filter.

    Filters run in order: fruit probability at the kept sample, density
    relative to the densest kept sample, crop box.
    """
    if rays_per_view < 1:
        raise InvalidParameter("rays_per_view must be >= 1")
    crop = crop or scene.canopy_bbox
    field = field or OracleField()
    rng = np.random.default_rng(seed)
    pts, sig, fruit = [], [], []
    for cam in cameras:
        cell = _cell_for(cam, rays_per_view)
        mv = march_view(scene, cam, cell, n_samples, crop, rng)
        if len(mv.weights) == 0:
            continue
        best = np.argmax(mv.weights, axis=1)
        rows = np.arange(len(best))
        hit = mv.weights[rows, best] > 0.0
        pts.append(mv.positions[rows, best][hit])
        sig.append(mv.sigma[rows, best][hit])
        fruit.append(mv.in_fruit[rows, best][hit])
    if not pts:
        return PointCloud.empty(with_colors=True, with_semantic=True)
    pts, sig, fruit = np.concatenate(pts), np.concatenate(sig), np.concatenate(fruit)
    prob = np.clip(field.fruit_prob(pts, fruit), 0.0, 1.0)
    keep = prob >= prob_thresh
    if keep.any():
        keep &= sig >= rel_density_thresh * sig[keep].max()
    keep &= crop.contains(pts)
    pts, prob = pts[keep], prob[keep]
    return PointCloud(pts, _colors_at(scene, pts), prob)


def extract_volumetric_points(scene: SceneSpec, cameras: Sequence[Camera], rays_per_view: int,
                              density_thresh: float = 25.0, crop: Optional[Aabb] = None,
                              field=None, n_samples: int = DEFAULT_SAMPLES,
                              seed: int = 0) -> PointCloud:
    """Keep every marched sample whose (field) density reaches ``density_thresh``."""
    if rays_per_view < 1:
        raise InvalidParameter("rays_per_view must be >= 1")
    crop = crop or scene.canopy_bbox
    field = field or OracleField()
    rng = np.random.default_rng(seed)
    pts, sig, fruit = [], [], []
    for cam in cameras:
        cell = _cell_for(cam, rays_per_view)
        mv = march_view(scene, cam, cell, n_samples, crop, rng)
        # Field probabilities never exceed 1, so the raw-density gate is exact in both modes.
        sel = (mv.sigma > 0.0) & (mv.sigma >= density_thresh)
        pts.append(mv.positions[sel])
        sig.append(mv.sigma[sel])
        fruit.append(mv.in_fruit[sel])
    if not pts:
        return PointCloud.empty(with_colors=True, with_semantic=True)
    pts, sig, fruit = np.concatenate(pts), np.concatenate(sig), np.concatenate(fruit)
    inside = crop.contains(pts)
    pts, sig, fruit = pts[inside], sig[inside], fruit[inside]
    prob = np.clip(field.fruit_prob(pts, fruit), 0.0, 1.0)
    density = sig * prob if field.mask_tuned else sig
    keep = density >= density_thresh
    pts, prob = pts[keep], prob[keep]
    return PointCloud(pts, _colors_at(scene, pts), prob)


def _cell_for(camera: Camera, rays_per_view: int) -> int:
    """Square stratum size (pixels) giving about ``rays_per_view`` rays on this image."""
    cell = int(round(np.sqrt(camera.width * camera.height / rays_per_view)))
    return max(1, min(cell, camera.width, camera.height))


# --------------------------------------------------------------------------- voxels


@dataclass
class VoxelGrid:
    """Sparse occupancy: only occupied voxels are stored, keyed by integer index."""

    origin: np.ndarray
    voxel_size: float
    keys: np.ndarray  # (M, 3) int64, lexicographically sorted and unique
    fruit_votes: np.ndarray = field(default=None)
    bg_votes: np.ndarray = field(default=None)
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.voxel_size <= 0:
            raise InvalidParameter("voxel_size must be positive")
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.keys = np.asarray(self.keys, dtype=np.int64).reshape(-1, 3)
        m = len(self.keys)
        if self.fruit_votes is None:
            self.fruit_votes = np.zeros(m, dtype=np.int64)
        if self.bg_votes is None:
            self.bg_votes = np.zeros(m, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.keys)

    @property
    def occupied(self) -> np.ndarray:
        return np.ones(len(self.keys), dtype=bool)

    @property
    def centers(self) -> np.ndarray:
        return self.origin + (self.keys + 0.5) * self.voxel_size

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Row of each key in this grid, or -1."""
        keys = np.asarray(keys, dtype=np.int64).reshape(-1, 3)
        if len(self.keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        mine = _linear(self.keys)
        q = _linear(keys)
        pos = np.searchsorted(mine, q)
        pos_c = np.minimum(pos, len(mine) - 1)
        return np.where(mine[pos_c] == q, pos_c, -1)

    def boundary(self) -> np.ndarray:
        """Voxels with at least one empty face neighbour."""
        out = np.zeros(len(self.keys), dtype=bool)
        for axis in range(3):
            for step in (-1, 1):
                nb = self.keys.copy()
                nb[:, axis] += step
                out |= self.lookup(nb) < 0
        return out

    def fruit_labels(self) -> np.ndarray:
        """Majority vote; ties (including no votes at all) are background."""
        return self.fruit_votes > self.bg_votes


_KEY_OFFSET = 1 << 20


def _linear(keys: np.ndarray) -> np.ndarray:
    k = keys + _KEY_OFFSET
    return (k[:, 0] << 42) | (k[:, 1] << 21) | k[:, 2]


def _unique_keys(keys: np.ndarray) -> np.ndarray:
    if len(keys) == 0:
        return keys.reshape(0, 3).astype(np.int64)
    lin = _linear(keys)
    _, first = np.unique(lin, return_index=True)
    return keys[first]


def _sphere_voxels(origin, vs, centers, radii, strict=True):
    """Keys of voxels whose centres lie inside any of the spheres."""
    out = []
    for c, r in zip(centers, radii):
        lo = np.floor((c - r - origin) / vs).astype(np.int64)
        hi = np.floor((c + r - origin) / vs).astype(np.int64)
        ax = [np.arange(lo[i], hi[i] + 1) for i in range(3)]
        g = np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1).reshape(-1, 3)
        ctr = origin + (g + 0.5) * vs
        inside = np.einsum("ij,ij->i", ctr - c, ctr - c) <= r * r
        out.append(g[inside])
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(out)


def fibonacci_sphere(n: int) -> np.ndarray:
    k = np.arange(n) + 0.5
    phi = np.arccos(1.0 - 2.0 * k / n)
    theta = np.pi * (1.0 + 5.0**0.5) * k
    return np.stack([np.cos(theta) * np.sin(phi), np.sin(theta) * np.sin(phi), np.cos(phi)], axis=1)


def sfm_points(scene: SceneSpec, cameras: Sequence[Camera], views, spacing: float,
               min_views: int = 2, tol: Optional[float] = None) -> np.ndarray:
    """Surface samples of instances that are directly seen in at least ``min_views`` views.

    A sample is seen in a view when the pixel it projects to shows the same
    instance at (nearly) the same depth.
    """
    if len(scene.instances) == 0:
        return np.zeros((0, 3))
    tol = spacing if tol is None else tol
    pts, owner = [], []
    for k, (c, r) in enumerate(zip(scene.centers, scene.radii)):
        n = max(8, int(np.ceil(4 * np.pi * r * r / spacing**2)))
        pts.append(c + r * fibonacci_sphere(n))
        owner.append(np.full(n, k))
    pts, owner = np.concatenate(pts), np.concatenate(owner)
    seen = np.zeros(len(pts), dtype=np.int64)
    for cam, view in zip(cameras, views):
        row, col, ok, dist = cam.pixel_of(pts)
        same = view.ids[row, col] == scene.ids[owner]
        close = np.abs(dist - view.depth[row, col]) <= tol
        seen += ok & same & close
    return pts[seen >= min_views]


def build_voxel_grid(scene: SceneSpec, voxel_size: float, sfm_mode: bool = False, *,
                     cameras: Optional[Sequence[Camera]] = None, views=None,
                     origin: Optional[np.ndarray] = None) -> VoxelGrid:
    """Occupied voxels of the scene.

    Oracle mode marks voxels whose centres have positive density. SfM mode
    seeds fruit occupancy from multi-view surface samples, dilated by one
    voxel. Foliage is occupied in both modes.
    """
    if voxel_size <= 0:
        raise InvalidParameter("voxel_size must be positive")
    origin = scene.canopy_bbox.min if origin is None else np.asarray(origin, float)
    vs = float(voxel_size)
    occ_keys = _sphere_voxels(origin, vs, scene.occ_centers, scene.occ_radii)
    if sfm_mode:
        if cameras is None or views is None:
            raise InvalidInput("sfm_mode needs cameras and rendered views")
        seeds = sfm_points(scene, cameras, views, spacing=0.5 * vs)
        seed_keys = _unique_keys(np.floor((seeds - origin) / vs).astype(np.int64))
        offsets = np.array([[a, b, c] for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)])
        fruit_keys = (seed_keys[:, None, :] + offsets[None]).reshape(-1, 3)
    else:
        fruit_keys = _sphere_voxels(origin, vs, scene.centers, scene.radii)
    keys = _unique_keys(np.concatenate([fruit_keys, occ_keys]))
    if len(keys):
        keys = keys[np.argsort(_linear(keys), kind="stable")]
    grid = VoxelGrid(origin, vs, keys)
    grid.colors = _voxel_colors(scene, grid)
    return grid


def _voxel_colors(scene: SceneSpec, grid: VoxelGrid) -> np.ndarray:
    ctr = grid.centers
    colors = np.tile(np.array(OCCLUDER_COLOR), (len(ctr), 1))
    if len(scene.instances) and len(ctr):
        from densecount.scene import nearest_instance

        j, surf = nearest_instance(scene, ctr)
        fruitish = surf <= grid.voxel_size * 1.5
        colors[fruitish] = scene.fruit_colors[j[fruitish]]
    return colors


def _cube_pixel_pairs(camera: Camera, centers: np.ndarray, vs: float):
    """Candidate (voxel, flat pixel) pairs from each cube's projected bounding box."""
    from densecount.scene import _enumerate_boxes, _sphere_pixel_boxes

    r0, r1, c0, c1 = _sphere_pixel_boxes(camera, centers, np.full(len(centers), 0.5 * vs), 1)
    return _enumerate_boxes(r0, r1, c0, c1, camera.width)


def voxel_depth_map(grid: VoxelGrid, camera: Camera, candidates: Optional[np.ndarray] = None,
                    chunk: int = 100_000) -> np.ndarray:
    """First-hit distance of each pixel-centre ray against occupied voxels (inf on miss)."""
    depth = np.full(camera.width * camera.height, np.inf)
    idx = np.flatnonzero(grid.boundary()) if candidates is None else candidates
    vs = grid.voxel_size
    for s in range(0, len(idx), chunk):
        sel = idx[s:s + chunk]
        ctr = grid.centers[sel]
        obj, pix = _cube_pixel_pairs(camera, ctr, vs)
        if len(obj) == 0:
            continue
        rr, cc = np.divmod(pix, camera.width)
        dirs = camera.ray_directions(cc + 0.5, rr + 0.5)
        lo = ctr[obj] - 0.5 * vs
        hi = ctr[obj] + 0.5 * vs
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - camera.position) * inv
            t2 = (hi - camera.position) * inv
        t1 = np.where(np.isnan(t1), -np.inf, t1)
        t2 = np.where(np.isnan(t2), np.inf, t2)
        tmin = np.max(np.minimum(t1, t2), axis=1)
        tmax = np.min(np.maximum(t1, t2), axis=1)
        hit = (tmax >= tmin) & (tmax > 0)
        np.minimum.at(depth, pix[hit], np.maximum(tmin[hit], 0.0))
    return depth.reshape(camera.height, camera.width)


def cast_votes(grid: VoxelGrid, camera: Camera, mask: np.ndarray, depth: np.ndarray,
               tol: float) -> tuple[np.ndarray, np.ndarray]:
    """One view's (fruit, background) vote increments for every occupied voxel."""
    row, col, ok, dist = camera.pixel_of(grid.centers)
    visible = ok & (dist <= depth[row, col] + tol)
    label = mask[row, col]
    return (visible & label).astype(np.int64), (visible & ~label).astype(np.int64)


def lift_masks(grid: VoxelGrid, cameras: Sequence[Camera], masks: Sequence[np.ndarray],
               depth_source=None, tol_factor: float = 1.5) -> PointCloud:
    """Label voxels by visibility-aware majority vote and return fruit voxel centres.

    A view votes on a voxel only when the voxel centre lies within
    ``tol_factor * voxel_size`` of the first occupied voxel along its pixel
    ray. ``depth_source`` may supply per-view depth maps instead of the
    voxel ray cast. Votes are stored on ``grid`` (reset first).
    """
    if len(cameras) != len(masks):
        raise InvalidInput(f"{len(masks)} masks for {len(cameras)} cameras")
    for cam, m in zip(cameras, masks):
        if np.shape(m) != (cam.height, cam.width):
            raise InvalidInput("mask dimensions do not match camera")
    if depth_source is not None and len(depth_source) != len(cameras):
        raise InvalidInput("need one depth map per camera")
    grid.fruit_votes = np.zeros(len(grid), dtype=np.int64)
    grid.bg_votes = np.zeros(len(grid), dtype=np.int64)
    if len(grid) == 0:
        return PointCloud.empty(with_colors=True, with_semantic=True)
    boundary = np.flatnonzero(grid.boundary())
    tol = tol_factor * grid.voxel_size
    for k, (cam, m) in enumerate(zip(cameras, masks)):
        if depth_source is None:
            depth = voxel_depth_map(grid, cam, boundary)
        else:
            depth = np.asarray(depth_source[k], dtype=np.float64)
        f, b = cast_votes(grid, cam, np.asarray(m, dtype=bool), depth, tol)
        grid.fruit_votes += f
        grid.bg_votes += b
    return lifted_cloud(grid)


def lifted_cloud(grid: VoxelGrid) -> PointCloud:
    lab = grid.fruit_labels()
    total = grid.fruit_votes + grid.bg_votes
    prob = np.where(total > 0, grid.fruit_votes / np.maximum(total, 1), 0.0)
    colors = None if grid.colors is None else grid.colors[lab]
    return PointCloud(grid.centers[lab], colors, prob[lab])
