"""Synthetic canopy scenes: spherical fruit instances inside soft foliage blobs.

Three presets mirror increasing occlusion. Everything downstream is scored
against the exact instance list produced here.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from densecount.errors import InvalidParameter, PackingFailure
from densecount.geometry import Aabb

SIGMA_FRUIT = 50.0
SIGMA_OCC = 8.0
MEAN_RADIUS = 0.04
OCCLUDER_COLOR = (0.12, 0.32, 0.10)


@dataclass(frozen=True)
class Instance:
    id: int
    center: tuple
    radius: float


@dataclass(frozen=True)
class Occluder:
    center: tuple
    radius: float
    density: float = SIGMA_OCC


@dataclass(frozen=True)
class ScenePreset:
    nominal_count: int
    semi_axes: tuple
    occluder_count: int
    occluder_radius: tuple = (0.05, 0.10)
    min_center_factor: float = 0.0  # in units of the mean radius; 0 = contact allowed
    min_gap_factor: float = 0.0  # surface gap in units of the larger of the two radii
    clustered: bool = False
    touch_fraction: float = 0.0  # required share of instances with a touching neighbour
    cluster_size: tuple = (2, 6)
    p_touch: float = 0.0


PRESETS = {
    "separated": ScenePreset(
        nominal_count=152, semi_axes=(0.62, 0.62, 0.45), occluder_count=20,
        occluder_radius=(0.04, 0.07), min_center_factor=3.0, min_gap_factor=1.0,
    ),
    "moderate": ScenePreset(
        nominal_count=283, semi_axes=(0.62, 0.62, 0.48), occluder_count=60,
        occluder_radius=(0.05, 0.09), min_center_factor=2.4,
    ),
    "dense": ScenePreset(
        nominal_count=745, semi_axes=(0.66, 0.66, 0.52), occluder_count=150,
        occluder_radius=(0.05, 0.10), clustered=True, touch_fraction=0.40,
        cluster_size=(2, 6), p_touch=0.30,
    ),
}

CANOPY_CENTER = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class SceneSpec:
    instances: tuple
    occluders: tuple
    canopy_bbox: Aabb
    preset: str
    seed: int
    sigma_fruit: float = SIGMA_FRUIT

    @cached_property
    def centers(self) -> np.ndarray:
        return np.array([i.center for i in self.instances], dtype=np.float64).reshape(-1, 3)

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array([i.radius for i in self.instances], dtype=np.float64)

    @cached_property
    def ids(self) -> np.ndarray:
        return np.array([i.id for i in self.instances], dtype=np.int32)

    @cached_property
    def occ_centers(self) -> np.ndarray:
        return np.array([o.center for o in self.occluders], dtype=np.float64).reshape(-1, 3)

    @cached_property
    def occ_radii(self) -> np.ndarray:
        return np.array([o.radius for o in self.occluders], dtype=np.float64)

    @cached_property
    def occ_density(self) -> np.ndarray:
        return np.array([o.density for o in self.occluders], dtype=np.float64)

    @cached_property
    def fruit_colors(self) -> np.ndarray:
        return np.array([fruit_color(i) for i in self.ids], dtype=np.float64).reshape(-1, 3)

    @property
    def mean_radius(self) -> float:
        return float(self.radii.mean()) if len(self.instances) else MEAN_RADIUS

    @property
    def centroid(self) -> np.ndarray:
        return self.canopy_bbox.center

    def __len__(self) -> int:
        return len(self.instances)


def fruit_color(instance_id: int) -> tuple:
    h = hashlib.sha256(f"fruit-{int(instance_id)}".encode()).digest()
    jitter = np.frombuffer(h[:3], dtype=np.uint8) / 255.0
    base = np.array([0.55, 0.22, 0.45])
    return tuple(np.clip(base + 0.2 * (jitter - 0.5), 0.0, 1.0))


def _sample_in_ellipsoid(rng, semi, center, n):
    out = np.empty((0, 3))
    while len(out) < n:
        cand = rng.uniform(-1.0, 1.0, size=(2 * n + 8, 3))
        cand = cand[np.einsum("ij,ij->i", cand, cand) <= 1.0]
        out = np.concatenate([out, cand])
    return center + out[:n] * semi


def _inside_ellipsoid(p, semi, center, margin=0.0):
    q = (np.asarray(p) - center) / (np.asarray(semi) - margin)
    return np.einsum("...i,...i->...", q, q) <= 1.0


def generate_scene(preset: str, instance_count: int, seed: int, max_attempts: int = 200_000,
                   retries: int = 4) -> SceneSpec:
    """Place ``instance_count`` fruits and a foliage field for one preset.

    The canopy is an ellipsoid whose volume scales with the requested count
    relative to the preset's nominal count, so density is preserved.
    """
    if instance_count < 1:
        raise InvalidParameter("instance_count must be >= 1")
    if preset not in PRESETS:
        raise InvalidParameter(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = PRESETS[preset]
    scale = (instance_count / cfg.nominal_count) ** (1.0 / 3.0)
    semi = np.array(cfg.semi_axes) * scale
    for attempt in range(retries):
        rng = np.random.default_rng([seed, attempt])
        radii = MEAN_RADIUS * rng.uniform(0.9, 1.1, size=instance_count)
        try:
            if cfg.clustered:
                centers = _place_clustered(rng, cfg, semi, radii, max_attempts)
            else:
                centers = _place_uniform(rng, cfg, semi, radii, max_attempts)
        except PackingFailure:
            continue
        if instance_count > 1 and cfg.touch_fraction > 0:
            if touching_fraction(centers, radii) < cfg.touch_fraction:
                continue
        occ = _place_occluders(rng, cfg, semi, centers, radii, instance_count)
        instances = tuple(
            Instance(id=k + 1, center=tuple(map(float, c)), radius=float(r))
            for k, (c, r) in enumerate(zip(centers, radii))
        )
        half = semi + 2.0 * MEAN_RADIUS
        box = Aabb(CANOPY_CENTER - half, CANOPY_CENTER + half)
        return SceneSpec(instances, occ, box, preset, int(seed))
    raise PackingFailure(
        f"could not place {instance_count} instances for preset {preset!r} after {retries} retries"
    )


def _fits(c, r, centers, radii, n, min_dist=0.0, gap_factor=0.0):
    """No overlap with the first ``n`` placed spheres, centres at least ``min_dist`` apart
    and surfaces at least ``gap_factor`` times the larger radius apart."""
    if n == 0:
        return True
    d = np.linalg.norm(centers[:n] - c, axis=1)
    need = radii[:n] + r + gap_factor * np.maximum(radii[:n], r)
    return bool(np.all(d >= np.maximum(need, min_dist)))


def _place_uniform(rng, cfg, semi, radii, max_attempts):
    n_total = len(radii)
    centers = np.zeros((n_total, 3))
    min_d = cfg.min_center_factor * MEAN_RADIUS
    n = attempts = 0
    while n < n_total:
        attempts += 1
        if attempts > max_attempts:
            raise PackingFailure(f"placed {n} of {n_total}")
        r = radii[n]
        c = _sample_in_ellipsoid(rng, semi - r, CANOPY_CENTER, 1)[0]
        if _fits(c, r, centers, radii, n, min_d, cfg.min_gap_factor):
            centers[n] = c
            n += 1
    return centers


def _place_clustered(rng, cfg, semi, radii, max_attempts):
    """Poisson cluster process: anchors, then 2-6 members grown around each anchor."""
    n_total = len(radii)
    centers = np.zeros((n_total, 3))
    n = attempts = 0
    lo, hi = cfg.cluster_size
    while n < n_total:
        attempts += 1
        if attempts > max_attempts:
            raise PackingFailure(f"placed {n} of {n_total}")
        r = radii[n]
        anchor = _sample_in_ellipsoid(rng, semi - r, CANOPY_CENTER, 1)[0]
        if not _fits(anchor, r, centers, radii, n):
            continue
        centers[n] = anchor
        members = [n]
        n += 1
        size = int(rng.integers(lo, hi + 1))
        tries = 0
        while len(members) < size and n < n_total and tries < 60:
            tries += 1
            attempts += 1
            parent = members[int(rng.integers(len(members)))]
            r = radii[n]
            direction = rng.normal(size=3)
            direction /= np.linalg.norm(direction)
            if rng.random() < cfg.p_touch:
                gap_factor = rng.uniform(1.0, 1.08)
            else:
                gap_factor = rng.uniform(1.45, 2.1)
            c = centers[parent] + direction * (radii[parent] + r) * gap_factor
            if not _inside_ellipsoid(c, semi, CANOPY_CENTER, margin=r):
                continue
            if not _fits(c, r, centers, radii, n):
                continue
            centers[n] = c
            members.append(n)
            n += 1
    return centers


def _place_occluders(rng, cfg, semi, centers, radii, instance_count):
    n_occ = int(round(cfg.occluder_count * instance_count / cfg.nominal_count))
    if n_occ == 0:
        return ()
    tree = cKDTree(centers)
    r_fruit_max = float(radii.max())
    out = []
    tries = 0
    while len(out) < n_occ and tries < 200 * n_occ:
        tries += 1
        rad = float(rng.uniform(*cfg.occluder_radius))
        c = _sample_in_ellipsoid(rng, semi, CANOPY_CENTER, 1)[0]
        # Foliage never swallows a fruit: keep blob and fruit volumes disjoint.
        near = tree.query_ball_point(c, rad + r_fruit_max)
        if any(np.linalg.norm(centers[j] - c) < rad + radii[j] for j in near):
            continue
        out.append(Occluder(center=tuple(map(float, c)), radius=rad, density=SIGMA_OCC))
    return tuple(out)


def touching_fraction(centers: np.ndarray, radii: np.ndarray, factor: float = 1.1) -> float:
    """Share of instances with a neighbour closer than ``factor`` x the radius sum."""
    n = len(centers)
    if n < 2:
        return 0.0
    tree = cKDTree(centers)
    pairs = tree.query_pairs(2.0 * factor * radii.max(), output_type="ndarray")
    if len(pairs) == 0:
        return 0.0
    d = np.linalg.norm(centers[pairs[:, 0]] - centers[pairs[:, 1]], axis=1)
    close = pairs[d <= factor * (radii[pairs[:, 0]] + radii[pairs[:, 1]])]
    touched = np.zeros(n, dtype=bool)
    touched[close.ravel()] = True
    return float(touched.mean())


# --------------------------------------------------------------------------- cameras


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray
    focal: float
    width: int
    height: int

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if self.focal <= 0:
            raise InvalidParameter("focal length must be positive")
        fwd = self.look_at - self.position
        if np.linalg.norm(fwd) == 0 or np.linalg.norm(np.cross(fwd, self.up)) < 1e-12:
            raise InvalidParameter("degenerate camera orientation")

    @cached_property
    def rotation(self) -> np.ndarray:
        """Rows are the camera axes in world coordinates: right, down, forward."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    def project(self, points: np.ndarray):
        """World points -> (u, v, camera z, Euclidean distance). Pixel centres sit at +0.5."""
        rel = np.asarray(points, dtype=np.float64).reshape(-1, 3) - self.position
        cam = rel @ self.rotation.T
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.focal * cam[:, 0] / z + 0.5 * self.width
            v = self.focal * cam[:, 1] / z + 0.5 * self.height
        return u, v, z, np.linalg.norm(rel, axis=1)

    def pixel_of(self, points: np.ndarray):
        """Integer (row, col) of each point and a flag for in-front-and-inside-image."""
        u, v, z, dist = self.project(points)
        ok = (z > 1e-9) & (u >= 0) & (u < self.width) & (v >= 0) & (v < self.height)
        col = np.where(ok, np.floor(np.where(ok, u, 0)), 0).astype(np.int64)
        row = np.where(ok, np.floor(np.where(ok, v, 0)), 0).astype(np.int64)
        return row, col, ok, dist

    def ray_directions(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Unit world-space directions through continuous pixel coordinates."""
        x = (np.asarray(u, float) - 0.5 * self.width) / self.focal
        y = (np.asarray(v, float) - 0.5 * self.height) / self.focal
        d = x[..., None] * self.rotation[0] + y[..., None] * self.rotation[1] + self.rotation[2]
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def generate_camera_ring(n: int, radius: float, height: float, scene: SceneSpec, *,
                         second_height: Optional[float] = None, image_size: int = 256,
                         fov_deg: float = 40.0) -> list[Camera]:
    """``n`` cameras evenly spaced in azimuth around the canopy centroid.

    With ``second_height`` the odd-indexed cameras sit on a second elevation
    ring; azimuth spacing is unchanged.
    """
    if n < 1:
        raise InvalidParameter("need at least one camera")
    target = scene.centroid
    focal = 0.5 * image_size / np.tan(np.radians(fov_deg) / 2.0)
    cams = []
    for k in range(n):
        az = 2.0 * np.pi * k / n
        h = height if (second_height is None or k % 2 == 0) else second_height
        pos = target + np.array([radius * np.cos(az), radius * np.sin(az), h])
        cams.append(Camera(pos, target, np.array([0.0, 0.0, 1.0]), focal, image_size, image_size))
    return cams


# --------------------------------------------------------------------------- ray / sphere


def _sphere_pixel_boxes(camera: Camera, centers: np.ndarray, radii: np.ndarray, cell: int):
    """Conservative grid-cell ranges covered by each sphere's projection."""
    rows = camera.height // cell
    cols = camera.width // cell
    n = len(centers)
    if n == 0:
        z = np.zeros(0, dtype=np.int64)
        return z, z, z, z
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], float)
    pts = (centers[:, None, :] + radii[:, None, None] * corners[None]).reshape(-1, 3)
    u, v, z, _ = camera.project(pts)
    u, v, z = u.reshape(n, 8), v.reshape(n, 8), z.reshape(n, 8)
    behind = np.any(z <= 1e-6, axis=1)
    with np.errstate(invalid="ignore"):
        c0 = np.floor(np.nanmin(u, axis=1) / cell)
        c1 = np.floor(np.nanmax(u, axis=1) / cell)
        r0 = np.floor(np.nanmin(v, axis=1) / cell)
        r1 = np.floor(np.nanmax(v, axis=1) / cell)
    c0 = np.where(behind, 0, c0)
    r0 = np.where(behind, 0, r0)
    c1 = np.where(behind, cols - 1, c1)
    r1 = np.where(behind, rows - 1, r1)
    c0 = np.clip(c0, 0, cols).astype(np.int64)
    r0 = np.clip(r0, 0, rows).astype(np.int64)
    c1 = np.clip(c1, -1, cols - 1).astype(np.int64)
    r1 = np.clip(r1, -1, rows - 1).astype(np.int64)
    # Spheres entirely behind the camera still fall in the 'behind' branch; the exact
    # intersection test later rejects them.
    return r0, r1, c0, c1


def _enumerate_boxes(r0, r1, c0, c1, cols):
    """Flatten per-object cell boxes into (object index, flat cell index) pairs."""
    h = np.maximum(r1 - r0 + 1, 0)
    w = np.maximum(c1 - c0 + 1, 0)
    counts = h * w
    total = int(counts.sum())
    if total == 0:
        e = np.zeros(0, dtype=np.int64)
        return e, e
    obj = np.repeat(np.arange(len(counts)), counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    ww = w[obj]
    rr = r0[obj] + local // ww
    cc = c0[obj] + local % ww
    return obj, rr * cols + cc


def ray_sphere_intervals(origin: np.ndarray, dirs: np.ndarray, centers: np.ndarray,
                         radii: np.ndarray):
    """Entry/exit distances of unit rays against spheres (row-aligned arrays).

    Returns (hit, t_in, t_out) with t_in clamped at 0 for origins inside a sphere.
    """
    oc = origin - centers
    b = np.einsum("ij,ij->i", dirs, oc)
    c = np.einsum("ij,ij->i", oc, oc) - radii**2
    disc = b * b - c
    hit = disc >= 0.0
    s = np.sqrt(np.where(hit, disc, 0.0))
    t_in = -b - s
    t_out = -b + s
    hit &= t_out > 0.0
    return hit, np.maximum(t_in, 0.0), t_out


@dataclass
class HitList:
    """Every (ray, object) intersection for one camera's ray grid."""

    ray: np.ndarray
    obj: np.ndarray  # instance index (>= 0) or occluder index encoded as -1 - k
    t_in: np.ndarray
    t_out: np.ndarray
    n_rays: int

    @property
    def is_fruit(self) -> np.ndarray:
        return self.obj >= 0


def ray_grid(camera: Camera, cell: int = 1, rng: Optional[np.random.Generator] = None):
    """Continuous pixel coordinates of one ray per ``cell`` x ``cell`` block.

    Without ``rng`` rays pass through block centres; with it each ray is
    jittered uniformly inside its block (stratified sampling).
    """
    rows, cols = camera.height // cell, camera.width // cell
    rr, cc = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    if rng is None:
        ju = jv = np.full((rows, cols), 0.5)
    else:
        jv = rng.random((rows, cols))
        ju = rng.random((rows, cols))
    u = (cc + ju) * cell
    v = (rr + jv) * cell
    return u.ravel(), v.ravel(), rows, cols


def cast_grid(scene: SceneSpec, camera: Camera, u: np.ndarray, v: np.ndarray, cell: int,
              include_occluders: bool = True) -> HitList:
    rows, cols = camera.height // cell, camera.width // cell
    dirs = camera.ray_directions(u, v)
    parts = []
    groups = [(scene.centers, scene.radii, False)]
    if include_occluders:
        groups.append((scene.occ_centers, scene.occ_radii, True))
    for centers, radii, is_occ in groups:
        if len(centers) == 0:
            continue
        r0, r1, c0, c1 = _sphere_pixel_boxes(camera, centers, radii, cell)
        obj, ray = _enumerate_boxes(r0, r1, c0, c1, cols)
        if len(obj) == 0:
            continue
        hit, t0, t1 = ray_sphere_intervals(camera.position, dirs[ray], centers[obj], radii[obj])
        code = (-1 - obj) if is_occ else obj
        parts.append((ray[hit], code[hit], t0[hit], t1[hit]))
    if not parts:
        e = np.zeros(0)
        return HitList(e.astype(np.int64), e.astype(np.int64), e, e, rows * cols)
    ray, obj, t0, t1 = (np.concatenate(x) for x in zip(*parts))
    return HitList(ray, obj, t0, t1, rows * cols)


def first_hits(hits: HitList):
    """Nearest hit per ray: (depth with inf for misses, hit code or sentinel)."""
    depth = np.full(hits.n_rays, np.inf)
    owner = np.full(hits.n_rays, np.iinfo(np.int64).min, dtype=np.int64)
    if len(hits.ray) == 0:
        return depth, owner
    # Exact depth ties resolve to fruit (fruit codes are >= 0, sort them first).
    order = np.lexsort((~hits.is_fruit, hits.t_in, hits.ray))
    ray_sorted = hits.ray[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = ray_sorted[1:] != ray_sorted[:-1]
    sel = order[first]
    depth[hits.ray[sel]] = hits.t_in[sel]
    owner[hits.ray[sel]] = hits.obj[sel]
    return depth, owner


@dataclass
class View:
    mask: np.ndarray  # bool (H, W)
    depth: np.ndarray  # float (H, W), inf where nothing is hit
    ids: np.ndarray  # int32 (H, W), instance id or 0


def render_views(scene: SceneSpec, camera: Camera) -> View:
    """Analytic per-pixel render: fruit mask, nearest-hit depth and instance ids."""
    u, v, rows, cols = ray_grid(camera, 1)
    hits = cast_grid(scene, camera, u, v, 1)
    depth, owner = first_hits(hits)
    fruit = owner >= 0
    ids = np.zeros(len(owner), dtype=np.int32)
    ids[fruit] = scene.ids[owner[fruit]]
    return View(fruit.reshape(rows, cols), depth.reshape(rows, cols), ids.reshape(rows, cols))


def render_all(scene: SceneSpec, cameras) -> list[View]:
    return [render_views(scene, cam) for cam in cameras]


# --------------------------------------------------------------------------- density oracle


def sample_density(scene: SceneSpec, p) -> tuple:
    """Density and fruit probability at points ``p`` ((3,) or (N, 3)).

    Fruit interiors carry ``scene.sigma_fruit``; foliage blobs their own
    density; points inside both count as fruit.
    """
    pts = np.asarray(p, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, 3)
    sigma = np.zeros(len(pts))
    prob = np.zeros(len(pts))
    if len(scene.occluders):
        inside, which = _containing(pts, scene.occ_centers, scene.occ_radii, reduce="max_density",
                                    density=scene.occ_density)
        sigma[inside] = which[inside]
    if len(scene.instances):
        inside, _ = _containing(pts, scene.centers, scene.radii)
        sigma[inside] = scene.sigma_fruit
        prob[inside] = 1.0
    if single:
        return float(sigma[0]), float(prob[0])
    return sigma, prob


def _containing(pts, centers, radii, reduce="any", density=None):
    tree = cKDTree(centers)
    ptree = cKDTree(pts)
    sdm = ptree.sparse_distance_matrix(tree, float(radii.max()), output_type="ndarray")
    inside = np.zeros(len(pts), dtype=bool)
    val = np.zeros(len(pts))
    if len(sdm):
        ok = sdm["v"] <= radii[sdm["j"]]
        i, j = sdm["i"][ok], sdm["j"][ok]
        inside[i] = True
        if reduce == "max_density":
            np.maximum.at(val, i, density[j])
    return inside, val


def instance_at(scene: SceneSpec, pts: np.ndarray) -> np.ndarray:
    """Index of the instance containing each point, or -1."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    out = np.full(len(pts), -1, dtype=np.int64)
    if len(scene.instances) == 0 or len(pts) == 0:
        return out
    d, j = cKDTree(scene.centers).query(pts, k=1)
    ok = d <= scene.radii[j]
    out[ok] = j[ok]
    return out


def nearest_instance(scene: SceneSpec, pts: np.ndarray) -> tuple:
    """Index of the instance whose surface is nearest each point and that distance."""
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    k = min(8, len(scene.instances))
    d, j = cKDTree(scene.centers).query(pts, k=k)
    d, j = d.reshape(len(pts), k), j.reshape(len(pts), k)
    surf = d - scene.radii[j]
    best = np.argmin(surf, axis=1)
    rows = np.arange(len(pts))
    return j[rows, best], surf[rows, best]


def visibility_counts(scene: SceneSpec, views) -> np.ndarray:
    """Number of views in which each instance covers at least one pixel."""
    counts = np.zeros(len(scene.instances), dtype=np.int64)
    for view in views:
        seen = np.unique(view.ids[view.ids > 0])
        counts[seen - 1] += 1
    return counts


def pixel_counts(scene: SceneSpec, views) -> np.ndarray:
    """(n_views, n_instances) visible pixel counts."""
    out = np.zeros((len(views), len(scene.instances)), dtype=np.int64)
    for k, view in enumerate(views):
        out[k] = np.bincount(view.ids.ravel(), minlength=len(scene.instances) + 1)[1:]
    return out
