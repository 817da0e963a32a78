"""End-to-end runs: scene -> views -> (degrade) -> extraction -> denoise -> cluster -> count -> metrics.

Seeds: every stage draws from ``derive_seed(root, stage)``, the first eight
bytes (little endian) of sha256("<root>:<stage>"). Re-running one stage in
isolation therefore reproduces its randomness exactly.
"""

from __future__ import annotations

import contextlib
import hashlib
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from densecount.clustering import ClusterSet, SplitConfig, count_instances, dbscan, recursive_split
from densecount.config import GT_COUNTS, METHODS, PipelineConfig, degraded_profile
from densecount.degrade import degrade_masks
from densecount.denoise import denoise
from densecount.errors import DenseCountError, EmptyInput, InvalidParameter
from densecount.extraction import (LearnedField, VoxelGrid, build_voxel_grid, extract_surface_points,
                                   extract_volumetric_points, lift_masks)
from densecount.formats import (ensure_dir, write_csv, write_depth, write_pgm, write_ply, write_scene,
                                write_voxels)
from densecount.geometry import PointCloud
from densecount.metrics import ExtentReport, dice, extent_report, iou, psnr, recovery_rate
from densecount.scene import (OCCLUDER_COLOR, Camera, SceneSpec, View, generate_camera_ring,
                              generate_scene, render_all)

log = logging.getLogger(__name__)

SUMMARY_HEADER = ("method", "scene", "gt", "count", "recovery")


class StageError(DenseCountError):
    """A pipeline stage failed; ``stage`` names it and the original error is chained."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"stage '{stage}' failed: {error}")
        self.stage = stage


@contextlib.contextmanager
def stage(name: str, timings: Optional[dict] = None):
    start = time.perf_counter()
    try:
        yield
    except StageError:
        raise
    except (DenseCountError, ValueError, ArithmeticError) as exc:
        raise StageError(name, exc) from exc
    finally:
        if timings is not None:
            timings[name] = timings.get(name, 0.0) + time.perf_counter() - start


def derive_seed(root: int, stage_name: str) -> int:
    digest = hashlib.sha256(f"{int(root)}:{stage_name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def scene_label(cfg: PipelineConfig) -> str:
    return f"{cfg.preset}-{cfg.count}-s{cfg.seed}"


# ------------------------------------------------------------------ stages


@dataclass
class SceneBundle:
    scene: SceneSpec
    cameras: list
    views: list
    masks: list  # supervision masks: perfect, or degraded when a target recall is set
    achieved_recall: float = 1.0


def build_scene(cfg: PipelineConfig) -> SceneBundle:
    scene = generate_scene(cfg.preset, cfg.count, derive_seed(cfg.seed, "scene"))
    cameras = generate_camera_ring(cfg.views, cfg.ring_radius, cfg.ring_height, scene,
                                   second_height=cfg.second_height, image_size=cfg.image_size,
                                   fov_deg=cfg.fov_deg)
    views = render_all(scene, cameras)
    return SceneBundle(scene, cameras, views, [v.mask for v in views])


def apply_degradation(cfg: PipelineConfig, bundle: SceneBundle) -> SceneBundle:
    if cfg.target_recall is None:
        return bundle
    result = degrade_masks([v.mask for v in bundle.views], [v.ids for v in bundle.views],
                           cfg.target_recall, derive_seed(cfg.seed, "degrade"))
    return SceneBundle(bundle.scene, bundle.cameras, bundle.views, result.masks, result.achieved_recall)


def extract(cfg: PipelineConfig, bundle: SceneBundle, method: str) -> tuple[PointCloud, Optional[VoxelGrid]]:
    """Point cloud of one extraction strategy (plus the labelled grid for ``lifted``)."""
    scene, cams = bundle.scene, bundle.cameras
    depths = [v.depth for v in bundle.views]
    if method == "surface":
        fld = LearnedField(cams, bundle.masks, depths, scene.sigma_fruit, cfg.prior_weight)
        cloud = extract_surface_points(scene, cams, cfg.rays_per_view, cfg.prob_thresh,
                                       cfg.rel_density_thresh, field=fld, n_samples=cfg.n_samples,
                                       seed=derive_seed(cfg.seed, "surface"))
        return cloud, None
    if method == "volumetric":
        fld = LearnedField(cams, bundle.masks, depths, scene.sigma_fruit, cfg.prior_weight, mask_tuned=True)
        cloud = extract_volumetric_points(scene, cams, cfg.volumetric_rays_per_view, cfg.density_thresh,
                                          field=fld, n_samples=cfg.n_samples,
                                          seed=derive_seed(cfg.seed, "volumetric"))
        return cloud, None
    if method == "lifted":
        grid = build_voxel_grid(scene, cfg.voxel_size, cfg.sfm_mode, cameras=cams, views=bundle.views)
        cloud = lift_masks(grid, cams, bundle.masks, tol_factor=cfg.vote_tolerance)
        return cloud, grid
    raise InvalidParameter(f"unknown extraction method {method!r}")


@dataclass
class CountResult:
    denoised: PointCloud
    dbscan_clusters: ClusterSet
    clusters: ClusterSet

    @property
    def count(self) -> int:
        return count_instances(self.clusters)


def split_config(cfg: PipelineConfig) -> SplitConfig:
    return SplitConfig(cfg.volume_multiplier, cfg.size_multiplier, cfg.max_depth, cfg.min_cluster_size,
                       cfg.refresh_medians)


def count_cloud(cfg: PipelineConfig, cloud: PointCloud, box) -> CountResult:
    """Shared protocol for every method: denoise, DBSCAN, recursive split."""
    clean = denoise(cloud, box, cfg.luminance_thresh, cfg.knn, cfg.percentile, workers=cfg.threads)
    base = dbscan(clean, cfg.eps, cfg.min_pts, workers=cfg.threads)
    final = recursive_split(base, split_config(cfg), seed=derive_seed(cfg.seed, "split"))
    return CountResult(clean, base, final)


# ------------------------------------------------------------------ per-view evaluation


def view_image(scene: SceneSpec, view: View) -> np.ndarray:
    """Flat-shaded RGB of a rendered view: fruit colours, foliage green, black background."""
    img = np.zeros(view.ids.shape + (3,))
    img[np.isfinite(view.depth)] = OCCLUDER_COLOR
    fruit = view.ids > 0
    img[fruit] = scene.fruit_colors[view.ids[fruit] - 1]
    return img


def splat_cloud(camera: Camera, cloud: PointCloud, depth: np.ndarray, tol: float):
    """Project the cloud, keep points not hidden behind the reference depth, z-buffer.

    Returns (mask, rgb). The mask is closed with a 3x3 element to bridge the
    gaps between neighbouring splats.
    """
    h, w = camera.height, camera.width
    mask = np.zeros((h, w), dtype=bool)
    rgb = np.zeros((h, w, 3))
    if len(cloud) == 0:
        return mask, rgb
    row, col, ok, dist = camera.pixel_of(cloud.points)
    flat = row * w + col
    ok &= dist <= depth[row, col] + tol
    if not ok.any():
        return mask, rgb
    idx = np.flatnonzero(ok)
    order = idx[np.lexsort((dist[idx], flat[idx]))]
    first = np.unique(flat[order], return_index=True)[1]
    nearest = order[first]
    mask.reshape(-1)[flat[nearest]] = True
    if cloud.colors is not None:
        rgb.reshape(-1, 3)[flat[nearest]] = cloud.colors[nearest]
    closed = ndimage.binary_closing(mask, structure=np.ones((3, 3), dtype=bool))
    return closed | mask, rgb


def view_metric_rows(method: str, label: str, bundle: SceneBundle, cloud: PointCloud, tol: float) -> list:
    rows = []
    for k, (cam, view) in enumerate(zip(bundle.cameras, bundle.views)):
        pred, rgb = splat_cloud(cam, cloud, view.depth, tol)
        gt_img = view_image(bundle.scene, view)
        rows += [
            (method, label, k, "iou", iou(pred, view.mask)),
            (method, label, k, "dice", dice(pred, view.mask)),
            (method, label, k, "psnr", psnr(rgb, gt_img, 1.0)),
        ]
    return rows


def mask_metric_rows(label: str, bundle: SceneBundle) -> list:
    rows = []
    for k, (m, view) in enumerate(zip(bundle.masks, bundle.views)):
        rows += [("masks", label, k, "iou", iou(m, view.mask)), ("masks", label, k, "dice", dice(m, view.mask))]
    return rows


# ------------------------------------------------------------------ runs


@dataclass
class MethodResult:
    method: str
    cloud: PointCloud
    counted: CountResult
    extent: Optional[ExtentReport]
    grid: Optional[VoxelGrid] = None

    @property
    def count(self) -> int:
        return self.counted.count


@dataclass
class RunReport:
    config: PipelineConfig
    scene: SceneSpec
    gt: int
    achieved_recall: float
    results: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None

    def recovery(self, method: str) -> float:
        return recovery_rate(self.results[method].count, self.gt)

    def summary_rows(self) -> list:
        label = scene_label(self.config)
        return [(m, label, self.gt, r.count, self.recovery(m)) for m, r in self.results.items()]


def _cluster_rows(clusters: ClusterSet) -> list:
    return [(c.id, c.count, c.aabb_volume, *c.centroid) for c in clusters.clusters]


def run_experiment(cfg: PipelineConfig, methods: Optional[Sequence[str]] = None,
                   out_dir=None, write: bool = True, view_metrics: bool = True,
                   bundle: Optional[SceneBundle] = None) -> RunReport:
    """Run one scene through every requested method with identical counting parameters.

    Artifacts go to ``out_dir`` (default ``cfg.out_dir``) as they are
    produced, so a failure leaves the completed stages on disk.
    """
    methods = list(methods or [cfg.method])
    for m in methods:
        if m not in METHODS:
            raise InvalidParameter(f"unknown extraction method {m!r}")
    timings: dict = {}
    out = ensure_dir(out_dir or cfg.out_dir) if write else None
    label = scene_label(cfg)
    if out is not None:
        cfg.save(out / "config.ini")

    with stage("scene", timings):
        bundle = bundle or build_scene(cfg)
    with stage("degrade", timings):
        bundle = apply_degradation(cfg, bundle)
    scene = bundle.scene
    report = RunReport(cfg, scene, len(scene.instances), bundle.achieved_recall, timings=timings, out_dir=out)
    if out is not None:
        _export_views(cfg, bundle, out)

    metric_rows = []
    if view_metrics:
        metric_rows += mask_metric_rows(label, bundle)
    metric_rows.append(("masks", label, "all", "mean_pixel_recall", bundle.achieved_recall))
    for method in methods:
        with stage(f"extract:{method}", timings):
            cloud, grid = extract(cfg, bundle, method)
        if out is not None:
            write_ply(out / f"cloud_{method}.ply", cloud)
            if grid is not None:
                write_voxels(out / "voxels.txt", grid)
        with stage(f"cluster:{method}", timings):
            counted = count_cloud(cfg, cloud, scene.canopy_bbox)
        with stage(f"evaluate:{method}", timings):
            try:
                extent = extent_report(cloud)
            except EmptyInput:
                extent = None
            if view_metrics:
                metric_rows += view_metric_rows(method, label, bundle, cloud, 2.0 * cfg.voxel_size)
        result = MethodResult(method, cloud, counted, extent, grid)
        report.results[method] = result
        log.info("%s %s: %d points, %d clusters (gt %d)", label, method, len(cloud), result.count, report.gt)
        metric_rows += [
            (method, label, "all", "count", result.count),
            (method, label, "all", "recovery", report.recovery(method)),
            (method, label, "all", "dbscan_clusters", count_instances(counted.dbscan_clusters)),
            (method, label, "all", "points", len(cloud)),
            (method, label, "all", "denoised_points", len(counted.denoised)),
        ]
        if out is not None:
            write_ply(out / f"clusters_{method}.ply", counted.denoised, counted.clusters.labels)
            write_csv(out / f"clusters_{method}.csv",
                      ("cluster_id", "count", "volume", "centroid_x", "centroid_y", "centroid_z"),
                      _cluster_rows(counted.clusters))

    if out is not None:
        write_csv(out / "metrics.csv", ("method", "scene", "view", "metric", "value"), metric_rows)
        write_csv(out / "extent.csv", ("method", "points", "convex_hull_volume", "mean_radius", "degenerate"),
                  [(m, *(_extent_fields(r.extent))) for m, r in report.results.items()])
        write_csv(out / "summary.csv", SUMMARY_HEADER, report.summary_rows())
        (out / "timings.txt").write_text("".join(f"{k} {v:.3f}\n" for k, v in timings.items()))
    return report


def _extent_fields(ext: Optional[ExtentReport]) -> tuple:
    if ext is None:
        return (0, 0.0, 0.0, True)
    return (ext.point_count, ext.convex_hull_volume, ext.mean_radius, ext.hull_degenerate)


def _export_views(cfg: PipelineConfig, bundle: SceneBundle, out: Path) -> None:
    write_scene(out / "scene.txt", bundle.scene)
    view_dir = ensure_dir(out / "views")
    degraded = cfg.target_recall is not None
    for k, view in enumerate(bundle.views):
        write_pgm(view_dir / f"mask_{k:03d}.pgm", view.mask)
        if degraded:
            write_pgm(view_dir / f"mask_{k:03d}_degraded.pgm", bundle.masks[k])
        if cfg.export_depth:
            write_depth(view_dir / f"depth_{k:03d}.f32", view.depth)


# ------------------------------------------------------------------ profiles

PROFILES = ("table2", "table3", "table4")


@dataclass
class ProfileReport:
    name: str
    header: tuple
    rows: list
    runs: dict = field(default_factory=dict)
    out_dir: Optional[Path] = None


def run_profile(name: str, base: Optional[PipelineConfig] = None, out_dir=None,
                view_metrics: bool = False) -> ProfileReport:
    """Reproduction bundles.

    table2: every preset with every method at nominal settings.
    table3: extent reports of the three methods on the dense preset.
    table4: dense preset, surface and lifted methods, perfect masks at
    nominal settings against masks degraded to recall 0.44 under the
    degraded clustering profile.
    """
    if name not in PROFILES:
        raise InvalidParameter(f"unknown profile {name!r}; choose from {PROFILES}")
    base = base or PipelineConfig()
    out = ensure_dir(Path(out_dir or base.out_dir) / name)
    runs = {}
    if name == "table2":
        header = ("preset", "method", "gt", "count", "recovery")
        rows = []
        for preset in ("separated", "moderate", "dense"):
            cfg = base.replace(preset=preset, count=GT_COUNTS[preset], target_recall=None)
            rep = run_experiment(cfg, METHODS, out / preset, view_metrics=view_metrics)
            runs[preset] = rep
            rows += [(preset, m, rep.gt, r.count, rep.recovery(m)) for m, r in rep.results.items()]
    elif name == "table3":
        header = ("method", "points", "convex_hull_volume", "mean_radius")
        cfg = base.replace(preset="dense", count=GT_COUNTS["dense"], target_recall=None)
        rep = run_experiment(cfg, METHODS, out / "dense", view_metrics=view_metrics)
        runs["dense"] = rep
        rows = [(m, *_extent_fields(r.extent)[:3]) for m, r in rep.results.items()]
    else:
        header = ("method", "masks", "mean_pixel_recall", "eps", "volume_multiplier", "count", "recovery")
        nominal = base.replace(preset="dense", count=GT_COUNTS["dense"], target_recall=None)
        degraded = degraded_profile(nominal)
        rows = []
        shared = build_scene(nominal)
        for tag, cfg in (("perfect", nominal), ("degraded", degraded)):
            rep = run_experiment(cfg, ("surface", "lifted"), out / tag, view_metrics=view_metrics,
                                 bundle=shared)
            runs[tag] = rep
            rows += [(m, tag, rep.achieved_recall, cfg.eps, cfg.volume_multiplier, r.count, rep.recovery(m))
                     for m, r in rep.results.items()]
    write_csv(out / "summary.csv", header, rows)
    return ProfileReport(name, header, rows, runs, out)
