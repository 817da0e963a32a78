"""Pipeline configuration: one flat dataclass, stored as an INI file with a section per stage."""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, fields
from typing import Optional

from densecount.errors import InvalidParameter
from densecount.scene import PRESETS

METHODS = ("surface", "volumetric", "lifted")
GT_COUNTS = {"separated": 152, "moderate": 283, "dense": 745}


def _f(section: str, doc: str, default):
    return dataclasses.field(default=default, metadata={"section": section, "doc": doc})


@dataclass(frozen=True)
class PipelineConfig:
    # scene
    preset: str = _f("scene", "separated | moderate | dense", "dense")
    count: int = _f("scene", "ground-truth instance count", 745)
    seed: int = _f("scene", "root seed; every stage derives its own seed from it", 7)
    # cameras
    views: int = _f("cameras", "number of cameras on the ring", 60)
    image_size: int = _f("cameras", "square image side in pixels", 256)
    fov_deg: float = _f("cameras", "horizontal and vertical field of view", 40.0)
    ring_radius: float = _f("cameras", "horizontal camera distance from the canopy centre", 2.6)
    ring_height: float = _f("cameras", "height of even cameras above the canopy centre", 0.7)
    second_height: float = _f("cameras", "height of odd cameras above the canopy centre", -0.7)
    # extraction
    method: str = _f("extraction", "surface | volumetric | lifted", "lifted")
    rays_per_view: int = _f("extraction", "ray budget per view for the surface extractor", 256 * 256)
    volumetric_rays_per_view: int = _f("extraction", "ray budget per view for the density-gated extractor", 32 * 32)
    n_samples: int = _f("extraction", "stratified samples per ray", 128)
    prob_thresh: float = _f("extraction", "minimum fruit probability at the kept surface sample", 0.5)
    rel_density_thresh: float = _f("extraction", "minimum density relative to the densest kept sample", 0.5)
    density_thresh: float = _f("extraction", "density gate for the volumetric extractor", 25.0)
    prior_weight: float = _f("extraction", "background prior weight of the fitted semantic field", 6.0)
    voxel_size: float = _f("extraction", "voxel edge length (0.25 x mean fruit radius)", 0.01)
    sfm_mode: bool = _f("extraction", "seed voxel occupancy from multi-view surface samples", False)
    vote_tolerance: float = _f("extraction", "visibility tolerance in voxel sizes", 1.5)
    # denoise
    luminance_thresh: float = _f("denoise", "drop points darker than this mean RGB", 0.15)
    knn: int = _f("denoise", "neighbours for the outlier statistic", 10)
    percentile: float = _f("denoise", "outlier cutoff percentile", 90.0)
    # clustering
    eps: float = _f("clustering", "DBSCAN radius", 0.015)
    min_pts: int = _f("clustering", "DBSCAN core threshold (self included)", 5)
    volume_multiplier: float = _f("clustering", "split when box volume exceeds this x median", 4.5)
    size_multiplier: float = _f("clustering", "split when point count exceeds this x median (inf = off)", math.inf)
    max_depth: int = _f("clustering", "maximum bisections per lineage", 16)
    min_cluster_size: int = _f("clustering", "smallest split child kept (0 = permissive)", 0)
    refresh_medians: bool = _f("clustering", "recompute medians every splitting pass", False)
    # degrade
    target_recall: Optional[float] = _f("degrade", "degrade masks to this mean pixel recall (empty = perfect masks)", None)
    # output
    out_dir: str = _f("output", "directory for all artifacts", "out")
    threads: int = _f("output", "worker threads for neighbour queries", 1)
    export_depth: bool = _f("output", "also write per-view depth maps", False)

    def __post_init__(self):
        checks = [
            (self.preset in PRESETS, f"preset must be one of {sorted(PRESETS)}"),
            (self.count >= 1, "count must be >= 1"),
            (self.seed >= 0, "seed must be non-negative"),
            (self.views >= 1, "views must be >= 1"),
            (self.image_size >= 8, "image_size must be >= 8"),
            (0.0 < self.fov_deg < 180.0, "fov_deg must lie in (0, 180)"),
            (self.ring_radius > 0, "ring_radius must be positive"),
            (self.method in METHODS, f"method must be one of {METHODS}"),
            (self.rays_per_view >= 1 and self.volumetric_rays_per_view >= 1, "ray budgets must be >= 1"),
            (self.n_samples >= 2, "n_samples must be >= 2"),
            (0.0 <= self.prob_thresh <= 1.0, "prob_thresh must lie in [0, 1]"),
            (0.0 <= self.rel_density_thresh <= 1.0, "rel_density_thresh must lie in [0, 1]"),
            (self.density_thresh > 0, "density_thresh must be positive"),
            (self.prior_weight >= 0, "prior_weight must be non-negative"),
            (self.voxel_size > 0, "voxel_size must be positive"),
            (self.vote_tolerance >= 0, "vote_tolerance must be non-negative"),
            (0.0 <= self.luminance_thresh <= 1.0, "luminance_thresh must lie in [0, 1]"),
            (self.knn >= 1, "knn must be >= 1"),
            (0.0 < self.percentile < 100.0, "percentile must lie in (0, 100)"),
            (self.eps > 0, "eps must be positive"),
            (self.min_pts >= 1, "min_pts must be >= 1"),
            (self.volume_multiplier > 0 and self.size_multiplier > 0, "split multipliers must be positive"),
            (self.max_depth >= 1, "max_depth must be >= 1"),
            (self.min_cluster_size >= 0, "min_cluster_size must be >= 0"),
            (self.target_recall is None or 0.0 < self.target_recall <= 1.0, "target_recall must lie in (0, 1]"),
            (self.threads >= 1, "threads must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise InvalidParameter(message)

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def clustering_params(self) -> dict:
        names = ("luminance_thresh", "knn", "percentile", "eps", "min_pts", "volume_multiplier",
                 "size_multiplier", "max_depth", "min_cluster_size", "refresh_medians")
        return {n: getattr(self, n) for n in names}

    # ---- INI round trip

    def to_ini(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        lines = []
        section = None
        for f in fields(self):
            if f.metadata["section"] != section:
                section = f.metadata["section"]
                lines.append(f"{'' if not lines else chr(10)}[{section}]")
            lines.append(f"# {f.metadata['doc']}")
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        text = "\n".join(lines) + "\n"
        parser.read_string(text)  # validates the generated syntax
        return text

    @classmethod
    def from_ini(cls, text: str, **overrides) -> "PipelineConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.read_string(text)
        known = {f.name: f for f in fields(cls)}
        values = {}
        for section in parser.sections():
            for key, raw in parser.items(section):
                if key not in known:
                    raise InvalidParameter(f"unknown config key {section}.{key}")
                values[key] = _parse(known[key], raw)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_ini(fh.read(), **overrides)

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_ini())


def _format(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def _parse(f: dataclasses.Field, raw: str):
    raw = raw.strip()
    kind = f.type
    if f.name == "target_recall":
        return None if raw == "" else float(raw)
    if kind in ("bool", bool):
        lowered = raw.lower()
        if lowered not in ("true", "false", "1", "0", "yes", "no"):
            raise InvalidParameter(f"{f.name}: expected a boolean, got {raw!r}")
        return lowered in ("true", "1", "yes")
    if kind in ("int", int):
        return int(raw)
    if kind in ("float", float):
        return float(raw)
    return raw


def degraded_profile(cfg: PipelineConfig, target_recall: float = 0.44) -> PipelineConfig:
    """Clustering settings for fragmented masks: wider radius, volume-only splitting at 5x."""
    return cfg.replace(target_recall=target_recall, eps=0.030, volume_multiplier=5.0,
                       size_multiplier=math.inf)
