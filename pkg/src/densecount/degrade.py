"""Recall-targeted mask degradation: whole-instance dropout plus erosion and punched holes.

Everything is driven by one strength ``s`` in [0, 1]. Each random draw is
made once per seed, so raising ``s`` only ever removes more pixels:

* dropout: instance region (view, id) vanishes when its uniform rank < s,
  so the dropout probability equals s;
* holes: discs of radius ``HOLE_RADIUS`` around seeded centres, each
  active when its rank < s;
* erosion: region (view, id) loses the pixels within
  floor(EROSION_MAX * s + u) of its outline, u uniform per region.

Bisection on s then hits a target mean pixel recall.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import ndimage

from densecount.errors import InvalidInput, InvalidParameter
from densecount.metrics import mean_pixel_recall

RECALL_TOLERANCE = 0.03
MAX_BISECTIONS = 20
HOLE_RADIUS = 3
HOLE_DENSITY = 1.0  # candidate holes per hole-area of fruit pixels
EROSION_MAX = 2.0


@dataclass(frozen=True)
class _ViewPlan:
    mask: np.ndarray
    drop_rank: np.ndarray  # per pixel: dropout rank of its instance
    hole_rank: np.ndarray  # per pixel: smallest rank of a hole covering it
    edge_dist: np.ndarray  # per pixel: distance to its region outline
    erode_offset: np.ndarray  # per pixel: erosion jitter u of its instance

    def apply(self, s: float) -> np.ndarray:
        depth = np.floor(EROSION_MAX * s + self.erode_offset)
        return self.mask & (self.drop_rank >= s) & (self.hole_rank >= s) & (self.edge_dist > depth)


def _disc(radius: int) -> np.ndarray:
    y, x = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return x * x + y * y <= radius * radius


def _plan_view(mask: np.ndarray, ids: np.ndarray, rng: np.random.Generator) -> _ViewPlan:
    region = np.where(mask, ids, -1).astype(np.int64)
    n_ids = int(region.max()) + 1 if mask.any() else 1
    drop_u = rng.random(n_ids)
    erode_u = rng.random(n_ids)
    fruit = np.flatnonzero(mask)
    n_holes = math.ceil(HOLE_DENSITY * len(fruit) / (math.pi * HOLE_RADIUS**2)) if len(fruit) else 0
    centres = rng.choice(fruit, size=n_holes, replace=True) if n_holes else np.zeros(0, dtype=np.int64)
    ranks = rng.random(n_holes)

    seeds = np.full(mask.size, np.inf)
    np.minimum.at(seeds, centres, ranks)
    hole_rank = ndimage.minimum_filter(seeds.reshape(mask.shape), footprint=_disc(HOLE_RADIUS),
                                       mode="constant", cval=np.inf)

    # Outline pixels: fruit pixels with a 4-neighbour in another region (or off-image).
    padded = np.pad(region, 1, constant_values=-1)
    outline = np.zeros(mask.shape, dtype=bool)
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        nb = padded[1 + dr:1 + dr + mask.shape[0], 1 + dc:1 + dc + mask.shape[1]]
        outline |= nb != region
    outline &= mask
    # Distance 1 on the outline, growing inwards; non-fruit pixels are irrelevant.
    edge_dist = ndimage.distance_transform_edt(~outline) + 1.0

    safe = np.maximum(region, 0)
    return _ViewPlan(mask, drop_u[safe], hole_rank, edge_dist, erode_u[safe])


class DegradeResult(NamedTuple):
    masks: list
    achieved_recall: float
    strength: float


def degrade_masks(masks: Sequence[np.ndarray], id_maps: Sequence[np.ndarray], target_recall: float,
                  seed: int, tolerance: float = RECALL_TOLERANCE) -> DegradeResult:
    """Remove fruit pixels until the mean pixel recall is within ``tolerance`` of the target.

    Never adds a pixel. Deterministic for a given seed; a lower target
    never leaves more fruit pixels than a higher one under the same seed.
    """
    if not 0.0 < target_recall <= 1.0:
        raise InvalidParameter(f"target recall {target_recall} outside (0, 1]")
    if len(masks) != len(id_maps):
        raise InvalidInput(f"{len(masks)} masks for {len(id_maps)} id maps")
    masks = [np.asarray(m, dtype=bool) for m in masks]
    for m, i in zip(masks, id_maps):
        if np.shape(i) != m.shape:
            raise InvalidInput("id map dimensions do not match mask")
    if target_recall == 1.0:
        return DegradeResult([m.copy() for m in masks], mean_pixel_recall(masks, masks), 0.0)

    rng = np.random.default_rng(seed)
    plans = [_plan_view(m, np.asarray(i), rng) for m, i in zip(masks, id_maps)]

    def recall_at(s: float) -> float:
        return mean_pixel_recall([p.apply(s) for p in plans], masks)

    lo, hi = 0.0, 1.0
    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if recall_at(mid) > target_recall:
            lo = mid
        else:
            hi = mid
    # Always report the upper end: recall(hi) <= target, and hi is monotone in the target.
    out = [p.apply(hi) for p in plans]
    achieved = mean_pixel_recall(out, masks)
    if abs(achieved - target_recall) > tolerance:
        raise InvalidParameter(
            f"target recall {target_recall} unreachable within {tolerance} (got {achieved:.4f})")
    return DegradeResult(out, achieved, hi)
