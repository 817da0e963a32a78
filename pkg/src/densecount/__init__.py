"""Desk-scale study of instance counting in dense, self-occluding scenes.

Synthetic canopies are reconstructed three ways (ray-surface, density-gated
volumetric, voxel mask-lifting) and counted with one shared
denoise / DBSCAN / recursive-split pipeline.
"""

from densecount.errors import (
    DegenerateSplit,
    EmptyInput,
    InvalidInput,
    InvalidParameter,
    PackingFailure,
    Undefined,
)
from densecount.geometry import Aabb, PointCloud

__version__ = "0.1.0"

__all__ = [
    "Aabb",
    "PointCloud",
    "DegenerateSplit",
    "EmptyInput",
    "InvalidInput",
    "InvalidParameter",
    "PackingFailure",
    "Undefined",
]
