"""On-disk formats: ASCII PLY, binary PGM, raw float32 depth, scene key-value files, voxel text, CSV."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from densecount.errors import InvalidInput
from densecount.geometry import Aabb, PointCloud

# ------------------------------------------------------------------ PLY


def write_ply(path, cloud: PointCloud, labels: Optional[np.ndarray] = None) -> None:
    """ASCII PLY: x y z, then r g b (0-255) and prob when present, then cluster id."""
    n = len(cloud)
    header = ["ply", "format ascii 1.0", f"element vertex {n}",
              "property double x", "property double y", "property double z"]
    cols = [cloud.points]
    fmt = ["%.17g"] * 3
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        cols.append(np.rint(np.clip(cloud.colors, 0.0, 1.0) * 255.0))
        fmt += ["%d"] * 3
    if cloud.semantic is not None:
        header.append("property double prob")
        cols.append(cloud.semantic[:, None])
        fmt.append("%.17g")
    if labels is not None:
        labels = np.asarray(labels).reshape(-1)
        if len(labels) != n:
            raise InvalidInput(f"{len(labels)} labels for {n} points")
        header.append("property int cluster")
        cols.append(labels[:, None])
        fmt.append("%d")
    header.append("end_header")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(header) + "\n")
        if n:
            np.savetxt(fh, np.hstack(cols), fmt=" ".join(fmt))


def read_ply(path) -> tuple[PointCloud, Optional[np.ndarray]]:
    """Read a PLY written by :func:`write_ply`; returns (cloud, cluster labels or None)."""
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise InvalidInput(f"{path}: not a PLY file")
        props, n = [], None
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "format" and parts[1] != "ascii":
                raise InvalidInput(f"{path}: only ASCII PLY is supported")
            if parts[0] == "element" and parts[1] == "vertex":
                n = int(parts[2])
            elif parts[0] == "property":
                props.append(parts[-1])
            elif parts[0] == "end_header":
                break
        if n is None:
            raise InvalidInput(f"{path}: no vertex element")
        data = np.loadtxt(fh, ndmin=2) if n else np.zeros((0, len(props)))
    if data.shape != (n, len(props)):
        raise InvalidInput(f"{path}: expected {n} rows of {len(props)} values")
    col = {p: data[:, i] for i, p in enumerate(props)}
    pts = np.stack([col["x"], col["y"], col["z"]], axis=1)
    colors = None
    if "red" in col:
        colors = np.stack([col["red"], col["green"], col["blue"]], axis=1) / 255.0
    labels = col["cluster"].astype(np.int64) if "cluster" in col else None
    return PointCloud(pts, colors, col.get("prob")), labels


# ------------------------------------------------------------------ masks and depth


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary P5 image, maxval 255; fruit pixels are 255."""
    img = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read a P5 image written by :func:`write_pgm` as a boolean mask."""
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end].decode("ascii"))
        pos = end
    if fields[0] != "P5":
        raise InvalidInput(f"{path}: not a binary PGM")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval > 255:
        raise InvalidInput(f"{path}: 16-bit PGM not supported")
    pixels = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if len(pixels) != w * h:
        raise InvalidInput(f"{path}: truncated pixel data")
    return pixels.reshape(h, w) > 0


def write_depth(path, depth: np.ndarray) -> None:
    """Little-endian float32 raw file plus a ``.hdr`` sidecar with the dimensions."""
    depth = np.asarray(depth, dtype="<f4")
    h, w = depth.shape
    Path(path).write_bytes(depth.tobytes())
    Path(str(path) + ".hdr").write_text(f"width = {w}\nheight = {h}\ndtype = float32\nbyteorder = little\n")


def read_depth(path) -> np.ndarray:
    meta = read_key_values(str(path) + ".hdr")
    w, h = int(meta["width"]), int(meta["height"])
    data = np.frombuffer(Path(path).read_bytes(), dtype="<f4")
    if len(data) != w * h:
        raise InvalidInput(f"{path}: expected {w * h} depth values, found {len(data)}")
    return data.reshape(h, w).astype(np.float64)


# ------------------------------------------------------------------ key-value files


def write_key_values(path, items: Iterable[tuple[str, str]]) -> None:
    with open(path, "w", newline="\n") as fh:
        for key, value in items:
            fh.write(f"{key} = {value}\n")


def read_key_values(path) -> dict[str, str]:
    out = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise InvalidInput(f"{path}: malformed line {line!r}")
            out[key.strip()] = value.strip()
    return out


def _floats(values) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_scene(path, scene) -> None:
    """Human-readable scene dump; floats use repr so reading back is exact."""
    items = [
        ("preset", scene.preset),
        ("seed", str(scene.seed)),
        ("sigma_fruit", repr(float(scene.sigma_fruit))),
        ("canopy_min", _floats(scene.canopy_bbox.min)),
        ("canopy_max", _floats(scene.canopy_bbox.max)),
        ("instance_count", str(len(scene.instances))),
        ("occluder_count", str(len(scene.occluders))),
    ]
    for inst in scene.instances:
        items.append((f"instance.{inst.id}", _floats([*inst.center, inst.radius])))
    for k, occ in enumerate(scene.occluders):
        items.append((f"occluder.{k}", _floats([*occ.center, occ.radius, occ.density])))
    write_key_values(path, items)


def read_scene(path):
    from densecount.scene import Instance, Occluder, SceneSpec

    kv = read_key_values(path)
    instances, occluders = [], []
    for key, value in kv.items():
        nums = [float(x) for x in value.split()] if key.startswith(("instance.", "occluder.")) else None
        if key.startswith("instance."):
            instances.append(Instance(int(key.split(".", 1)[1]), tuple(nums[:3]), nums[3]))
        elif key.startswith("occluder."):
            occluders.append((int(key.split(".", 1)[1]), Occluder(tuple(nums[:3]), nums[3], nums[4])))
    if len(instances) != int(kv["instance_count"]) or len(occluders) != int(kv["occluder_count"]):
        raise InvalidInput(f"{path}: instance or occluder count does not match its header")
    instances.sort(key=lambda i: i.id)
    occluders = [o for _, o in sorted(occluders, key=lambda t: t[0])]
    box = Aabb([float(x) for x in kv["canopy_min"].split()], [float(x) for x in kv["canopy_max"].split()])
    return SceneSpec(tuple(instances), tuple(occluders), box, kv["preset"], int(kv["seed"]),
                     float(kv["sigma_fruit"]))


# ------------------------------------------------------------------ voxels


def write_voxels(path, grid) -> None:
    """One occupied voxel per line: ix iy iz fruit_votes bg_votes."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# origin {_floats(grid.origin)} voxel_size {float(grid.voxel_size)!r}\n")
        rows = np.column_stack([grid.keys, grid.fruit_votes, grid.bg_votes]).astype(np.int64)
        if len(rows):
            np.savetxt(fh, rows, fmt="%d")


def read_voxels(path):
    from densecount.extraction import VoxelGrid

    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 7 or head[1] != "origin" or head[5] != "voxel_size":
            raise InvalidInput(f"{path}: missing voxel grid header")
        origin = [float(x) for x in head[2:5]]
        rows = np.loadtxt(fh, dtype=np.int64, ndmin=2).reshape(-1, 5)
    return VoxelGrid(np.array(origin), float(head[6]), rows[:, :3], rows[:, 3].copy(), rows[:, 4].copy())


# ------------------------------------------------------------------ CSV


def format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """RFC-4180 CSV with LF line endings and repr-formatted floats."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
