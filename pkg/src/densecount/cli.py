"""Command-line entry point: ``densecount <generate|extract|cluster|evaluate|run|profile>``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from densecount.config import METHODS, PipelineConfig
from densecount.errors import DenseCountError
from densecount.formats import (ensure_dir, read_csv, read_ply, read_scene, write_csv, write_ply,
                                write_voxels)
from densecount.metrics import extent_report, recovery_rate
from densecount.pipeline import (PROFILES, _export_views, apply_degradation, build_scene, count_cloud,
                                 extract, run_experiment, run_profile, scene_label)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI file; flags below override its values")
    p.add_argument("--seed", type=int, help="root seed")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for neighbour queries")
    p.add_argument("--preset", choices=("separated", "moderate", "dense"))
    p.add_argument("--count", type=int, help="ground-truth instance count")
    p.add_argument("--views", type=int, help="number of cameras")
    p.add_argument("--target-recall", type=float, help="degrade masks to this mean pixel recall")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="densecount", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="scene, camera views and masks")
    _common(p)

    p = sub.add_parser("extract", help="extract one method's point cloud")
    _common(p)
    p.add_argument("--method", choices=METHODS)

    p = sub.add_parser("cluster", help="denoise, DBSCAN and split a PLY cloud")
    _common(p)
    p.add_argument("--input", type=Path, required=True, help="input PLY")
    p.add_argument("--scene", type=Path, help="scene file giving the crop box (default: regenerate)")

    p = sub.add_parser("evaluate", help="score a cluster table against a scene")
    _common(p)
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--clusters", type=Path, required=True, help="clusters CSV from 'cluster' or 'run'")
    p.add_argument("--cloud", type=Path, help="PLY cloud for the extent report")

    p = sub.add_parser("run", help="full pipeline for one scene")
    _common(p)
    p.add_argument("--method", choices=(*METHODS, "all"))
    p.add_argument("--no-view-metrics", action="store_true", help="skip per-view IoU/Dice/PSNR")

    p = sub.add_parser("profile", help="reproduction bundle")
    _common(p)
    p.add_argument("name", choices=PROFILES)
    p.add_argument("--view-metrics", action="store_true", help="also compute per-view IoU/Dice/PSNR")

    p = sub.add_parser("config", help="print the default (or loaded) configuration")
    _common(p)
    return parser


def load_config(args) -> PipelineConfig:
    overrides = dict(seed=args.seed, threads=args.threads, preset=args.preset, count=args.count,
                     views=args.views, target_recall=args.target_recall,
                     out_dir=str(args.out) if args.out else None)
    method = getattr(args, "method", None)
    if method and method != "all":
        overrides["method"] = method
    if args.config:
        return PipelineConfig.load(args.config, **overrides)
    return PipelineConfig().replace(**{k: v for k, v in overrides.items() if v is not None})


def _generate(cfg: PipelineConfig) -> int:
    out = ensure_dir(cfg.out_dir)
    bundle = apply_degradation(cfg, build_scene(cfg))
    _export_views(cfg, bundle, out)
    cfg.save(out / "config.ini")
    print(f"{scene_label(cfg)}: {len(bundle.scene.instances)} instances, {len(bundle.views)} views"
          f", mask recall {bundle.achieved_recall:.4f} -> {out}")
    return 0


def _extract(cfg: PipelineConfig) -> int:
    out = ensure_dir(cfg.out_dir)
    bundle = apply_degradation(cfg, build_scene(cfg))
    cloud, grid = extract(cfg, bundle, cfg.method)
    write_ply(out / f"cloud_{cfg.method}.ply", cloud)
    if grid is not None:
        write_voxels(out / "voxels.txt", grid)
    print(f"{cfg.method}: {len(cloud)} points -> {out}")
    return 0


def _cluster(cfg: PipelineConfig, args) -> int:
    out = ensure_dir(cfg.out_dir)
    cloud, _ = read_ply(args.input)
    scene = read_scene(args.scene) if args.scene else build_scene(cfg).scene
    counted = count_cloud(cfg, cloud, scene.canopy_bbox)
    stem = args.input.stem
    write_ply(out / f"{stem}_clusters.ply", counted.denoised, counted.clusters.labels)
    write_csv(out / f"{stem}_clusters.csv",
              ("cluster_id", "count", "volume", "centroid_x", "centroid_y", "centroid_z"),
              [(c.id, c.count, c.aabb_volume, *c.centroid) for c in counted.clusters.clusters])
    print(f"{counted.count} clusters")
    return 0


def _evaluate(cfg: PipelineConfig, args) -> int:
    scene = read_scene(args.scene)
    count = len(read_csv(args.clusters))
    gt = len(scene.instances)
    rows = [("count", count), ("gt", gt), ("recovery", recovery_rate(count, gt))]
    if args.cloud:
        cloud, _ = read_ply(args.cloud)
        ext = extent_report(cloud)
        rows += [("points", ext.point_count), ("convex_hull_volume", ext.convex_hull_volume),
                 ("mean_radius", ext.mean_radius)]
    out = ensure_dir(cfg.out_dir)
    write_csv(out / "evaluation.csv", ("metric", "value"), rows)
    for k, v in rows:
        print(f"{k}\t{v}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "config":
            sys.stdout.write(cfg.to_ini())
            return 0
        if args.command == "generate":
            return _generate(cfg)
        if args.command == "extract":
            return _extract(cfg)
        if args.command == "cluster":
            return _cluster(cfg, args)
        if args.command == "evaluate":
            return _evaluate(cfg, args)
        if args.command == "run":
            methods = METHODS if args.method == "all" else [cfg.method]
            report = run_experiment(cfg, methods, view_metrics=not args.no_view_metrics)
            for row in report.summary_rows():
                print("{}\t{}\tgt={}\tcount={}\trecovery={:.2f}%".format(*row))
            return 0
        report = run_profile(args.name, cfg, view_metrics=args.view_metrics)
        print(",".join(report.header))
        for row in report.rows:
            print(",".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))
        return 0
    except DenseCountError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
