"""Command-line entry point: ``python -m geoseg <command> ...``.

Exit status is 0 on success, 2 on invalid input or usage, 1 on internal errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .cloud import (PointCloud, PointCloudError, build_adjacency, knn_table, load_point_cloud,
                    save_point_cloud)
from .downsample import fps_downsample, geometric_downsample, voxel_downsample
from .features import FEATURE_NAMES, compute_geometric_features
from .network import NetworkConfig, build_plan, preset
from .partition import PartitionProblem, cut_pursuit, enforce_diameter_cap
from .superpoint import partition_diameter, pool_mean
from .synthetic import SceneSpec, generate_scene

log = logging.getLogger("geoseg")

CLOUD_SUFFIXES = (".txt", ".xyz", ".asc", ".ply")


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# flat config files


def read_flat_config(path) -> Dict[str, str]:
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        text = raw.split("#", 1)[0].strip()
        if not text:
            continue
        if "=" not in text:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (t.strip() for t in text.split("=", 1))
        if not key:
            raise UsageError(f"{path}:{lineno}: empty key")
        out[key] = value
    return out


def parse_overrides(items: Optional[List[str]]) -> Dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = (t.strip() for t in item.split("=", 1))
        out[key] = value
    return out


def _coerce(value: str, default):
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes"):
            return True
        if value.lower() in ("0", "false", "no"):
            return False
        raise UsageError(f"not a boolean: {value!r}")
    if isinstance(default, (list, tuple)):
        items = [t for t in value.strip("[]()").replace(",", " ").split() if t]
        elem = type(default[0]) if default else float
        return [_coerce(t, elem()) for t in items]
    try:
        if isinstance(default, int):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise UsageError(f"cannot parse {value!r} as {type(default).__name__}") from None
    return value


def apply_settings(base: dict, settings: Dict[str, str]) -> dict:
    out = dict(base)
    for key, value in settings.items():
        if key not in base:
            raise UsageError(f"unknown config key {key!r}")
        out[key] = _coerce(value, base[key])
    return out


def network_config(args) -> NetworkConfig:
    base = preset(args.preset).to_dict()
    settings = read_flat_config(args.config) if args.config else {}
    overrides = parse_overrides(args.set)
    if args.seed is not None and "seed" in overrides:
        raise UsageError("--seed conflicts with --set seed=...")
    settings.update(overrides)
    if args.seed is not None:
        settings["seed"] = str(args.seed)
    return NetworkConfig.from_dict(apply_settings(base, settings))


def scene_spec(path: Optional[str], seed: Optional[int]):
    base = {f.name: f.default for f in dataclasses.fields(SceneSpec) if f.name != "classes"}
    base["count"] = 1
    settings = read_flat_config(path) if path else {}
    values = apply_settings(base, settings)
    if seed is not None:
        values["seed"] = seed
    count = int(values.pop("count"))
    values["extents"] = tuple(values["extents"])
    if count < 1:
        raise UsageError("count must be positive")
    return SceneSpec(**values), count


# ---------------------------------------------------------------------------
# helpers


def _cloud_files(directory) -> List[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{d} is not a directory")
    files = sorted(p for p in d.iterdir() if p.suffix.lower() in CLOUD_SUFFIXES)
    if not files:
        raise UsageError(f"no point clouds in {d}")
    return files


def _partition(cloud, lam, k_adj, k_geo, max_dia):
    geo = compute_geometric_features(cloud, k_geo).features
    problem = PartitionProblem(build_adjacency(cloud, k_adj), geo, lam)
    result = cut_pursuit(problem)
    if max_dia is not None:
        result = enforce_diameter_cap(result, cloud, max_dia, problem)
    return geo, result


def palette(ids: np.ndarray) -> np.ndarray:
    """Distinct-ish colors per integer id (golden-ratio hue walk)."""
    h = (np.asarray(ids, dtype=np.float64) * 0.618033988749895) % 1.0
    s, v = 0.65, 0.95
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - s * f), v * (1 - s * (1 - f))
    table = np.stack([
        np.stack([np.full_like(h, v), t, np.full_like(h, p)], 1),
        np.stack([q, np.full_like(h, v), np.full_like(h, p)], 1),
        np.stack([np.full_like(h, p), np.full_like(h, v), t], 1),
        np.stack([np.full_like(h, p), q, np.full_like(h, v)], 1),
        np.stack([t, np.full_like(h, p), np.full_like(h, v)], 1),
        np.stack([np.full_like(h, v), np.full_like(h, p), q], 1),
    ], axis=0)
    return table[i, np.arange(len(h))]


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ---------------------------------------------------------------------------
# commands


def cmd_features(args):
    cloud = load_point_cloud(args.input)
    feats = compute_geometric_features(cloud, args.k_geo).features
    np.savetxt(args.out, feats, delimiter=",", header=",".join(FEATURE_NAMES), comments="",
               fmt="%.9g")
    print(f"points={cloud.n} k_geo={args.k_geo}")


def cmd_partition(args):
    cloud = load_point_cloud(args.input)
    t0 = time.perf_counter()
    _, result = _partition(cloud, args.lam, args.k_adj, args.k_geo, args.max_dia)
    wall = time.perf_counter() - t0
    comp = result.component
    _write_rows(args.out, ["point_index", "component_id"], zip(range(cloud.n), comp.tolist()))
    if args.ply:
        save_point_cloud(args.ply, PointCloud(cloud.coords, palette(comp), comp))
    if args.emit_superpoints:
        m = result.num_components
        centers = pool_mean(cloud.coords, comp, m)
        dia = partition_diameter(comp, cloud)
        counts = np.bincount(comp, minlength=m)
        _write_rows(args.emit_superpoints, ["component_id", "x", "y", "z", "diameter", "count"],
                    [[j, *map(repr, centers[j].tolist()), repr(float(dia[j])), int(counts[j])]
                     for j in range(m)])
    print(f"components={result.num_components} energy={result.energy:.6f} seconds={wall:.3f}")


def cmd_downsample(args):
    cloud = load_point_cloud(args.input)
    feats = cloud.colors if cloud.colors is not None else np.zeros((cloud.n, 1))
    if args.method == "gd":
        if args.cap is None:
            raise UsageError("--method gd needs --cap")
        _, result = _partition(cloud, args.lam, args.k_adj, args.k_geo, None)
        f2, p2, dmap = geometric_downsample(feats, cloud.coords, result.component, args.cap)
        group = dmap.group
    elif args.method == "voxel":
        if args.cell is None:
            raise UsageError("--method voxel needs --cell")
        f2, p2, dmap = voxel_downsample(feats, cloud.coords, args.cell)
        group = dmap.group
    else:
        count = max(1, int(np.ceil(cloud.n * args.ratio)))
        f2, p2, idx, _ = fps_downsample(feats, cloud.coords, count, args.k)
        # every input point is attributed to its nearest sample
        nearest, _ = knn_table(p2, 1, queries=cloud.coords)
        group = nearest[:, 0]
    colors = np.clip(f2.data, 0.0, 1.0) if cloud.colors is not None else None
    save_point_cloud(args.out, PointCloud(p2, colors))
    if args.parents:
        _write_rows(args.parents, ["point_index", "output_index"], zip(range(cloud.n), group.tolist()))
    print(f"input={cloud.n} output={len(p2)} method={args.method}")


def cmd_gen(args):
    spec, count = scene_spec(args.spec, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(count):
        sc = generate_scene(dataclasses.replace(spec, seed=spec.seed + i))
        name = f"scene_{i:04d}.txt"
        save_point_cloud(out / name, sc.cloud)
        for o in sc.inventory:
            rows.append([name, o.instance, o.name, o.label, o.count,
                         *map(repr, o.bbox_lo.tolist()), *map(repr, o.bbox_hi.tolist())])
    _write_rows(out / "inventory.csv",
                ["scene", "object", "class", "label", "points", "xmin", "ymin", "zmin", "xmax",
                 "ymax", "zmax"], rows)
    print(f"scenes={count} dir={out}")


def _load_labeled(directory, cfg):
    clouds = [load_point_cloud(p) for p in _cloud_files(directory)]
    for p, c in zip(_cloud_files(directory), clouds):
        if c.labels is None:
            raise UsageError(f"{p}: training data needs labels")
        if c.labels.max() >= cfg.num_classes:
            raise UsageError(f"{p}: label {c.labels.max()} >= num_classes={cfg.num_classes}")
    return clouds


def cmd_train(args):
    from .train import train

    cfg = network_config(args)
    clouds = _load_labeled(args.data, cfg)
    val = _load_labeled(args.val, cfg) if args.val else []
    result = train(clouds, cfg, val, out_dir=args.out, resume=args.resume)
    best = result.best or {}
    print(f"epochs={len(result.history)} best_mIoU={best.get('mIoU', float('nan')):.4f} "
          f"best_epoch={best.get('epoch', -1)} seconds={result.seconds:.1f}")


def cmd_eval(args):
    from .train import evaluate_plans, load_model

    net, _ = load_model(args.checkpoint)
    clouds = _load_labeled(args.data, net.cfg)
    m = evaluate_plans(net, [build_plan(c, net.cfg) for c in clouds])
    print(f"mIoU={m.miou:.4f} mAcc={m.macc:.4f} OA={m.oa:.4f}")


def cmd_export(args):
    cloud = load_point_cloud(args.input)
    if args.by == "component":
        _, result = _partition(cloud, args.lam, args.k_adj, args.k_geo, args.max_dia)
        ids = result.component
    else:
        if not args.checkpoint:
            raise UsageError("--by prediction needs --checkpoint")
        from .train import load_model, predict

        net, _ = load_model(args.checkpoint)
        ids = predict(net, build_plan(cloud, net.cfg))
    save_point_cloud(args.out, PointCloud(cloud.coords, palette(ids), ids))
    print(f"points={cloud.n} groups={len(np.unique(ids))} out={args.out}")


# ---------------------------------------------------------------------------


def _add_partition_args(p, lam=3.0):
    p.add_argument("--lam", type=float, default=lam, help="cut penalty (default %(default)s)")
    p.add_argument("--k-adj", type=int, default=10)
    p.add_argument("--k-geo", type=int, default=10)


def _add_net_args(p):
    p.add_argument("--preset", default="toy", help="s3dis, scannet or toy")
    p.add_argument("--config", help="flat 'key = value' file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geoseg", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="per-point geometric features as CSV")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--k-geo", type=int, default=10)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("partition", help="geometric partition, one CSV row per point")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    _add_partition_args(p)
    p.add_argument("--max-dia", type=float)
    p.add_argument("--ply", help="also write a color-by-component PLY")
    p.add_argument("--emit-superpoints", metavar="CSV")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("downsample", help="coarsen a cloud and write the parent map")
    p.add_argument("input")
    p.add_argument("--method", choices=["gd", "fps", "voxel"], required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--parents", help="CSV point_index,output_index")
    p.add_argument("--cap", type=float, help="gd size cap (m)")
    p.add_argument("--cell", type=float, help="voxel edge (m)")
    p.add_argument("--ratio", type=float, default=0.25, help="fps keep ratio")
    p.add_argument("--k", type=int, default=16, help="fps pooling neighbours")
    _add_partition_args(p)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_downsample)

    p = sub.add_parser("gen", help="write synthetic labelled scenes")
    p.add_argument("--spec", help="flat 'key = value' scene spec")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train the segmentation network")
    p.add_argument("--data", required=True)
    p.add_argument("--val")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", help="continue from a last.ckpt")
    p.add_argument("--seed", type=int)
    _add_net_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="metrics of a checkpoint on labelled clouds")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="color-by-component or color-by-prediction PLY")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.add_argument("--by", choices=["component", "prediction"], default="component")
    p.add_argument("--checkpoint")
    _add_partition_args(p)
    p.add_argument("--max-dia", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (UsageError, PointCloudError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
