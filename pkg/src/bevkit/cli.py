"""Command-line surface: per-frame preprocessing, anchor generation,
evaluation, proposal recall, codec debugging, and the network cost sheet.

Data is expected in the KITTI object layout under the configured data root
(velodyne/<id>.bin, calib/<id>.txt, planes/<id>.txt), with zero-padded
six-digit frame ids.  All diagnostics go to stderr; outputs are files under
the output directory or stdout tables.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import anchor_grid, bev, box_codec, metrics, net_shapes
from .config import RunConfig, read_config
from .errors import BevkitError
from .kitti_io import (
    filter_fov,
    flat_lidar_plane,
    lidar_to_rect_matrix,
    read_calibration,
    read_labels,
    read_plane,
    read_point_cloud,
    transform_plane,
)


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = read_config(args.config) if args.config else RunConfig()
        if getattr(args, "classes", None):
            cfg.classes = tuple(args.classes.split(","))
        if getattr(args, "jobs", None):
            cfg.jobs = args.jobs
        if getattr(args, "output", None):
            cfg.output_dir = args.output
        return args.func(args, cfg)
    except (BevkitError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bevkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--classes", help="comma list, e.g. car,pedestrian")
        p.add_argument("--jobs", type=int, help="worker processes for frame loops")
        p.add_argument("--output", help="output directory")

    p = sub.add_parser("bev", help="encode frames and dump BEV channels as PGM")
    p.add_argument("--frames", default="all")
    common(p)
    p.set_defaults(func=cmd_bev)

    p = sub.add_parser("anchors", help="generate and filter the 3D anchor grid")
    p.add_argument("--frames", default="all")
    common(p)
    p.set_defaults(func=cmd_anchors)

    p = sub.add_parser("eval", help="AP / heading-aware AP against ground truth")
    p.add_argument("detections", help="directory of KITTI-format results with scores")
    p.add_argument("ground_truth", help="directory of KITTI label files")
    common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("recall", help="proposal recall vs number of proposals")
    p.add_argument("proposals", help="directory of ranked KITTI-format proposals")
    p.add_argument("ground_truth", help="directory of KITTI label files")
    p.add_argument("--difficulty", default="moderate", choices=["easy", "moderate", "hard"])
    common(p)
    p.set_defaults(func=cmd_recall)

    p = sub.add_parser("encode", help="box-codec round-trip debugging")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("netinfo", help="per-layer shape / parameter / FLOP table")
    p.add_argument("--net", help="optional flat key-value network config file")
    common(p)
    p.set_defaults(func=cmd_netinfo)
    return parser


def _frame_ids(args, directory, suffix) -> list[str]:
    if args.frames != "all":
        return [f.strip() for f in args.frames.split(",") if f.strip()]
    if not os.path.isdir(directory):
        raise BevkitError(f"no such directory: {directory}")
    ids = sorted(
        name[: -len(suffix)]
        for name in os.listdir(directory)
        if name.endswith(suffix)
    )
    if not ids:
        raise BevkitError(f"no {suffix} files under {directory}")
    return ids


def _run_frames(worker, tasks, jobs: int):
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def _load_frame_cloud(cfg: RunConfig, frame: str):
    cloud = read_point_cloud(os.path.join(cfg.data_root, "velodyne", f"{frame}.bin"))
    calib = read_calibration(os.path.join(cfg.data_root, "calib", f"{frame}.txt"))
    cropped = filter_fov(
        cloud, calib, (cfg.image_width, cfg.image_height), cfg.bev_extents
    )
    return cloud, cropped, calib


def _bev_worker(task):
    cfg, frame = task
    cloud, cropped, _ = _load_frame_cloud(cfg, frame)
    bev_map = bev.build_bev_map(
        cropped,
        cfg.bev_extents,
        cfg.bev_resolution,
        (cfg.height_lo, cfg.height_hi),
        cfg.height_slices,
    )
    bev.dump_bev_channels(bev_map, cfg.output_dir, prefix=f"bev_{frame}")
    return frame, len(cloud), len(cropped)


def cmd_bev(args, cfg: RunConfig) -> int:
    frames = _frame_ids(args, os.path.join(cfg.data_root, "velodyne"), ".bin")
    os.makedirs(cfg.output_dir, exist_ok=True)
    rows = _run_frames(_bev_worker, [(cfg, f) for f in frames], cfg.jobs)
    with open(os.path.join(cfg.output_dir, "bev_counts.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "points_raw", "points_fov"])
        writer.writerows(rows)
    for frame, raw, fov in rows:
        print(f"{frame}: {raw} points, {fov} in view", file=sys.stderr)
    return 0


def _frame_ground_plane(cfg: RunConfig, frame: str, calib):
    path = os.path.join(cfg.data_root, "planes", f"{frame}.txt")
    if os.path.exists(path):
        return transform_plane(read_plane(path), lidar_to_rect_matrix(calib))
    return flat_lidar_plane(cfg.sensor_height)


def _anchor_worker(task):
    cfg, frame = task
    _, cropped, calib = _load_frame_cloud(cfg, frame)
    integral = bev.build_occupancy_integral(cropped, cfg.bev_extents, cfg.bev_resolution)
    plane = _frame_ground_plane(cfg, frame, calib)
    counts = []
    for class_name in cfg.classes:
        anchors = anchor_grid.generate_anchor_grid(
            cfg.bev_extents, cfg.anchor_stride, cfg.anchor_sizes_for(class_name), plane
        )
        kept = anchor_grid.filter_empty_anchors(anchors, integral)
        anchor_grid.write_anchors_csv(
            os.path.join(cfg.output_dir, f"anchors_{class_name}_{frame}.csv"), kept
        )
        counts.append((frame, class_name, len(anchors), len(kept)))
    return counts


def cmd_anchors(args, cfg: RunConfig) -> int:
    frames = _frame_ids(args, os.path.join(cfg.data_root, "velodyne"), ".bin")
    os.makedirs(cfg.output_dir, exist_ok=True)
    all_rows = _run_frames(_anchor_worker, [(cfg, f) for f in frames], cfg.jobs)
    with open(os.path.join(cfg.output_dir, "anchor_counts.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "class", "total", "nonempty"])
        for rows in all_rows:
            writer.writerows(rows)
    for rows in all_rows:
        for frame, class_name, total, kept in rows:
            print(f"{frame} {class_name}: {kept}/{total} non-empty", file=sys.stderr)
    return 0


def _read_eval_frames(det_dir: str, gt_dir: str):
    frames = sorted(
        name[:-4] for name in os.listdir(gt_dir) if name.endswith(".txt")
    )
    if not frames:
        raise BevkitError(f"no label files under {gt_dir}")
    gts, dets = [], []
    for frame in frames:
        gts.append(read_labels(os.path.join(gt_dir, f"{frame}.txt")))
        det_path = os.path.join(det_dir, f"{frame}.txt")
        dets.append(metrics.read_detections(det_path) if os.path.exists(det_path) else [])
    return frames, dets, gts


def cmd_eval(args, cfg: RunConfig) -> int:
    _, dets, gts = _read_eval_frames(args.detections, args.ground_truth)
    os.makedirs(cfg.output_dir, exist_ok=True)
    table = cfg.difficulty_table()
    summary_lines = []
    for class_name in cfg.classes:
        for difficulty in (
            metrics.Difficulty.EASY,
            metrics.Difficulty.MODERATE,
            metrics.Difficulty.HARD,
        ):
            ap, ahs, curve = metrics.evaluate_class(
                dets,
                gts,
                class_name,
                difficulty,
                threshold=cfg.eval_iou_for(class_name),
                table=table,
                mode=cfg.ap_mode,
            )
            tag = difficulty.name.lower()
            with open(
                os.path.join(cfg.output_dir, f"pr_{class_name}_{tag}.csv"),
                "w",
                newline="",
            ) as fh:
                writer = csv.writer(fh)
                writer.writerow(["recall", "precision", "heading_precision"])
                for r, p, hp in zip(curve.recall, curve.precision, curve.heading_precision):
                    writer.writerow([repr(float(r)), repr(float(p)), repr(float(hp))])
            summary_lines.append(
                f"class={class_name} difficulty={tag} "
                f"ap={ap:.6f} ahs={ahs:.6f} n_gt={curve.n_gt}"
            )
    summary = "\n".join(summary_lines) + "\n"
    with open(os.path.join(cfg.output_dir, "summary.txt"), "w") as fh:
        fh.write(summary)
    print(summary, end="")
    return 0


def cmd_recall(args, cfg: RunConfig) -> int:
    _, props, gts = _read_eval_frames(args.proposals, args.ground_truth)
    os.makedirs(cfg.output_dir, exist_ok=True)
    level = metrics.Difficulty[args.difficulty.upper()]
    table = cfg.difficulty_table()
    for class_name in cfg.classes:
        wanted = class_name.lower()
        prop_boxes = [
            [d.box for d in sorted(frame, key=lambda d: -d.score)
             if d.class_name.lower() == wanted]
            for frame in props
        ]
        gt_boxes = [
            [
                metrics.label_to_box(obj)
                for obj in frame
                if not obj.is_dontcare
                and obj.class_name.lower() == wanted
                and metrics.difficulty_of(obj, table) <= level
            ]
            for frame in gts
        ]
        points = metrics.recall_curve(prop_boxes, gt_boxes, cfg.recall_counts)
        path = os.path.join(cfg.output_dir, f"recall_{class_name}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "recall"])
            for n, r in points:
                writer.writerow([n, repr(float(r))])
        for n, r in points:
            print(f"{class_name} n={n} recall={r:.4f}", file=sys.stderr)
    return 0


def cmd_encode(args, cfg: RunConfig) -> int:
    rng = np.random.default_rng(args.seed)
    plane = flat_lidar_plane(cfg.sensor_height)
    worst4 = worst8 = 0.0
    for _ in range(args.count):
        proposal = _random_box(rng)
        gt = _random_box(rng, near=proposal)
        target = box_codec.encode_four_corner(proposal, gt, plane)
        decoded = box_codec.decode_four_corner(proposal, target, plane)
        err4 = _corner_set_error(decoded.corners, box_codec.corners_bev(gt))
        target8 = box_codec.encode_eight_corner(proposal, gt)
        decoded8 = box_codec.decode_eight_corner(proposal, target8)
        err8 = _corner_set_error(decoded8, box_codec.corners_3d(gt))
        worst4 = max(worst4, err4)
        worst8 = max(worst8, err8)
    print(f"pairs={args.count} seed={args.seed}")
    print(f"four_corner_max_error={worst4:.3e}")
    print(f"eight_corner_max_error={worst8:.3e}")
    return 0


def _random_box(rng, near=None) -> box_codec.OrientedBox3D:
    if near is None:
        center = (rng.uniform(0, 70), rng.uniform(-40, 40), rng.uniform(-2, 1))
    else:
        cx, cy, cz = near.centroid
        center = (cx + rng.uniform(-2, 2), cy + rng.uniform(-2, 2), cz + rng.uniform(-0.5, 0.5))
    dims = tuple(rng.uniform(0.5, 5.0, size=3))
    return box_codec.OrientedBox3D(center, dims, rng.uniform(-np.pi, np.pi))


def _corner_set_error(a: np.ndarray, b: np.ndarray) -> float:
    d = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    return float(np.max(d.min(axis=1)))


def cmd_netinfo(args, cfg: RunConfig) -> int:
    if args.net:
        with open(args.net) as fh:
            net = net_shapes.config_from_text(fh.read())
    else:
        net = net_shapes.default_network_config(input_channels=cfg.height_slices + 1)
    n_lat, n_fwd = bev.grid_shape(cfg.bev_extents, cfg.bev_resolution)
    m = -(-n_lat // 8) * 8
    n = -(-n_fwd // 8) * 8  # forward axis padded up for the /8 contract
    shapes = net_shapes.propagate_shapes(net, (m, n, net.encoder[0].in_channels if net.encoder else cfg.height_slices + 1))

    print(f"input: {m} x {n} (grid {n_lat} x {n_fwd} padded to /8)")
    print(f"{'branch':<18} {'#':>3} {'kind':<17} {'out shape':<16} {'params':>12} {'flops':>16}")
    total_params = 0
    input_shape = (m, n, net.encoder[0].in_channels if net.encoder else cfg.height_slices + 1)
    enc_out = shapes["encoder"][-1] if shapes["encoder"] else input_shape
    dec_out = shapes["decoder"][-1] if shapes["decoder"] else enc_out
    branch_inputs = {
        "encoder": input_shape,
        "decoder": enc_out,
        "rpn_head": dec_out,
        "second_stage_head": dec_out,
    }
    for name, layers in net.branches():
        prev = branch_inputs[name]
        for i, (layer, out_shape) in enumerate(zip(layers, shapes[name])):
            params = net_shapes.layer_parameters(layer)
            flops = net_shapes.layer_flops(layer, prev, out_shape)
            total_params += params
            shape_txt = "x".join(str(v) for v in out_shape)
            print(f"{name:<18} {i:>3} {layer.kind:<17} {shape_txt:<16} {params:>12} {flops:>16}")
            prev = out_shape
    total_flops = net_shapes.count_flops(net, input_shape)
    print(f"totals: params={total_params} flops={total_flops}")
    crop_bytes = net_shapes.memory_estimate(100_000, (7, 7), 256, 4)
    reduced = net_shapes.memory_estimate(100_000, (7, 7), 32, 4)
    print(f"crop buffer, 100000 rois at 7x7x256xfloat32: {crop_bytes} bytes")
    print(f"crop buffer after 1x1 reduction to depth 32: {reduced} bytes")
    print(
        f"reference full-detector totals: params={net_shapes.REFERENCE_PARAM_COUNT} "
        f"flops={net_shapes.REFERENCE_FLOP_COUNT}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
