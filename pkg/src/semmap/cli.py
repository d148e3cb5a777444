"""Command-line pipeline tying ingestion, mapping, export, and metrics.

Subcommands: ``build-map``, ``eval``, ``export``, ``gen-synth``,
``refine``, ``info``.  Configuration files are line-oriented
``key = value`` text (``#`` comments); command-line flags override file
values.  ``gen-synth`` writes a ``camera.txt`` config next to the dataset
so ``build-map`` picks up the matching intrinsics automatically.

Frame preprocessing (image decode and back-projection) may run on a
bounded worker pool; map insertion stays single-writer in timestamp
order, so outputs are byte-identical for any worker count.
"""

from __future__ import annotations

import argparse
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .geom import AxisRemap, CameraIntrinsics, Pose, invert, remap_camera_to_world, robot_pose
from .semantic import FusionConfig, LabelTable
from .octree import MapConfig, SemanticOctree, extract_frame_points
from .ingest import (
    LabelRaster,
    NoAssociations,
    SceneSpec,
    Box,
    Trajectory,
    generate_synthetic,
    load_label_maps,
    load_trajectory,
    load_tum_sequence,
    save_trajectory,
    write_tum_dataset,
)
from .pnp import Correspondence, RefineConfig, refine_pose
from . import evaltraj


class PipelineError(RuntimeError):
    pass


# ----------------------------------------------------------------------
# key = value files
# ----------------------------------------------------------------------


def parse_kv_file(path) -> list[tuple[str, str]]:
    """Parse `key = value` lines; keys may repeat; `#` starts a comment."""
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected `key = value`")
            key, value = line.split("=", 1)
            pairs.append((key.strip(), value.strip()))
    return pairs


def _as_bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


_CONFIG_DEFAULTS: dict[str, str] = {
    "resolution": "0.1",
    "max_depth": "10",
    "origin": "0 0 0",
    "p_hit": "0.7",
    "p_miss": "0.4",
    "l_min": "-2.0",
    "l_max": "3.5",
    "occupancy_threshold": repr(0.5 + 1e-9),
    "max_range": "inf",
    "carve_free_space": "false",
    "alpha": "0.5",
    "k_max": "5",
    "bayes_on_equal_sets": "false",
    "fx": "525.0",
    "fy": "525.0",
    "cx": "319.5",
    "cy": "239.5",
    "width": "640",
    "height": "480",
    "depth_scale": "5000",
    "remap_preset": "ros-optical",
    "camera_from_robot": "0 0 0 0 0 0 1",
    "stride": "1",
    "association_tolerance": "0.02",
    "workers": "1",
}


@dataclass
class PipelineConfig:
    """Fully resolved build-map parameters."""

    map: MapConfig
    intrinsics: CameraIntrinsics
    remap: AxisRemap | None
    camera_from_robot: Pose
    stride: int
    association_tolerance: float
    workers: int


def resolve_pipeline_config(sources: list[list[tuple[str, str]]]) -> PipelineConfig:
    """Merge config sources (later ones win) into a PipelineConfig."""
    values = dict(_CONFIG_DEFAULTS)
    for pairs in sources:
        for key, value in pairs:
            if key not in values:
                raise ValueError(f"unknown config key {key!r}")
            values[key] = value

    fusion = FusionConfig(
        alpha=float(values["alpha"]),
        k_max=int(values["k_max"]),
        bayes_on_equal_sets=_as_bool(values["bayes_on_equal_sets"]),
    )
    map_cfg = MapConfig(
        resolution=float(values["resolution"]),
        max_depth=int(values["max_depth"]),
        origin=tuple(float(v) for v in values["origin"].split()),
        p_hit=float(values["p_hit"]),
        p_miss=float(values["p_miss"]),
        l_min=float(values["l_min"]),
        l_max=float(values["l_max"]),
        occupancy_threshold=float(values["occupancy_threshold"]),
        max_range=float(values["max_range"]),
        carve_free_space=_as_bool(values["carve_free_space"]),
        fusion=fusion,
    )
    intr = CameraIntrinsics(
        fx=float(values["fx"]),
        fy=float(values["fy"]),
        cx=float(values["cx"]),
        cy=float(values["cy"]),
        width=int(values["width"]),
        height=int(values["height"]),
        depth_scale=float(values["depth_scale"]),
    )
    preset = values["remap_preset"]
    remap = None if preset in ("identity", "none") else AxisRemap.from_preset(preset)
    cfr = values["camera_from_robot"].split()
    if len(cfr) != 7:
        raise ValueError("camera_from_robot needs 7 values: tx ty tz qx qy qz qw")
    stride = int(values["stride"])
    if stride < 1:
        raise ValueError("stride must be >= 1")
    return PipelineConfig(
        map=map_cfg,
        intrinsics=intr,
        remap=remap,
        camera_from_robot=Pose.from_quaternion(*(float(v) for v in cfr)),
        stride=stride,
        association_tolerance=float(values["association_tolerance"]),
        workers=max(1, int(values["workers"])),
    )


# ----------------------------------------------------------------------
# build-map
# ----------------------------------------------------------------------


@dataclass
class RunSummary:
    frames: int = 0
    skipped_frames: int = 0
    points_inserted: int = 0
    leaves: int = 0
    bytes_written: int = 0
    stage_seconds: dict[str, float] = field(default_factory=dict)

    def print(self, out=None) -> None:
        out = out if out is not None else sys.stdout
        print(f"frames {self.frames}", file=out)
        print(f"skipped_frames {self.skipped_frames}", file=out)
        print(f"points_inserted {self.points_inserted}", file=out)
        print(f"leaves {self.leaves}", file=out)
        print(f"bytes_written {self.bytes_written}", file=out)
        for stage, seconds in self.stage_seconds.items():
            print(f"time.{stage} {seconds:.3f}", file=out)


def _nearest_raster(label_maps: dict[float, LabelRaster], t: float, tol: float):
    if not label_maps:
        return None
    best = min(label_maps, key=lambda s: (abs(s - t), s))
    return label_maps[best] if abs(best - t) <= tol else None


def cmd_build_map(args) -> int:
    sources = []
    dataset = Path(args.dataset)
    camera_cfg = dataset / "camera.txt"
    if camera_cfg.is_file():
        sources.append(parse_kv_file(camera_cfg))
    if args.config:
        sources.append(parse_kv_file(args.config))
    overrides = [("stride", str(args.stride))] if args.stride else []
    if args.workers:
        overrides.append(("workers", str(args.workers)))
    for kv in args.set or ():
        if "=" not in kv:
            raise ValueError(f"--set expects KEY=VALUE, got {kv!r}")
        key, value = kv.split("=", 1)
        overrides.append((key.strip(), value.strip()))
    sources.append(overrides)
    cfg = resolve_pipeline_config(sources)

    summary = RunSummary()
    t0 = time.perf_counter()
    trajectory = load_trajectory(args.trajectory)
    label_maps = load_label_maps(args.labels) if args.labels else {}
    table = None
    table_path = Path(args.label_table) if args.label_table else dataset / "labels.txt"
    if table_path.is_file():
        table = LabelTable.load(table_path)
    sequence = load_tum_sequence(dataset, cfg.association_tolerance)
    if len(sequence) == 0:
        raise NoAssociations(
            f"no rgb/depth pairs within {cfg.association_tolerance}s in {dataset}"
        )
    summary.stage_seconds["load"] = time.perf_counter() - t0

    tree = SemanticOctree(cfg.map, table)
    robot_track: list[tuple[float, Pose]] = []

    def prepare(entry):
        """Pure per-frame work: decode, look up the pose, back-project."""
        t = entry[0]
        pose = trajectory.interpolate(t, cfg.association_tolerance)
        if pose is None:
            return t, None, None
        cam_pose = remap_camera_to_world(pose, cfg.remap) if cfg.remap else pose
        frame = sequence.load_frame(entry)
        raster = _nearest_raster(label_maps, t, cfg.association_tolerance)
        if raster is not None:
            frame.label_ids = raster.ids
            frame.label_probs = raster.probs
        try:
            batch = extract_frame_points(
                frame, cfg.intrinsics, cam_pose, cfg.stride, cfg.map.max_range
            )
        except Exception as e:
            raise PipelineError(f"frame {t:.6f}: {e}") from e
        return t, cam_pose, batch

    def consume(prepared):
        for t, cam_pose, batch in prepared:
            if batch is None:
                summary.skipped_frames += 1
                continue
            stats = tree.insert_batch(batch)
            summary.frames += 1
            summary.points_inserted += stats.inserted
            robot_track.append((t, robot_pose(cam_pose, cfg.camera_from_robot)))

    t0 = time.perf_counter()
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            consume(pool.map(prepare, sequence.entries))
    else:
        consume(map(prepare, sequence.entries))
    summary.stage_seconds["insert"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    tree.prune()
    data = tree.serialize()
    Path(args.output).write_bytes(data)
    summary.stage_seconds["save"] = time.perf_counter() - t0
    summary.leaves = tree.leaf_count()
    summary.bytes_written = len(data)

    if args.robot_trajectory and robot_track:
        save_trajectory(
            args.robot_trajectory,
            Trajectory(tuple(t for t, _ in robot_track), tuple(p for _, p in robot_track)),
        )
    summary.print()
    return 0


# ----------------------------------------------------------------------
# eval
# ----------------------------------------------------------------------


def cmd_eval(args) -> int:
    est = load_trajectory(args.est)
    ref = load_trajectory(args.ref)
    if args.mode == "ate":
        report = evaltraj.ate(est, ref, args.tolerance)
        print(f"ATE.trans.rmse {report.rmse_translation!r}")
        print(f"ATE.rot.rmse {report.rmse_rotation!r}")
        print(f"ATE.pairs {len(report.trans_residuals)}")
    else:
        report = evaltraj.rpe(est, ref, args.delta, args.tolerance)
        print(f"RPE.trans.rmse {report.rmse_translation!r}")
        print(f"RPE.rot.rmse {report.rmse_rotation!r}")
        print(f"RPE.pairs {len(report.trans_residuals)}")
    if args.csv:
        evaltraj.write_residual_csv(args.csv, report.trans_residuals, report.rot_residuals)
    return 0


# ----------------------------------------------------------------------
# export / info
# ----------------------------------------------------------------------


def cmd_export(args) -> int:
    tree = SemanticOctree.deserialize(Path(args.map).read_bytes())
    count = tree.export_ply(args.output, args.threshold)
    print(f"vertices {count}")
    return 0


def cmd_info(args) -> int:
    data = Path(args.map).read_bytes()
    tree = SemanticOctree.deserialize(data)
    cfg = tree.config
    occupied = sum(
        1
        for _, _, state in tree.iterate_leaves()
        if 1.0 / (1.0 + math.exp(-state.log_odds)) > cfg.occupancy_threshold
    )
    print(f"file {args.map}")
    print(f"bytes {len(data)}")
    print(f"resolution {cfg.resolution!r}")
    print(f"max_depth {cfg.max_depth}")
    print(f"origin {cfg.origin[0]!r} {cfg.origin[1]!r} {cfg.origin[2]!r}")
    print(f"l_min {cfg.l_min!r}")
    print(f"l_max {cfg.l_max!r}")
    print(f"labels {0 if tree.label_table is None else len(tree.label_table)}")
    print(f"leaves {tree.leaf_count()}")
    print(f"occupied {occupied}")
    return 0


# ----------------------------------------------------------------------
# gen-synth
# ----------------------------------------------------------------------


def parse_scene_file(path) -> SceneSpec:
    """Build a SceneSpec from a line-oriented scene description file."""
    pairs = parse_kv_file(path)
    scalars: dict[str, str] = {}
    boxes: list[Box] = []
    waypoints: list[tuple[float, float, float]] = []
    names: list[str] = []
    colors: list[tuple[int, int, int]] = []
    for key, value in pairs:
        if key == "box":
            parts = value.split()
            if len(parts) != 7:
                raise ValueError(f"box needs `class_id x0 y0 z0 x1 y1 z1`, got {value!r}")
            boxes.append(
                Box(
                    class_id=int(parts[0]),
                    min_corner=tuple(float(v) for v in parts[1:4]),
                    max_corner=tuple(float(v) for v in parts[4:7]),
                )
            )
        elif key == "waypoint":
            parts = value.split()
            if len(parts) != 3:
                raise ValueError(f"waypoint needs `x y z`, got {value!r}")
            waypoints.append(tuple(float(v) for v in parts))
        elif key == "label":
            parts = value.split()
            if len(parts) != 5:
                raise ValueError(f"label needs `id name r g b`, got {value!r}")
            if int(parts[0]) != len(names):
                raise ValueError("label ids must ascend from 0")
            names.append(parts[1])
            colors.append((int(parts[2]), int(parts[3]), int(parts[4])))
        else:
            scalars[key] = value
    if not names:
        raise ValueError("scene file declares no labels")
    room = tuple(float(v) for v in scalars.get("room", "").split())
    if len(room) != 3:
        raise ValueError("scene file needs `room = x y z`")
    intr = CameraIntrinsics(
        fx=float(scalars.get("fx", "60")),
        fy=float(scalars.get("fy", "60")),
        cx=float(scalars.get("cx", "31.5")),
        cy=float(scalars.get("cy", "23.5")),
        width=int(scalars.get("width", "64")),
        height=int(scalars.get("height", "48")),
        depth_scale=float(scalars.get("depth_scale", "5000")),
    )
    return SceneSpec(
        room=room,
        boxes=tuple(boxes),
        waypoints=tuple(waypoints),
        intrinsics=intr,
        labels=LabelTable(tuple(names), tuple(colors)),
        wall_class=int(scalars.get("wall_class", "0")),
        depth_sigma=float(scalars.get("depth_sigma", "0")),
        label_flip=float(scalars.get("label_flip", "0")),
    )


def write_camera_config(path, intr: CameraIntrinsics) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"fx = {intr.fx!r}\nfy = {intr.fy!r}\ncx = {intr.cx!r}\ncy = {intr.cy!r}\n")
        f.write(f"width = {intr.width}\nheight = {intr.height}\n")
        f.write(f"depth_scale = {intr.depth_scale!r}\n")
        f.write("remap_preset = none\n")


def cmd_gen_synth(args) -> int:
    spec = parse_scene_file(args.scene)
    t0 = time.perf_counter()
    frames, trajectory = generate_synthetic(spec, args.frames, args.seed)
    out = Path(args.output)
    write_tum_dataset(out, frames, trajectory, spec.labels)
    write_camera_config(out / "camera.txt", spec.intrinsics)
    elapsed = time.perf_counter() - t0
    print(f"frames {len(frames)}")
    print(f"directory {out}")
    print(f"time.generate {elapsed:.3f}")
    return 0


# ----------------------------------------------------------------------
# refine
# ----------------------------------------------------------------------


def _parse_correspondences(path) -> list[Correspondence]:
    corrs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected `u v X Y Z`")
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
            corrs.append(Correspondence(pixel=vals[:2], world_point=vals[2:]))
    return corrs


def cmd_refine(args) -> int:
    corrs = _parse_correspondences(args.correspondences)
    sources = [parse_kv_file(args.config)] if args.config else []
    cfg = resolve_pipeline_config(sources)
    initial_camera = Pose.identity()
    if args.initial:
        vals = [float(v) for v in args.initial.split()]
        if len(vals) != 7:
            raise ValueError("--initial needs 7 values: tx ty tz qx qy qz qw")
        initial_camera = Pose.from_quaternion(*vals)
    result = refine_pose(invert(initial_camera), cfg.intrinsics, corrs, RefineConfig())
    cam = result.world_from_camera
    tx, ty, tz = cam.translation
    qx, qy, qz, qw = cam.quaternion()
    print(f"0.000000 {tx:.9f} {ty:.9f} {tz:.9f} {qx:.9f} {qy:.9f} {qz:.9f} {qw:.9f}")
    print(f"final_cost {result.final_cost!r}")
    print(f"iterations {result.iterations}")
    print(f"converged {str(result.converged).lower()}")
    return 0


# ----------------------------------------------------------------------
# entry point
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="semmap", description="Semantic sparse voxel mapping from RGB-D data"
    )
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-map", help="fuse a dataset into a semantic octree map")
    b.add_argument("--dataset", required=True, help="TUM-layout dataset directory")
    b.add_argument("--trajectory", required=True, help="TUM trajectory file of camera poses")
    b.add_argument("--output", required=True, help="output .s3m map path")
    b.add_argument("--labels", help="directory of .slab label rasters")
    b.add_argument("--label-table", help="label table file (default: <dataset>/labels.txt)")
    b.add_argument("--config", help="key = value pipeline config file")
    b.add_argument("--stride", type=int, help="pixel stride override")
    b.add_argument("--workers", type=int, help="preprocessing worker count")
    b.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    b.add_argument("--robot-trajectory", help="write the composed body trajectory here")
    b.set_defaults(func=cmd_build_map)

    e = sub.add_parser("eval", help="trajectory accuracy metrics")
    e.add_argument("--est", required=True, help="estimated trajectory (TUM format)")
    e.add_argument("--ref", required=True, help="reference trajectory (TUM format)")
    e.add_argument("--mode", choices=("ate", "rpe"), default="ate")
    e.add_argument("--delta", type=int, default=1, help="rpe frame step")
    e.add_argument("--tolerance", type=float, default=0.02, help="association tolerance [s]")
    e.add_argument("--csv", help="write per-pose residuals here")
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export", help="export occupied voxels as ASCII PLY")
    x.add_argument("--map", required=True)
    x.add_argument("--output", required=True)
    x.add_argument("--threshold", type=float, help="occupancy threshold override")
    x.set_defaults(func=cmd_export)

    g = sub.add_parser("gen-synth", help="generate a synthetic TUM-layout dataset")
    g.add_argument("--scene", required=True, help="scene description file")
    g.add_argument("--output", required=True, help="output dataset directory")
    g.add_argument("--frames", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_synth)

    r = sub.add_parser("refine", help="refine a camera pose from 2D-3D correspondences")
    r.add_argument("--correspondences", required=True, help="file of `u v X Y Z` lines")
    r.add_argument("--config", help="config file providing the intrinsics")
    r.add_argument("--initial", help="initial camera pose `tx ty tz qx qy qz qw`")
    r.set_defaults(func=cmd_refine)

    i = sub.add_parser("info", help="print map header and statistics")
    i.add_argument("--map", required=True)
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:  # noqa: BLE001 - single reporting point for the CLI
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
