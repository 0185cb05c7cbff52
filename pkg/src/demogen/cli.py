"""Command line front end.

Exit codes: 0 on success, 1 for bad usage (argument errors), 2 when a stage
fails with a domain error (bad manifest, unreachable pose, invalid dataset,
and so on).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import dataset as ds
from .errors import DemogenError, SchemaError, UnknownFormat
from .geometry import Pose, pose_error
from .kinematics import (
    GRIPPER_OPEN,
    IkParams,
    bundled_chain_text,
    forward_kinematics,
    grasp_to_ee_trajectory,
    neutral_joints,
    parse_chain,
    trajectory_to_joints,
)
from .layout import load_scene, save_scene, scale_to_metric, solve_layout
from .manifest import load_manifest
from .pipeline import PipelineConfig, load_config, run_batch
from .providers import (
    assemble_bundle,
    read_fixture_spec,
    read_grasp,
    read_raw_extents,
    synth_fixture,
)
from .tracking import (
    FusionParams,
    conjugate_trajectory,
    fuse_rigid_trajectory,
    lift_tracks,
    read_trajectory,
    remove_outlier_tracks,
    smooth_trajectory,
    write_trajectory,
)
from .util import atomic_write_text, format_float

log = logging.getLogger("demogen.cli")


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; we reserve 2 for domain
    failures, so usage problems exit with 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_chain_arg(spec: str):
    """A chain argument is either a bundled chain name or a JSON file path."""
    if os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fh:
            return parse_chain(fh.read()), fh.name
    return parse_chain(bundled_chain_text(spec)), spec


def _chain_text_arg(spec: str) -> str:
    if os.path.exists(spec):
        with open(spec, "r", encoding="utf-8") as fh:
            return fh.read()
    return bundled_chain_text(spec)


# --- subcommands -----------------------------------------------------------------

def cmd_gen_scene(args) -> int:
    manifest = load_manifest(args.manifest)
    if args.extents:
        raw = read_raw_extents(args.extents)
        extents = {}
        for entry in manifest.entries:
            if entry.name not in raw:
                raise SchemaError("extents file is missing an entry",
                                  entry=entry.name)
            extents[entry.name] = scale_to_metric(raw[entry.name],
                                                  entry.nominal_extent)[0]
    else:
        extents = {e.name: e.nominal_extent for e in manifest.entries}
    seed = manifest.seed if args.seed is None else args.seed
    layout = solve_layout(manifest, extents, seed=seed)
    save_scene(layout, args.out)
    print(f"placed {len(layout.objects)} objects -> {args.out}")
    return 0


def cmd_lift_tracks(args) -> int:
    gt_motion = None
    camera = None
    if args.fixture is not None:
        spec = read_fixture_spec(args.fixture)
        data = synth_fixture(spec)
        bundle = data.bundle
        gt_motion = data.gt_motion
        camera = spec.camera_pose
        seed = spec.seed if args.seed is None else args.seed
    else:
        bundle = assemble_bundle(args.tracks_dir)
        seed = 0 if args.seed is None else args.seed
    bundle.validate()
    lifted = lift_tracks(bundle)
    params = FusionParams(seed=seed)
    trajectory = fuse_rigid_trajectory(lifted, params)
    if not args.keep_outliers:
        trajectory = remove_outlier_tracks(trajectory, lifted, params=params)
    if args.smooth_window > 1:
        trajectory = smooth_trajectory(trajectory, window=args.smooth_window)
    if args.camera_pose is not None:
        vals = args.camera_pose
        camera = Pose(np.array(vals[:3]), np.array(vals[3:]))
    write_trajectory(trajectory, args.out, camera_pose=camera)
    print(f"lifted {len(trajectory.poses)} frames, "
          f"dropped {len(trajectory.dropped_point_ids)} tracks, "
          f"worst rms {np.max(trajectory.per_frame_rms):.6f} m -> {args.out}")
    if gt_motion is not None:
        errors = [pose_error(a, b) for a, b in zip(trajectory.poses,
                                                   gt_motion.poses)]
        print(f"self-check: max translation error "
              f"{max(e[0] for e in errors):.9f} m, max rotation error "
              f"{np.degrees(max(e[1] for e in errors)):.6f} deg")
    return 0


def cmd_solve_ik(args) -> int:
    trajectory, camera = read_trajectory(args.trajectory)
    scene = load_scene(args.scene)
    start_pose = scene.get(args.target).pose
    if camera is not None:
        start_in_camera = camera.inverse().compose(start_pose)
        trajectory = conjugate_trajectory(trajectory, start_in_camera)
    grasp = read_grasp(args.grasp)
    chain, _ = _load_chain_arg(args.chain)
    if args.base is not None:
        chain = chain.with_base(Pose(np.array(args.base),
                                     np.array([1.0, 0.0, 0.0, 0.0])))
    ee = grasp_to_ee_trajectory(trajectory, start_pose, grasp,
                                frame_dt=args.dt,
                                approach_steps=args.approach_steps,
                                release_steps=args.release_steps)
    joints = trajectory_to_joints(chain, ee, neutral_joints(chain), IkParams())
    positions = np.stack([p.position for p in ee.poses])
    quaternions = np.stack([p.quat for p in ee.poses])
    gripper = np.array([0 if g == GRIPPER_OPEN else 1 for g in joints.gripper])
    ds.write_step_records(args.out, joints.timestamps, positions,
                          quaternions, gripper, joints.joints)
    errors = [
        float(np.linalg.norm(forward_kinematics(chain, joints.joints[i]).position
                             - ee.poses[i].position))
        for i in range(len(ee))
    ]
    print(f"solved {len(ee)} waypoints, "
          f"max position error {max(errors):.6f} m -> {args.out}")
    return 0


def cmd_emit_dataset(args) -> int:
    root = args.root
    if not os.path.exists(os.path.join(root, ds.CHAIN_FILE)):
        ds.init_dataset(root, _chain_text_arg(args.chain))
    timestamps, positions, quaternions, gripper, joints = \
        ds.read_step_records(args.steps)
    with open(args.scene, "r", encoding="utf-8") as fh:
        scene_file = ds.store_scene(root, fh.read())
    episode = ds.Episode(
        episode_id=args.episode_id,
        timestamps=timestamps, positions=positions,
        quaternions=quaternions, gripper=gripper, joints=joints,
        context=ds.EpisodeContext(prompt=args.prompt,
                                  manifest_hash=args.manifest_hash,
                                  scene_file=scene_file, seed=args.seed),
        quality=ds.QualityReport(per_frame_rms=args.quality_rms,
                                 dropped_tracks=args.quality_dropped,
                                 ik_max_error=args.quality_ik_error),
    )
    steps_path, meta_path = ds.emit_episode(root, episode)
    ds.finalize_dataset(root, generation_rate_eph=0.0)
    print(f"emitted episode {args.episode_id} -> {steps_path}, {meta_path}")
    return 0


def cmd_run_pipeline(args) -> int:
    config = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.episodes is not None:
        overrides["num_episodes"] = args.episodes
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.prompt is not None:
        overrides["prompt"] = args.prompt
    if args.chain is not None:
        if os.path.exists(args.chain):
            overrides["chain_path"] = args.chain
        else:
            overrides["chain_name"] = args.chain
    if overrides:
        config = dataclasses.replace(config, **overrides)
    report = run_batch(config, args.out)
    print(f"emitted {report.emitted}/{report.requested} episodes "
          f"to {args.out} in {report.elapsed_s:.1f} s")
    print(f"generation rate: {report.generation_rate_eph:.1f} episodes/hour")
    return 0


def _export_obj(scene, path: str) -> None:
    lines = []
    offset = 0
    for obj in scene.objects:
        lines.append(f"o {obj.name}")
        box = obj.aabb
        lo, hi = box.min, box.max
        for z in (lo[2], hi[2]):
            for y in (lo[1], hi[1]):
                for x in (lo[0], hi[0]):
                    lines.append("v " + " ".join(
                        format_float(c) for c in (x, y, z)))
        # quads over the corner ordering above (x fastest, then y, then z)
        for quad in ((1, 2, 4, 3), (5, 7, 8, 6), (1, 5, 6, 2),
                     (3, 4, 8, 7), (1, 3, 7, 5), (2, 6, 8, 4)):
            lines.append("f " + " ".join(str(i + offset) for i in quad))
        offset += 8
    atomic_write_text(path, "\n".join(lines) + "\n")


def _export_csv(episode, path: str) -> None:
    lines = ["t,x,y,z,qw,qx,qy,qz,gripper"]
    for i in range(episode.num_steps):
        fields = [episode.timestamps[i], *episode.positions[i],
                  *episode.quaternions[i]]
        lines.append(",".join(format_float(v) for v in fields)
                     + f",{int(episode.gripper[i])}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def _export_svg(episode, path: str, size: int = 400) -> None:
    """Top-down polyline of the end-effector path (world X right, Y up)."""
    xy = episode.positions[:, :2]
    lo = xy.min(axis=0)
    hi = xy.max(axis=0)
    span = np.maximum(hi - lo, 1e-6)
    pad = 0.05 * float(span.max())
    lo, hi = lo - pad, hi + pad
    scale = (size - 1) / float((hi - lo).max())
    pts = (xy - lo) * scale
    pts[:, 1] = size - 1 - pts[:, 1]
    coords = " ".join(f"{format_float(p[0])},{format_float(p[1])}"
                      for p in pts)
    svg = (
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'viewBox="0 0 {size} {size}">\n'
        f'  <polyline points="{coords}" fill="none" '
        f'stroke="black" stroke-width="1.5"/>\n'
        f'  <circle cx="{format_float(pts[0, 0])}" '
        f'cy="{format_float(pts[0, 1])}" r="4" fill="green"/>\n'
        f'  <circle cx="{format_float(pts[-1, 0])}" '
        f'cy="{format_float(pts[-1, 1])}" r="4" fill="red"/>\n'
        f"</svg>\n"
    )
    atomic_write_text(path, svg)


def cmd_export(args) -> int:
    fmt = args.format
    if fmt == "obj":
        if args.scene is None:
            raise UnknownFormat("obj export takes a scene (--scene)")
        _export_obj(load_scene(args.scene), args.out)
    elif fmt in ("csv", "svg"):
        if args.root is None or args.episode is None:
            raise UnknownFormat(
                f"{fmt} export takes an episode (--root and --episode)")
        episode = ds.load_episode(args.root, args.episode)
        if fmt == "csv":
            _export_csv(episode, args.out)
        else:
            _export_svg(episode, args.out)
    else:
        raise UnknownFormat(f"unknown export format {fmt!r}")
    print(f"wrote {fmt} -> {args.out}")
    return 0


def cmd_validate(args) -> int:
    report = ds.validate_dataset(args.root)
    for episode_id, reason in report.failures:
        print(f"ep_{episode_id:06d}: {reason}")
    print(f"checked {report.num_episodes} episodes, "
          f"{len(report.failures)} problems")
    return 0 if report.ok else 2


# --- parser ----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="demogen",
                     description="Synthesize robot manipulation episodes "
                                 "from scene manifests.")
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-scene",
                       help="place manifest assets into a physical scene")
    p.add_argument("--manifest", required=True, help="asset manifest JSON")
    p.add_argument("--extents", default=None,
                   help="raw reconstruction extents JSON (rescaled to metric)")
    p.add_argument("--seed", type=int, default=None,
                   help="layout seed (default: the manifest seed)")
    p.add_argument("--out", required=True, help="output scene JSON")
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("lift-tracks",
                       help="ground 2D tracks and depth into object motion")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--tracks-dir",
                     help="directory with tracks.jsonl, mask.msk, depth_*.dpf")
    src.add_argument("--fixture",
                     help="linear-motion fixture spec JSON; synthesizes a "
                          "capture with embedded ground truth and prints a "
                          "self-check")
    p.add_argument("--out", required=True, help="output trajectory JSON")
    p.add_argument("--smooth-window", type=int, default=5,
                   help="smoothing window (odd; 1 disables)")
    p.add_argument("--seed", type=int, default=None,
                   help="consensus seed (default: derived for --fixture, "
                        "0 otherwise)")
    p.add_argument("--keep-outliers", action="store_true",
                   help="skip the outlier-track rejection pass")
    p.add_argument("--camera-pose", type=float, nargs=7, default=None,
                   metavar=("X", "Y", "Z", "QW", "QX", "QY", "QZ"),
                   help="camera world pose recorded into the output")
    p.set_defaults(func=cmd_lift_tracks)

    p = sub.add_parser("solve-ik",
                       help="turn an object trajectory into joint commands")
    p.add_argument("--trajectory", required=True, help="trajectory JSON")
    p.add_argument("--scene", required=True, help="scene JSON")
    p.add_argument("--target", required=True, help="object being moved")
    p.add_argument("--grasp", required=True, help="grasp pose JSON")
    p.add_argument("--chain", default="six_dof",
                   help="bundled chain name or chain JSON path")
    p.add_argument("--base", type=float, nargs=3, default=None,
                   metavar=("X", "Y", "Z"), help="robot base position")
    p.add_argument("--dt", type=float, default=1.0 / 30.0,
                   help="seconds between waypoints")
    p.add_argument("--approach-steps", type=int, default=10)
    p.add_argument("--release-steps", type=int, default=10)
    p.add_argument("--out", required=True, help="output steps JSONL")
    p.set_defaults(func=cmd_solve_ik)

    p = sub.add_parser("emit-dataset",
                       help="add a solved episode to a dataset root")
    p.add_argument("--root", required=True, help="dataset directory")
    p.add_argument("--steps", required=True, help="steps JSONL from solve-ik")
    p.add_argument("--scene", required=True, help="scene JSON for context")
    p.add_argument("--chain", default="six_dof",
                   help="chain for a new dataset root")
    p.add_argument("--episode-id", type=int, required=True)
    p.add_argument("--prompt", default="")
    p.add_argument("--manifest-hash", default="")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--quality-rms", type=float, default=0.0)
    p.add_argument("--quality-dropped", type=int, default=0)
    p.add_argument("--quality-ik-error", type=float, default=0.0)
    p.set_defaults(func=cmd_emit_dataset)

    p = sub.add_parser("run-pipeline",
                       help="generate a whole dataset from stub providers")
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--config", default=None, help="pipeline config JSON")
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--prompt", default=None)
    p.add_argument("--chain", default=None,
                   help="bundled chain name or chain JSON path")
    p.set_defaults(func=cmd_run_pipeline)

    p = sub.add_parser("export", help="convert artifacts to obj/csv/svg")
    p.add_argument("--format", required=True, help="obj, csv, or svg")
    p.add_argument("--scene", default=None, help="scene JSON (obj export)")
    p.add_argument("--root", default=None, help="dataset root (csv/svg)")
    p.add_argument("--episode", type=int, default=None,
                   help="episode id (csv/svg)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("validate", help="check a dataset for consistency")
    p.add_argument("--root", required=True, help="dataset directory")
    p.set_defaults(func=cmd_validate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return int(args.func(args) or 0)
    except DemogenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    sys.exit(main())
