"""End-to-end episode generation: prompt to physically grounded dataset.

Every stage that would call a heavyweight model goes through the stub
providers, so a run is hermetic and fully determined by (config, episode
index). Episode builds can fan out across processes; emission always happens
in the parent, in index order, so reruns produce byte-identical datasets.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .dataset import (
    Episode,
    EpisodeContext,
    QualityReport,
    emit_episode,
    episode_from_trajectories,
    finalize_dataset,
    init_dataset,
    store_scene,
)
from .errors import ConfigError, DemogenError, IkDiverged
from .geometry import CameraIntrinsics, Pose
from .kinematics import (
    EeTrajectory,
    GraspPose,
    IkParams,
    JointTrajectory,
    KinematicChain,
    bundled_chain_text,
    forward_kinematics,
    grasp_to_ee_trajectory,
    neutral_joints,
    parse_chain,
    reach_envelope,
    solve_ik_dls,
    trajectory_to_joints,
)
from .layout import SceneLayout, scale_to_metric, solve_layout, write_scene
from .manifest import AssetManifest, manifest_hash
from .providers import (
    FixtureData,
    FixtureSpec,
    MotionScript,
    NoiseSpec,
    build_pick_place_script,
    plan_camera,
    stub_plan_manifest,
    stub_reconstruct_extents,
    stub_top_down_grasp,
    synth_fixture,
)
from .tracking import (
    FusionParams,
    ObjectTrajectory,
    conjugate_trajectory,
    fuse_rigid_trajectory,
    lift_tracks,
    remove_outlier_tracks,
    smooth_trajectory,
)
from .util import stable_hash

log = logging.getLogger("demogen.pipeline")


@dataclass(frozen=True)
class PipelineConfig:
    prompt: str = "pick up the block and place it in the tray"
    seed: int = 0
    num_episodes: int = 1
    chain_name: str = "six_dof"
    chain_path: str | None = None     # overrides chain_name when set
    num_frames: int = 40
    frame_dt: float = 1.0 / 30.0
    image_width: int = 288
    image_height: int = 216
    margin_px: float = 10.0
    camera_height_m: float = 0.55
    lift_m: float = 0.12
    smoothing_window: int = 5
    approach_steps: int = 10
    release_steps: int = 10
    num_points: int = 128
    noise: NoiseSpec = NoiseSpec()
    workers: int = 1


_NOISE_KEYS = {"uv_sigma_px", "depth_sigma_m", "corrupt_fraction"}


def load_config(path: str) -> PipelineConfig:
    """Read a pipeline config from JSON, rejecting unknown keys."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")

    known = {f.name for f in dataclasses.fields(PipelineConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    noise = doc.pop("noise", None)
    kwargs = dict(doc)
    if noise is not None:
        if not isinstance(noise, dict) or set(noise) - _NOISE_KEYS:
            raise ConfigError(
                f"noise must be an object with keys {sorted(_NOISE_KEYS)}")
        kwargs["noise"] = NoiseSpec(**{k: float(v) for k, v in noise.items()})
    try:
        return PipelineConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def _chain_text(config: PipelineConfig) -> str:
    if config.chain_path:
        with open(config.chain_path, "r", encoding="utf-8") as fh:
            return fh.read()
    return bundled_chain_text(config.chain_name)


@dataclass
class EpisodeBuild:
    episode: Episode      # context.scene_file is filled in at emission time
    scene_text: str


@dataclass
class CaptureStages:
    """Artifacts of the capture half of a build: planned scene plus the
    synthesized observation bundle with its embedded ground truth."""
    seed: int
    manifest: AssetManifest
    scene: SceneLayout
    scene_text: str
    script: MotionScript
    intrinsics: CameraIntrinsics
    camera: Pose
    fixture: FixtureData


@dataclass
class EpisodeStages:
    """Every intermediate artifact of one episode build, in pipeline order."""
    seed: int
    manifest: AssetManifest
    scene: SceneLayout
    scene_text: str
    script: MotionScript
    intrinsics: CameraIntrinsics
    camera: Pose
    fixture: FixtureData
    smoothed: ObjectTrajectory
    local_motion: ObjectTrajectory
    grasp: GraspPose
    ee: EeTrajectory
    chain: KinematicChain
    joints: JointTrajectory


def _plan_base(chain: KinematicChain, ee, surface_z: float,
               min_planar_m: float = 0.15, probe_candidates: int = 12) -> Pose:
    """Stand the robot beside the waypoint path so every target stays in a
    comfortable part of the reach envelope.

    Candidate bases sit perpendicular to the path's principal direction at a
    range of offsets on either side; each is scored by its smallest margin
    against the near limit and the height-corrected far limit. The envelope
    cannot see joint-limit effects like a capped elbow fold, so the
    best-scoring candidates are verified by solving IK for a handful of
    extreme waypoints, and the first one that proves reachable wins. The base
    yaw faces the circular mean of the waypoint azimuths so the pan joint
    sweeps around its mid-range instead of walking into a limit mid-path.
    An infeasible path keeps the best-scoring base anyway and lets the
    tracker report the miss."""
    shoulder_h, reach = reach_envelope(chain)
    budget = 0.75 * reach
    waypoints = np.stack([p.position for p in ee.poses])
    center = 0.5 * (waypoints[:, :2].min(axis=0) + waypoints[:, :2].max(axis=0))
    path = waypoints[-1, :2] - waypoints[0, :2]
    norm = float(np.linalg.norm(path))
    direction = path / norm if norm > 1e-9 else np.array([1.0, 0.0])
    perp = np.array([-direction[1], direction[0]])

    def base_pose_at(xy: np.ndarray) -> Pose:
        offsets = waypoints[:, :2] - xy
        azimuths = np.arctan2(offsets[:, 1], offsets[:, 0])
        yaw = float(np.arctan2(np.sin(azimuths).sum(), np.cos(azimuths).sum()))
        return Pose(np.array([xy[0], xy[1], surface_z]),
                    np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)]))

    dz2 = (waypoints[:, 2] - (surface_z + shoulder_h)) ** 2
    far2 = np.maximum(budget * budget - dz2, 0.0)
    ranked = []
    for sign in (1.0, -1.0):
        for d in np.linspace(min_planar_m, budget, 24):
            xy = center + sign * d * perp
            planar = np.sqrt(np.sum((waypoints[:, :2] - xy) ** 2, axis=1))
            score = float(np.min(np.minimum(np.sqrt(far2) - planar,
                                            planar - min_planar_m)))
            ranked.append((score, sign, d, xy, planar))
    ranked.sort(key=lambda item: -item[0])

    probe_params = IkParams(max_restarts=2)
    for _, _, _, xy, planar in ranked[:probe_candidates]:
        pose = base_pose_at(xy)
        candidate = chain.with_base(pose)
        seed = neutral_joints(candidate)
        probe_ids = {0, len(waypoints) - 1, int(np.argmin(planar)),
                     int(np.argmax(planar)), int(np.argmax(dz2))}
        try:
            for idx in sorted(probe_ids):
                solve_ik_dls(candidate, ee.poses[idx], seed, probe_params)
        except IkDiverged:
            continue
        return pose
    return base_pose_at(ranked[0][3])


def capture_stages(config: PipelineConfig, index: int) -> CaptureStages:
    """Plan a scene and synthesize its observation bundle for one episode
    index. Deterministic in (config, index)."""
    ep_seed = stable_hash(config.seed, index)

    # plan the scene and give every asset a metric size
    manifest = stub_plan_manifest(config.prompt, ep_seed)
    raw = stub_reconstruct_extents(manifest, ep_seed)
    extents = {
        e.name: scale_to_metric(raw[e.name], e.nominal_extent)[0]
        for e in manifest.entries
    }
    scene = solve_layout(manifest, extents, seed=ep_seed)
    scene_text = write_scene(scene)

    # script the object motion and an overhead camera that keeps it in view
    duration = (config.num_frames - 1) * config.frame_dt
    script = build_pick_place_script(scene, manifest.target, manifest.receptacle,
                                     duration_s=duration, lift_m=config.lift_m)
    intrinsics, camera = plan_camera(
        scene, script, manifest.target,
        width=config.image_width, height=config.image_height,
        margin_px=config.margin_px, height_above_m=config.camera_height_m)

    fixture = synth_fixture(FixtureSpec(
        scene=scene, target=manifest.target, script=script,
        intrinsics=intrinsics, camera_pose=camera,
        num_frames=config.num_frames, frame_dt=config.frame_dt,
        noise=config.noise, seed=ep_seed, num_points=config.num_points))
    return CaptureStages(seed=ep_seed, manifest=manifest, scene=scene,
                         scene_text=scene_text, script=script,
                         intrinsics=intrinsics, camera=camera, fixture=fixture)


def ground_capture(capture: CaptureStages,
                   smoothing_window: int = 5) -> ObjectTrajectory:
    """Recover the camera-frame object motion from a capture bundle."""
    capture.fixture.bundle.validate()
    lifted = lift_tracks(capture.fixture.bundle)
    params = FusionParams(seed=capture.seed)
    fused = fuse_rigid_trajectory(lifted, params)
    cleaned = remove_outlier_tracks(fused, lifted, params=params)
    return smooth_trajectory(cleaned, window=smoothing_window)


def episode_stages(config: PipelineConfig, index: int) -> EpisodeStages:
    """Run every stage for one episode index. Deterministic in (config, index)."""
    cap = capture_stages(config, index)
    ep_seed = cap.seed
    manifest, scene, camera = cap.manifest, cap.scene, cap.camera
    smoothed = ground_capture(cap, smoothing_window=config.smoothing_window)

    # camera-frame motion -> motion relative to the object's start pose
    target_obj = scene.get(manifest.target)
    start_in_camera = camera.inverse().compose(target_obj.pose)
    local_motion = conjugate_trajectory(smoothed, start_in_camera)

    # grasp-conditioned end-effector path and joint solutions
    grasp = stub_top_down_grasp(target_obj.extent)
    ee = grasp_to_ee_trajectory(local_motion, target_obj.pose, grasp,
                                frame_dt=config.frame_dt,
                                approach_steps=config.approach_steps,
                                release_steps=config.release_steps)

    chain = parse_chain(_chain_text(config))
    anchor = scene.get(manifest.anchors[0].name)
    base = _plan_base(chain, ee, anchor.top_z)
    chain = chain.with_base(base)

    joints = trajectory_to_joints(chain, ee, neutral_joints(chain), IkParams())

    return EpisodeStages(seed=ep_seed, manifest=manifest, scene=scene,
                         scene_text=cap.scene_text, script=cap.script,
                         intrinsics=cap.intrinsics, camera=camera,
                         fixture=cap.fixture, smoothed=smoothed,
                         local_motion=local_motion, grasp=grasp, ee=ee,
                         chain=chain, joints=joints)


def build_episode(config: PipelineConfig, index: int) -> EpisodeBuild:
    """Build one episode record plus the scene document it references."""
    st = episode_stages(config, index)
    ik_errors = [
        float(np.linalg.norm(
            forward_kinematics(st.chain, st.joints.joints[i]).position
            - st.ee.poses[i].position))
        for i in range(len(st.ee))
    ]

    quality = QualityReport(
        per_frame_rms=float(np.max(st.smoothed.per_frame_rms)),
        dropped_tracks=len(st.smoothed.dropped_point_ids),
        ik_max_error=float(np.max(ik_errors)),
    )
    context = EpisodeContext(prompt=config.prompt,
                             manifest_hash=manifest_hash(st.manifest),
                             scene_file="", seed=st.seed)
    episode = episode_from_trajectories(index, st.ee, st.joints, context,
                                        quality)
    return EpisodeBuild(episode=episode, scene_text=st.scene_text)


def _build_for_pool(config: PipelineConfig, index: int):
    """Worker wrapper that never lets an exception cross the process
    boundary (custom exception signatures do not all survive pickling)."""
    try:
        return "ok", index, build_episode(config, index)
    except Exception as exc:
        return "error", index, f"{type(exc).__name__}: {exc}"


@dataclass
class BatchReport:
    requested: int
    emitted: int
    failed: tuple            # ((index, "ExcName: message"), ...)
    elapsed_s: float
    generation_rate_eph: float


def run_batch(config: PipelineConfig, root: str) -> BatchReport:
    """Generate, validate-build, and emit a whole dataset under ``root``.

    Failed episode indices are logged and skipped; the rest of the batch
    continues. Episode ids equal their build index, so a rerun of the same
    config reproduces the same files byte for byte (manifest volatile keys
    aside) no matter how many workers ran."""
    start = time.perf_counter()
    os.makedirs(root, exist_ok=True)
    init_dataset(root, _chain_text(config))

    n = config.num_episodes
    outcomes: list = [None] * n
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            for result in pool.map(_build_for_pool, [config] * n, range(n)):
                outcomes[result[1]] = result
    else:
        for i in range(n):
            outcomes[i] = _build_for_pool(config, i)

    emitted = 0
    failed = []
    for outcome in outcomes:
        status, index, payload = outcome
        if status == "error":
            log.error("episode %d failed: %s", index, payload)
            failed.append((index, payload))
            continue
        build: EpisodeBuild = payload
        scene_file = store_scene(root, build.scene_text)
        build.episode.context = replace(build.episode.context,
                                        scene_file=scene_file)
        emit_episode(root, build.episode)
        emitted += 1
        log.info("episode %d emitted (%d steps)", index,
                 build.episode.num_steps)

    elapsed = time.perf_counter() - start
    rate = emitted / elapsed * 3600.0 if elapsed > 0 else 0.0
    finalize_dataset(root, generation_rate_eph=rate)
    if emitted == 0 and n > 0:
        raise DemogenError(
            f"all {n} episodes failed; first failure: {failed[0][1]}")
    return BatchReport(requested=n, emitted=emitted, failed=tuple(failed),
                       elapsed_s=elapsed, generation_rate_eph=rate)
