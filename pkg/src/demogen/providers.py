"""Pluggable asset and perception providers.

Heavy generative models (image synthesis, segmentation, 3D reconstruction,
video prediction, point tracking, depth, grasp proposal) sit behind two
interchangeable backends: a file provider that reads artifacts somebody else
produced, and deterministic stubs that synthesize physically consistent
stand-ins so the whole pipeline runs hermetically. The stub camera fixture
raycasts the actual scene boxes, so occlusion, depth validity, and noise
behave like a real capture.
"""

from __future__ import annotations

import itertools
import json
import math
import os
from dataclasses import dataclass, fields
from enum import Enum

import numpy as np

from .errors import ConfigError, MissingArtifact, RoleMismatch, TargetOutOfView
from .geometry import (
    CameraIntrinsics,
    Pose,
    quat_from_axis_angle,
    quat_slerp,
    quat_to_matrix,
)
from .kinematics import GraspPose
from .layout import DEFAULT_WORKSPACE, GROUND, PlacedObject, SceneLayout
from .manifest import (
    AssetEntry,
    AssetManifest,
    apply_negative_constraints,
    load_manifest,
)
from .tracking import (
    DepthFrame,
    MaskImage,
    ObjectTrajectory,
    TrackBundle,
    _bilinear_batch,
    read_depth,
    read_mask,
    read_tracks,
    write_depth,
    write_mask,
    write_tracks,
)
from .util import atomic_write_text, dumps_canonical, stable_hash


class ProviderRole(Enum):
    PLANNER = "planner"
    IMAGE_SYNTH = "image_synth"
    SEGMENTER = "segmenter"
    RECONSTRUCTOR = "reconstructor"
    STYLE_REFINER = "style_refiner"
    VIDEO_GEN = "video_gen"
    TRACKER = "tracker"
    DEPTH_ESTIMATOR = "depth_estimator"
    GRASP_GEN = "grasp_gen"


MANIFEST_FILE = "manifest.json"
EXTENTS_FILE = "extents.json"
GRASP_FILE = "grasp.json"
TRACKS_FILE = "tracks.jsonl"
MASK_FILE = "mask.msk"
DEPTH_FILE_FORMAT = "depth_{:04d}.dpf"
IMAGE_FILE = "image.json"
VIDEO_FILE = "video.json"


# --- grasp artifact IO ---------------------------------------------------------

def write_grasp(grasp: GraspPose, path: str) -> None:
    doc = {
        "pose": {
            "position_m": list(grasp.pose.position),
            "quaternion_wxyz": list(grasp.pose.quat),
        },
        "approach_axis": list(grasp.approach_axis),
        "pre_grasp_offset_m": grasp.pre_grasp_offset_m,
    }
    atomic_write_text(path, dumps_canonical(doc, indent=2) + "\n")


def read_grasp(path: str) -> GraspPose:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return GraspPose(
        pose=Pose(np.array(doc["pose"]["position_m"], dtype=float),
                  np.array(doc["pose"]["quaternion_wxyz"], dtype=float)),
        approach_axis=np.array(doc["approach_axis"], dtype=float),
        pre_grasp_offset_m=float(doc["pre_grasp_offset_m"]),
    )


def write_raw_extents(extents: dict, path: str) -> None:
    doc = {name: list(np.asarray(e, dtype=float)) for name, e in extents.items()}
    atomic_write_text(path, dumps_canonical(doc, indent=2) + "\n")


def read_raw_extents(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    return {name: np.array(v, dtype=float) for name, v in doc.items()}


# --- file-backed provider ---------------------------------------------------------

@dataclass(frozen=True)
class FileProvider:
    """Serves one provider role from pre-generated artifacts in a directory."""

    role: ProviderRole
    directory: str

    def _require(self, wanted: ProviderRole) -> None:
        if self.role is not wanted:
            raise RoleMismatch(self.role.value, wanted.value)

    def _path(self, name: str) -> str:
        path = os.path.join(self.directory, name)
        if not os.path.exists(path):
            raise MissingArtifact(path)
        return path

    def load_manifest(self) -> AssetManifest:
        self._require(ProviderRole.PLANNER)
        return load_manifest(self._path(MANIFEST_FILE))

    def load_raw_extents(self) -> dict:
        self._require(ProviderRole.RECONSTRUCTOR)
        return read_raw_extents(self._path(EXTENTS_FILE))

    def load_grasp(self) -> GraspPose:
        self._require(ProviderRole.GRASP_GEN)
        return read_grasp(self._path(GRASP_FILE))

    def load_mask(self) -> MaskImage:
        self._require(ProviderRole.SEGMENTER)
        return read_mask(self._path(MASK_FILE))

    def load_tracks(self):
        self._require(ProviderRole.TRACKER)
        return read_tracks(self._path(TRACKS_FILE))

    def load_depth_frames(self) -> list[DepthFrame]:
        self._require(ProviderRole.DEPTH_ESTIMATOR)
        frames = []
        for f in itertools.count():
            path = os.path.join(self.directory, DEPTH_FILE_FORMAT.format(f))
            if not os.path.exists(path):
                break
            frames.append(read_depth(path))
        if not frames:
            raise MissingArtifact(
                os.path.join(self.directory, DEPTH_FILE_FORMAT.format(0)))
        return frames


def write_fixture_artifacts(directory: str, bundle: TrackBundle) -> None:
    """Persist a capture bundle as the separate per-role artifact files."""
    os.makedirs(directory, exist_ok=True)
    write_tracks(bundle.uv, bundle.visible, bundle.intrinsics,
                 os.path.join(directory, TRACKS_FILE))
    write_mask(bundle.mask, os.path.join(directory, MASK_FILE))
    for f, frame in enumerate(bundle.depth):
        write_depth(frame, os.path.join(directory, DEPTH_FILE_FORMAT.format(f)))


def assemble_bundle(directory: str) -> TrackBundle:
    """Rebuild a capture bundle from tracker, segmenter, and depth artifacts."""
    tracks_path = os.path.join(directory, TRACKS_FILE)
    mask_path = os.path.join(directory, MASK_FILE)
    if not os.path.exists(tracks_path):
        raise MissingArtifact(tracks_path)
    if not os.path.exists(mask_path):
        raise MissingArtifact(mask_path)
    uv, visible, intrinsics = read_tracks(tracks_path)
    mask = read_mask(mask_path)
    depth = FileProvider(ProviderRole.DEPTH_ESTIMATOR, directory).load_depth_frames()
    bundle = TrackBundle(uv=uv, visible=visible, intrinsics=intrinsics,
                         depth=depth, mask=mask)
    bundle.validate()
    return bundle


# --- deterministic stand-ins for the generative stages -----------------------------

def stub_plan_manifest(prompt: str, seed: int) -> AssetManifest:
    """Tabletop pick-and-place scene plan: a work table carrying a graspable
    block, a destination tray, and up to two distractor cups. Distractors stay
    shorter than the block so they never occlude its top face from an
    overhead camera."""
    rng = np.random.default_rng(stable_hash(seed, "plan"))
    table_extent = (
        float(rng.uniform(0.9, 1.2)),
        float(rng.uniform(0.65, 0.85)),
        float(rng.uniform(0.70, 0.78)),
    )
    block_extent = tuple(float(rng.uniform(0.07, 0.09)) for _ in range(3))
    tray_extent = (
        float(rng.uniform(0.16, 0.22)),
        float(rng.uniform(0.16, 0.22)),
        0.025,
    )
    entries = [
        AssetEntry(
            name="table", category="anchor",
            description="sturdy rectangular work table",
            style_tags=("wood", "matte"),
            nominal_extent_m=table_extent, parent=None),
        AssetEntry(
            name="block", category="accessory",
            description="solid block sized for a parallel gripper",
            style_tags=("wood", "painted"),
            nominal_extent_m=block_extent, parent="table"),
        AssetEntry(
            name="tray", category="accessory",
            description="shallow sorting tray",
            style_tags=("plastic",),
            nominal_extent_m=tray_extent, parent="table"),
    ]
    for i in range(int(rng.integers(0, 3))):
        cup_extent = (
            float(rng.uniform(0.06, 0.08)),
            float(rng.uniform(0.06, 0.08)),
            float(rng.uniform(0.04, 0.06)),
        )
        tags = ("ceramic",) if i == 0 else ("ceramic", "glass")
        entries.append(AssetEntry(
            name=f"cup_{i + 1}", category="accessory",
            description="small cup standing in as clutter",
            style_tags=tags,
            nominal_extent_m=cup_extent, parent="table"))
    entries = [apply_negative_constraints(e) for e in entries]
    return AssetManifest(prompt=prompt, seed=seed, target="block",
                         receptacle="tray", entries=tuple(entries))


def stub_refine_style(entry: AssetEntry) -> AssetEntry:
    """Identity pass standing in for a learned style harmonizer."""
    return entry


def stub_reconstruct_extents(manifest: AssetManifest, seed: int) -> dict:
    """Raw (pre-rescale) reconstruction extents: the nominal size distorted
    per axis by a uniform factor in [0.8, 1.25], as an unscaled mesh would be."""
    rng = np.random.default_rng(stable_hash(seed, "recon"))
    return {
        e.name: e.nominal_extent * rng.uniform(0.8, 1.25, size=3)
        for e in manifest.entries
    }


def stub_top_down_grasp(extent) -> GraspPose:
    """Overhead grasp at the top-face center, gripper Z pointing down into
    the object, approaching along the gripper Z axis."""
    extent = np.asarray(extent, dtype=float)
    return GraspPose(
        pose=Pose.from_axis_angle((1.0, 0.0, 0.0), math.pi,
                                  translation=(0.0, 0.0, 0.5 * extent[2])),
        approach_axis=np.array([0.0, 0.0, 1.0]),
        pre_grasp_offset_m=0.08,
    )


def stub_image_descriptor(manifest: AssetManifest, width: int, height: int) -> dict:
    """Placeholder record standing in for a synthesized scene image."""
    return {
        "kind": "image",
        "prompt": manifest.prompt,
        "seed": manifest.seed,
        "width": width,
        "height": height,
        "objects": [e.name for e in manifest.entries],
    }


def stub_video_descriptor(manifest: AssetManifest, num_frames: int,
                          frame_dt: float) -> dict:
    """Placeholder record standing in for a predicted manipulation video."""
    return {
        "kind": "video",
        "prompt": manifest.prompt,
        "seed": manifest.seed,
        "num_frames": num_frames,
        "frame_dt_s": frame_dt,
        "target": manifest.target,
        "receptacle": manifest.receptacle,
    }


# --- scripted object motion ----------------------------------------------------------

@dataclass(frozen=True)
class MotionScript:
    """Piecewise-linear world-frame motion: lerp positions, slerp rotations
    between keyframes at strictly increasing times starting at zero."""

    keyframes: tuple  # ((time_s, Pose), ...)

    def __post_init__(self):
        if not self.keyframes:
            raise ValueError("script needs at least one keyframe")
        times = [t for t, _ in self.keyframes]
        if times[0] != 0.0:
            raise ValueError("first keyframe must be at time zero")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("keyframe times must be strictly increasing")

    @property
    def duration_s(self) -> float:
        return float(self.keyframes[-1][0])

    def pose_at(self, t: float) -> Pose:
        kf = self.keyframes
        if t <= kf[0][0]:
            return kf[0][1]
        if t >= kf[-1][0]:
            return kf[-1][1]
        for (t0, p0), (t1, p1) in zip(kf, kf[1:]):
            if t0 <= t <= t1:
                s = (t - t0) / (t1 - t0)
                return Pose(p0.position + s * (p1.position - p0.position),
                            quat_slerp(p0.quat, p1.quat, s))
        raise AssertionError("unreachable")


def build_pick_place_script(scene: SceneLayout, target: str, receptacle: str,
                            duration_s: float, lift_m: float = 0.12) -> MotionScript:
    """Lift the target off its support, carry it over the receptacle at a
    fixed transit height, and lower it onto the receptacle's top face."""
    if duration_s <= 0:
        raise ValueError("duration_s must be positive")
    obj = scene.get(target)
    dest = scene.get(receptacle)
    start = obj.pose
    end_z = dest.top_z + 0.5 * obj.extent[2]
    transit_z = max(start.position[2], end_z) + lift_m
    end_xy = dest.pose.position[:2]
    quat = start.quat

    def at(x, y, z):
        return Pose(np.array([x, y, z]), quat)

    return MotionScript(keyframes=(
        (0.0, start),
        (0.3 * duration_s, at(start.position[0], start.position[1], transit_z)),
        (0.7 * duration_s, at(end_xy[0], end_xy[1], transit_z)),
        (duration_s, at(end_xy[0], end_xy[1], end_z)),
    ))


TOP_DOWN_CAMERA_QUAT = np.array([0.0, 1.0, 0.0, 0.0])  # optical axis points down


def plan_camera(scene: SceneLayout, script: MotionScript, target: str,
                width: int = 288, height: int = 216, margin_px: float = 10.0,
                height_above_m: float = 0.55, min_footprint_px: float = 9.0,
                sweep_samples: int = 16,
                center_xy=None) -> tuple[CameraIntrinsics, Pose]:
    """Overhead camera covering the scene and the target's scripted sweep.

    The focal length is the largest one keeping every covered point inside
    the image margins, raised if needed so the target footprint spans at
    least ``min_footprint_px`` pixels. The camera hovers over the middle of
    the covered region unless ``center_xy`` pins it elsewhere; the margin
    bound per point handles an off-center view the same way.
    """
    obj = scene.get(target)
    corners_l = 0.5 * obj.extent * np.array(
        list(itertools.product((-1, 1), repeat=3)), dtype=float)
    points = [o.aabb.min for o in scene.objects] + [o.aabb.max for o in scene.objects]
    for i in range(sweep_samples):
        t = script.duration_s * i / max(1, sweep_samples - 1)
        points.append(script.pose_at(t).apply(corners_l))
    points = np.vstack([np.atleast_2d(p) for p in points])

    top_z = float(points[:, 2].max())
    if center_xy is None:
        center_xy = 0.5 * (points[:, :2].min(axis=0) + points[:, :2].max(axis=0))
    camera = Pose(np.array([center_xy[0], center_xy[1], top_z + height_above_m]),
                  TOP_DOWN_CAMERA_QUAT)

    in_cam = camera.inverse().apply(points)
    z = in_cam[:, 2]
    if np.any(z <= 0):
        raise ValueError("coverage point behind the camera")
    half_u = 0.5 * width - margin_px
    half_v = 0.5 * height - margin_px
    if half_u <= 0 or half_v <= 0:
        raise ValueError("margins leave no usable image area")
    with np.errstate(divide="ignore"):
        bound_u = np.min(half_u * z / np.maximum(np.abs(in_cam[:, 0]), 1e-12))
        bound_v = np.min(half_v * z / np.maximum(np.abs(in_cam[:, 1]), 1e-12))
    f = min(bound_u, bound_v, 4.0 * max(width, height))

    target_z = camera.position[2] - obj.top_z
    f_floor = min_footprint_px * target_z / float(min(obj.extent[0], obj.extent[1]))
    f = max(f, f_floor)
    intrinsics = CameraIntrinsics(fx=f, fy=f, cx=(width - 1) / 2.0,
                                  cy=(height - 1) / 2.0,
                                  width=width, height=height)
    return intrinsics, camera


# --- synthetic capture fixture ---------------------------------------------------

@dataclass(frozen=True)
class NoiseSpec:
    uv_sigma_px: float = 0.0
    depth_sigma_m: float = 0.0
    corrupt_fraction: float = 0.0


@dataclass(frozen=True)
class FixtureSpec:
    scene: SceneLayout
    target: str
    script: MotionScript
    intrinsics: CameraIntrinsics
    camera_pose: Pose
    num_frames: int
    frame_dt: float
    noise: NoiseSpec = NoiseSpec()
    seed: int = 0
    num_points: int = 128


@dataclass
class FixtureData:
    """A synthetic capture plus the ground truth it was rendered from."""

    bundle: TrackBundle
    gt_motion: ObjectTrajectory   # camera-frame target motion relative to frame 0
    world_poses: list[Pose]       # target world pose per frame
    corrupted_ids: frozenset


def _pixel_dirs(k: CameraIntrinsics) -> np.ndarray:
    u = np.arange(k.width, dtype=float)
    v = np.arange(k.height, dtype=float)
    uu, vv = np.meshgrid(u, v)
    return np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy,
                     np.ones_like(uu)], axis=-1).reshape(-1, 3)


def _ray_box_depth(origin_l: np.ndarray, dirs_l: np.ndarray,
                   extent: np.ndarray) -> np.ndarray:
    """Ray parameter of the nearest hit on an origin-centered box, 0 = miss.
    The parameter equals camera depth because directions keep unit camera z."""
    half = 0.5 * extent
    d = np.where(np.abs(dirs_l) < 1e-15, 1e-15, dirs_l)
    t1 = (-half - origin_l) / d
    t2 = (half - origin_l) / d
    tmin = np.minimum(t1, t2).max(axis=1)
    tmax = np.maximum(t1, t2).min(axis=1)
    hit = (tmax >= tmin) & (tmax > 0.0)
    t = np.where(tmin > 0.0, tmin, tmax)
    return np.where(hit, t, 0.0)


def _box_raster(pose: Pose, extent: np.ndarray, camera: Pose,
                dirs_c: np.ndarray) -> np.ndarray:
    r_box = quat_to_matrix(pose.quat)
    r_cam = quat_to_matrix(camera.quat)
    origin_l = r_box.T @ (camera.position - pose.position)
    dirs_l = dirs_c @ (r_box.T @ r_cam).T
    return _ray_box_depth(origin_l, dirs_l, extent)


def _merge_min(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise nearest-hit merge where 0 means no hit."""
    a_inf = np.where(a > 0.0, a, np.inf)
    b_inf = np.where(b > 0.0, b, np.inf)
    m = np.minimum(a_inf, b_inf)
    return np.where(np.isfinite(m), m, 0.0)


def _attach_points(extent: np.ndarray, inset_m: float, count: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Object-frame surface points: four top and four bottom corners (inset
    in XY), the rest sampled on the top face."""
    hx, hy, hz = 0.5 * extent
    ix = min(inset_m, 0.45 * extent[0])
    iy = min(inset_m, 0.45 * extent[1])
    pts = [np.array([sx * (hx - ix), sy * (hy - iy), sz * hz])
           for sx, sy, sz in itertools.product((-1, 1), (-1, 1), (1, -1))]
    extra = count - len(pts)
    if extra > 0:
        xy = rng.uniform([-(hx - ix), -(hy - iy)], [hx - ix, hy - iy],
                         size=(extra, 2))
        pts.extend(np.array([x, y, hz]) for x, y in xy)
    return np.vstack(pts[:count])


def synth_fixture(spec: FixtureSpec) -> FixtureData:
    """Render a track/depth/mask capture of the target moving through the
    scene, plus the exact camera-frame motion it encodes.

    Bottom attach points are occluded by the object's own body, exercising
    the consumer's occlusion handling. Noise and corruption are applied after
    ground-truth visibility is decided, the way a real tracker's errors sit
    on top of the true geometry.
    """
    scene, k, camera = spec.scene, spec.intrinsics, spec.camera_pose
    if spec.num_frames < 2:
        raise ValueError("need at least two frames")
    if spec.num_points < 8:
        raise ValueError("need at least eight track points")
    target = scene.get(spec.target)
    cam_inv = camera.inverse()
    r_cam = quat_to_matrix(camera.quat)

    times = np.arange(spec.num_frames) * spec.frame_dt
    world_poses = [spec.script.pose_at(float(t)) for t in times]

    # attach points, inset far enough that bilinear depth lookups stay on-face
    top_depth = float(cam_inv.apply(
        world_poses[0].position + np.array([0.0, 0.0, 0.5 * target.extent[2]]))[2])
    if top_depth <= 0:
        raise ValueError("target starts behind the camera")
    px_per_m = k.fx / top_depth
    inset_m = max(0.02 * float(min(target.extent[:2])),
                  (3.0 + 6.0 * spec.noise.uv_sigma_px) / px_per_m)
    rng_attach = np.random.default_rng(stable_hash(spec.seed, "attach"))
    local = _attach_points(target.extent, inset_m, spec.num_points, rng_attach)

    # depth rasters: static scene once, moving target per frame
    dirs_c = _pixel_dirs(k)
    static = np.zeros(k.width * k.height)
    for obj in scene.objects:
        if obj.name == spec.target:
            continue
        static = _merge_min(static, _box_raster(obj.pose, obj.extent, camera, dirs_c))

    t_frames, n = spec.num_frames, local.shape[0]
    uv = np.zeros((t_frames, n, 2))
    depth_of_point = np.zeros((t_frames, n))
    visible = np.zeros((t_frames, n), dtype=bool)
    rasters = []
    target0 = None
    for f, pose_w in enumerate(world_poses):
        tgt = _box_raster(pose_w, target.extent, camera, dirs_c)
        if f == 0:
            target0 = tgt
        merged = _merge_min(static, tgt).reshape(k.height, k.width)
        rasters.append(merged)

        in_cam = cam_inv.apply(pose_w.apply(local))
        z = in_cam[:, 2]
        if np.any(z <= 0):
            raise TargetOutOfView(f)
        u = k.fx * in_cam[:, 0] / z + k.cx
        v = k.fy * in_cam[:, 1] / z + k.cy
        if (np.any(u < 1.0) or np.any(u > k.width - 2.0)
                or np.any(v < 1.0) or np.any(v > k.height - 2.0)):
            raise TargetOutOfView(f)
        uv[f, :, 0] = u
        uv[f, :, 1] = v
        depth_of_point[f] = z
        sampled, ok = _bilinear_batch(merged, uv[f])
        visible[f] = ok & (np.abs(sampled - z) <= 1e-6)

    # frame-0 target mask: pixels whose nearest hit is the target
    mask_flat = (target0 > 0.0) & ((static == 0.0) | (target0 < static))
    mask = MaskImage(width=k.width, height=k.height,
                     data=mask_flat.reshape(k.height, k.width).astype(np.uint8))

    # keep only points whose clean frame-0 pixel lands on the mask
    keep = np.array([mask.contains(float(u), float(v)) for u, v in uv[0]])
    uv = uv[:, keep]
    visible = visible[:, keep]
    n = int(keep.sum())
    if n < 8:
        raise TargetOutOfView(0)

    noise = spec.noise
    if noise.uv_sigma_px > 0.0:
        rng_uv = np.random.default_rng(stable_hash(spec.seed, "uv"))
        uv = uv + rng_uv.normal(0.0, noise.uv_sigma_px, size=uv.shape)
        uv[..., 0] = np.clip(uv[..., 0], 0.0, k.width - 1e-6)
        uv[..., 1] = np.clip(uv[..., 1], 0.0, k.height - 1e-6)

    depth_frames = []
    if noise.depth_sigma_m > 0.0:
        rng_d = np.random.default_rng(stable_hash(spec.seed, "depth"))
        for raster in rasters:
            hit = raster > 0.0
            noisy = raster + np.where(
                hit, rng_d.normal(0.0, noise.depth_sigma_m, size=raster.shape), 0.0)
            noisy = np.where(hit, np.maximum(noisy, 1e-6), 0.0)
            depth_frames.append(DepthFrame(k.width, k.height, noisy))
    else:
        depth_frames = [DepthFrame(k.width, k.height, r) for r in rasters]

    corrupted: frozenset = frozenset()
    n_corrupt = int(noise.corrupt_fraction * n)
    if n_corrupt > 0:
        # corrupt only tracks that carry information at frame 0 (points the
        # occlusion pass already wrote off can never derail the consumer)
        usable = np.flatnonzero(visible[0])
        rng_c = np.random.default_rng(stable_hash(spec.seed, "corrupt"))
        ids = np.sort(rng_c.choice(usable, size=n_corrupt, replace=False))
        jump = 0.15 * min(k.width, k.height)
        for pid in ids:
            start = int(rng_c.integers(1, max(2, t_frames // 3 + 1)))
            theta = rng_c.uniform(0.0, 2.0 * math.pi)
            r = jump * (1.0 + rng_c.random())
            uv[start:, pid, 0] += r * math.cos(theta)
            uv[start:, pid, 1] += r * math.sin(theta)
            uv[start:, pid, 0] = np.clip(uv[start:, pid, 0],
                                         0.05 * k.width, 0.95 * k.width)
            uv[start:, pid, 1] = np.clip(uv[start:, pid, 1],
                                         0.05 * k.height, 0.95 * k.height)
            visible[start:, pid] = True
        corrupted = frozenset(int(i) for i in ids)

    bundle = TrackBundle(uv=uv, visible=visible, intrinsics=k,
                         depth=depth_frames, mask=mask)

    w0_inv = world_poses[0].inverse()
    gt_poses = [Pose.identity()]
    for pose_w in world_poses[1:]:
        gt_poses.append(cam_inv.compose(pose_w).compose(w0_inv).compose(camera))
    gt = ObjectTrajectory(poses=gt_poses,
                          per_frame_rms=np.zeros(t_frames),
                          inlier_point_ids=frozenset(range(n)),
                          dropped_point_ids=frozenset())
    return FixtureData(bundle=bundle, gt_motion=gt, world_poses=world_poses,
                       corrupted_ids=corrupted)


# --- linear-motion fixture (a self-checking grounding oracle) --------------------

def linear_motion_fixture(extent=(0.08, 0.06, 0.05), start_xy=(-0.10, -0.06),
                          end_xy=(0.12, 0.08), rise_m: float = 0.0,
                          yaw_deg: float = 0.0, num_frames: int = 60,
                          frame_dt: float = 1.0 / 30.0,
                          noise: NoiseSpec = NoiseSpec(), seed: int = 0,
                          num_points: int = 96, image_width: int = 288,
                          image_height: int = 216) -> FixtureSpec:
    """Capture spec for a single box in strictly linear motion:
    constant-velocity translation plus constant-rate yaw about Z.

    Linear motion passes through a centered moving average unchanged, so a
    noiseless capture built from this spec grounds back to its embedded
    truth at tight tolerance even after smoothing. That makes these specs
    the oracle of choice for end-to-end grounding checks.

    The camera sits directly above the start position, which is the fixed
    point of the yaw component; seen from anywhere else, a rotating object's
    camera-frame translation picks up a sinusoidal term that a moving
    average would no longer preserve.
    """
    extent = np.asarray(extent, dtype=float)
    if not -180.0 < yaw_deg < 180.0:
        raise ValueError("yaw_deg must stay inside (-180, 180) so the"
                         " shortest-arc interpolation is the intended one")
    half_h = 0.5 * float(extent[2])
    box = PlacedObject(name="target", category="anchor", support=GROUND,
                       extent=extent,
                       pose=Pose(np.array([start_xy[0], start_xy[1], half_h]),
                                 np.array([1.0, 0.0, 0.0, 0.0])),
                       settled=True)
    scene = SceneLayout(objects=[box], workspace=DEFAULT_WORKSPACE, seed=seed)
    duration = (num_frames - 1) * frame_dt
    end = Pose(np.array([end_xy[0], end_xy[1], half_h + rise_m]),
               quat_from_axis_angle(np.array([0.0, 0.0, 1.0]),
                                    math.radians(yaw_deg)))
    script = MotionScript(keyframes=((0.0, box.pose), (duration, end)))
    intrinsics, camera = plan_camera(scene, script, "target",
                                     width=image_width, height=image_height,
                                     center_xy=np.asarray(start_xy, dtype=float))
    return FixtureSpec(scene=scene, target="target", script=script,
                       intrinsics=intrinsics, camera_pose=camera,
                       num_frames=num_frames, frame_dt=frame_dt, noise=noise,
                       seed=seed, num_points=num_points)


def read_fixture_spec(path: str) -> FixtureSpec:
    """Load a linear-motion fixture description from JSON.

    Keys mirror the ``linear_motion_fixture`` arguments, with ``noise`` as a
    nested object. Unknown keys are rejected so typos fail loudly.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read fixture spec {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("fixture spec root must be a JSON object")
    known = {"extent", "start_xy", "end_xy", "rise_m", "yaw_deg", "num_frames",
             "frame_dt", "noise", "seed", "num_points", "image_width",
             "image_height"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown fixture spec keys: {sorted(unknown)}")
    noise = doc.pop("noise", None)
    kwargs = dict(doc)
    if noise is not None:
        valid = {f.name for f in fields(NoiseSpec)}
        if not isinstance(noise, dict) or set(noise) - valid:
            raise ConfigError(
                f"noise must be an object with keys {sorted(valid)}")
        kwargs["noise"] = NoiseSpec(**{k: float(v) for k, v in noise.items()})
    try:
        return linear_motion_fixture(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad fixture spec value: {exc}") from exc
