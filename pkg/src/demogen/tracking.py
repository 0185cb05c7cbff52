"""2D track grounding: mask sampling, depth lifting, per-frame rigid
registration, track outlier removal, and trajectory smoothing.

The output convention throughout: ``poses[t]`` maps frame-0 camera-frame
points onto frame-t camera-frame points, so ``poses[0]`` is the identity.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InsufficientCorrespondences,
    MaskTooSmall,
    TooFewSurvivors,
    UnknownFormat,
)
from .geometry import (
    CameraIntrinsics,
    Pose,
    backproject,
    quat_mean,
    ransac_rigid_fit,
    rigid_fit,
)
from .util import atomic_write_bytes, atomic_write_text, dumps_canonical, stable_hash

DEPTH_MAGIC = b"DPF1"
MASK_MAGIC = b"MSK1"


# --- raster types -------------------------------------------------------------

@dataclass(frozen=True)
class MaskImage:
    width: int
    height: int
    data: np.ndarray  # (H, W) uint8, 0/1

    def __post_init__(self):
        d = np.ascontiguousarray(self.data, dtype=np.uint8)
        if d.shape != (self.height, self.width):
            raise ValueError("mask shape does not match dimensions")
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    @property
    def area(self) -> int:
        return int(self.data.sum())

    def contains(self, u: float, v: float) -> bool:
        x, y = int(math.floor(u)), int(math.floor(v))
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return bool(self.data[y, x])


@dataclass(frozen=True)
class DepthFrame:
    width: int
    height: int
    values: np.ndarray  # (H, W) meters, 0 = invalid

    def __post_init__(self):
        # full precision in memory; the depth file format quantizes to float32
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (self.height, self.width):
            raise ValueError("depth shape does not match dimensions")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass
class TrackBundle:
    """Everything the grounding stage consumes for one capture."""

    uv: np.ndarray        # (T, N, 2) float pixel coords
    visible: np.ndarray   # (T, N) bool
    intrinsics: CameraIntrinsics
    depth: list[DepthFrame]
    mask: MaskImage       # frame-0 target mask

    @property
    def num_frames(self) -> int:
        return int(self.uv.shape[0])

    @property
    def num_points(self) -> int:
        return int(self.uv.shape[1])

    def validate(self) -> None:
        t, n, _ = self.uv.shape
        if self.visible.shape != (t, n):
            raise ValueError("visible shape mismatch")
        if len(self.depth) != t:
            raise ValueError("depth frame count mismatch")
        k = self.intrinsics
        vis_uv = self.uv[self.visible]
        if vis_uv.size and (np.any(vis_uv < 0.0)
                            or np.any(vis_uv[:, 0] >= k.width)
                            or np.any(vis_uv[:, 1] >= k.height)):
            raise ValueError("visible track sample outside image bounds")
        for i in range(n):
            u, v = self.uv[0, i]
            if not self.mask.contains(float(u), float(v)):
                raise ValueError(f"frame-0 point {i} outside the target mask")


@dataclass
class LiftedTracks:
    points: np.ndarray   # (T, N, 3) camera-frame meters
    valid: np.ndarray    # (T, N) bool, visible and over usable depth
    visible: np.ndarray  # (T, N) bool, what the tracker itself claimed


@dataclass
class ObjectTrajectory:
    poses: list[Pose]               # camera-frame motion relative to frame 0
    per_frame_rms: np.ndarray       # (T,)
    inlier_point_ids: frozenset
    dropped_point_ids: frozenset


@dataclass(frozen=True)
class FusionParams:
    inlier_threshold_m: float = 0.005
    max_iterations: int = 200
    seed: int = 0


# --- mask point sampling --------------------------------------------------------

def sample_mask_points(mask: MaskImage, n: int = 128, seed: int = 0) -> np.ndarray:
    """Sample n distinct sub-pixel points on a jittered grid inside the mask.

    The grid covers the mask bounding box and is refined until at least n
    cells contain mask pixels; each chosen cell contributes one uniformly
    chosen pixel with uniform sub-pixel jitter. MaskTooSmall when the mask
    has fewer than n pixels total.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    ys, xs = np.nonzero(mask.data)
    if xs.size < n:
        raise MaskTooSmall(f"mask area {xs.size} < {n} requested points")
    x0, x1 = int(xs.min()), int(xs.max()) + 1
    y0, y1 = int(ys.min()), int(ys.max()) + 1
    bw, bh = x1 - x0, y1 - y0

    aspect = bw / bh
    gv = max(1, int(round(math.sqrt(n / aspect))))
    gu = max(1, int(math.ceil(n / gv)))
    while True:
        gu_c, gv_c = min(gu, bw), min(gv, bh)
        cell_x = ((xs - x0) * gu_c) // bw
        cell_y = ((ys - y0) * gv_c) // bh
        cell_id = cell_y * gu_c + cell_x
        occupied = np.unique(cell_id)
        if occupied.size >= n or (gu_c == bw and gv_c == bh):
            break
        gu, gv = gu + max(1, gu // 4), gv + max(1, gv // 4)
    if occupied.size < n:
        raise MaskTooSmall(
            f"only {occupied.size} grid cells intersect the mask, need {n}")

    rng = np.random.default_rng(seed)
    chosen = occupied[np.sort(rng.choice(occupied.size, size=n, replace=False))]
    # group pixel indices by cell for uniform within-cell choice
    order = np.argsort(cell_id, kind="stable")
    sorted_cells = cell_id[order]
    starts = np.searchsorted(sorted_cells, chosen, side="left")
    ends = np.searchsorted(sorted_cells, chosen, side="right")
    points = np.empty((n, 2), dtype=float)
    for i, (s, e) in enumerate(zip(starts, ends)):
        pick = order[s + int(rng.integers(0, e - s))]
        points[i, 0] = xs[pick] + rng.random()
        points[i, 1] = ys[pick] + rng.random()
    return points


# --- depth lifting ---------------------------------------------------------------

def _bilinear_batch(values: np.ndarray, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear depth samples at float pixel coords, on the integer lattice.

    A sample is invalid when any of its four neighbors is invalid (<= 0) or
    out of the raster.
    """
    h, w = values.shape
    u = uv[:, 0]
    v = uv[:, 1]
    x0 = np.floor(u).astype(int)
    y0 = np.floor(v).astype(int)
    ok = (x0 >= 0) & (y0 >= 0) & (x0 + 1 <= w - 1) & (y0 + 1 <= h - 1)
    x0c = np.clip(x0, 0, w - 2)
    y0c = np.clip(y0, 0, h - 2)
    d00 = values[y0c, x0c].astype(float)
    d10 = values[y0c, x0c + 1].astype(float)
    d01 = values[y0c + 1, x0c].astype(float)
    d11 = values[y0c + 1, x0c + 1].astype(float)
    ok &= (d00 > 0) & (d10 > 0) & (d01 > 0) & (d11 > 0)
    fx = u - x0c
    fy = v - y0c
    depth = (d00 * (1 - fx) * (1 - fy) + d10 * fx * (1 - fy)
             + d01 * (1 - fx) * fy + d11 * fx * fy)
    return depth, ok


def lift_tracks(bundle: TrackBundle) -> LiftedTracks:
    """Back-project every visible track sample through bilinear depth."""
    t, n = bundle.num_frames, bundle.num_points
    k = bundle.intrinsics
    points = np.zeros((t, n, 3))
    valid = np.zeros((t, n), dtype=bool)
    for f in range(t):
        depth, ok = _bilinear_batch(bundle.depth[f].values, bundle.uv[f])
        ok &= bundle.visible[f]
        u = bundle.uv[f, :, 0]
        v = bundle.uv[f, :, 1]
        ok &= (u >= 0) & (u < k.width) & (v >= 0) & (v < k.height) & (depth > 0)
        points[f, ok, 0] = (u[ok] - k.cx) * depth[ok] / k.fx
        points[f, ok, 1] = (v[ok] - k.cy) * depth[ok] / k.fy
        points[f, ok, 2] = depth[ok]
        valid[f] = ok
    return LiftedTracks(points=points, valid=valid,
                        visible=bundle.visible.copy())


# --- rigid fusion ------------------------------------------------------------------

def fuse_rigid_trajectory(lifted: LiftedTracks,
                          params: FusionParams = FusionParams()) -> ObjectTrajectory:
    """Register every frame's lifted points against frame 0 with RANSAC."""
    t = lifted.points.shape[0]
    ref_valid = lifted.valid[0]
    ids0 = np.flatnonzero(ref_valid)
    if ids0.size < 3:
        raise InsufficientCorrespondences(0, int(ids0.size))

    poses = [Pose.identity()]
    rms = np.zeros(t)
    for f in range(1, t):
        ids = np.flatnonzero(ref_valid & lifted.valid[f])
        if ids.size < 3:
            raise InsufficientCorrespondences(f, int(ids.size))
        fit = ransac_rigid_fit(
            lifted.points[0, ids], lifted.points[f, ids],
            inlier_threshold=params.inlier_threshold_m,
            max_iterations=params.max_iterations,
            seed=stable_hash(params.seed, f))
        poses.append(fit.transform)
        rms[f] = fit.rms_residual
    return ObjectTrajectory(
        poses=poses, per_frame_rms=rms,
        inlier_point_ids=frozenset(int(i) for i in ids0),
        dropped_point_ids=frozenset())


def _point_median_residuals(trajectory: ObjectTrajectory,
                            lifted: LiftedTracks) -> dict[int, float]:
    t = lifted.points.shape[0]
    valid0 = lifted.valid[0]
    out: dict[int, float] = {}
    for pid in sorted(trajectory.inlier_point_ids):
        if not valid0[pid]:
            continue
        res = []
        p0 = lifted.points[0, pid]
        for f in range(t):
            if lifted.valid[f, pid]:
                res.append(float(np.linalg.norm(
                    trajectory.poses[f].apply(p0) - lifted.points[f, pid])))
        if res:
            out[pid] = float(np.median(res))
    return out


def remove_outlier_tracks(trajectory: ObjectTrajectory, lifted: LiftedTracks,
                          threshold_scale: float = 3.0,
                          abs_threshold_m: float = 0.005,
                          params: FusionParams = FusionParams(),
                          noise_floor_m: float = 1e-6) -> ObjectTrajectory:
    """Drop tracks whose median registration residual is anomalous.

    A track is dropped when its median residual exceeds the absolute RANSAC
    threshold, or stands more than ``threshold_scale`` MADs above the median
    of all track residuals (the MAD rule only engages above ``noise_floor_m``
    so float-level noise on clean captures never trips it; MAD alone also
    fails when most tracks are corrupted, which the absolute rule covers).
    Tracks with valid depth on fewer than a quarter of the frames carry too
    little information and go as well, as do tracks the tracker claims to
    see where the depth raster shows nothing (more than an eighth of the
    frames contradicted): honest occlusion reports visible = false, so a
    visible sample over empty depth is the signature of a derailed track.
    Tracks that never entered the fit at all (no usable depth at frame 0)
    are checked against the same contradiction rule, so a tracker that
    locks onto the background from the start is still reported, while a
    point occluded the whole way stays out of both id sets. Poses are refit
    on the survivors. TooFewSurvivors when fewer than 3 tracks remain.
    """
    medians = _point_median_residuals(trajectory, lifted)
    ids = sorted(medians)
    values = np.array([medians[i] for i in ids])
    med = float(np.median(values))
    mad = float(np.median(np.abs(values - med)))
    cut = med + threshold_scale * mad

    dropped = set()
    num_frames = lifted.points.shape[0]
    min_support = max(2, num_frames // 4)
    max_contradicted = max(1, num_frames // 8)

    def contradictions(pid):
        return int((lifted.visible[:, pid] & ~lifted.valid[:, pid]).sum())

    for pid in sorted(trajectory.inlier_point_ids):
        if pid not in medians:
            dropped.add(pid)  # no usable depth support at all
            continue
        m = medians[pid]
        support = int(lifted.valid[:, pid].sum())
        if m > abs_threshold_m or (m > cut and m > noise_floor_m) \
                or support < min_support \
                or contradictions(pid) > max_contradicted:
            dropped.add(pid)

    for pid in range(lifted.points.shape[1]):
        if pid in trajectory.inlier_point_ids or pid in dropped:
            continue
        if contradictions(pid) > max_contradicted:
            dropped.add(pid)

    survivors = sorted(set(trajectory.inlier_point_ids) - dropped)
    if len(survivors) < 3:
        raise TooFewSurvivors(len(survivors))
    if not dropped:
        return trajectory
    if not (dropped & set(trajectory.inlier_point_ids)):
        # nothing that fed the fit was removed, only bookkeeping changes
        return ObjectTrajectory(
            poses=trajectory.poses, per_frame_rms=trajectory.per_frame_rms,
            inlier_point_ids=trajectory.inlier_point_ids,
            dropped_point_ids=trajectory.dropped_point_ids
            | frozenset(int(i) for i in dropped))

    t = lifted.points.shape[0]
    sv = np.array(survivors)
    poses = [Pose.identity()]
    rms = np.zeros(t)
    for f in range(1, t):
        ids_f = sv[lifted.valid[0, sv] & lifted.valid[f, sv]]
        if ids_f.size < 3:
            raise InsufficientCorrespondences(f, int(ids_f.size))
        fit = ransac_rigid_fit(
            lifted.points[0, ids_f], lifted.points[f, ids_f],
            inlier_threshold=params.inlier_threshold_m,
            max_iterations=params.max_iterations,
            seed=stable_hash(params.seed, f))
        poses.append(fit.transform)
        rms[f] = fit.rms_residual
    return ObjectTrajectory(
        poses=poses, per_frame_rms=rms,
        inlier_point_ids=frozenset(int(i) for i in survivors),
        dropped_point_ids=frozenset(int(i) for i in sorted(dropped)))


# --- smoothing ----------------------------------------------------------------------

def smooth_trajectory(trajectory: ObjectTrajectory, window: int = 5) -> ObjectTrajectory:
    """Centered moving average of translations plus hemisphere-aligned
    normalized quaternion means, window shrinking symmetrically at the edges
    (so linear motion passes through untouched). The result is re-anchored so
    pose[0] is the identity."""
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be an odd positive integer")
    t = len(trajectory.poses)
    if window > t:
        raise ValueError("window exceeds trajectory length")
    if window == 1:
        return trajectory

    half = window // 2
    positions = np.stack([p.position for p in trajectory.poses])
    quats = np.stack([p.quat for p in trajectory.poses])
    smoothed = []
    for i in range(t):
        h = min(half, i, t - 1 - i)
        lo, hi = i - h, i + h + 1
        pos = positions[lo:hi].mean(axis=0)
        quat = quat_mean(quats[lo:hi], reference=quats[i])
        smoothed.append(Pose(pos, quat))

    anchor_inv = smoothed[0].inverse()
    poses = [anchor_inv.compose(p) for p in smoothed]
    poses[0] = Pose.identity()
    return ObjectTrajectory(
        poses=poses, per_frame_rms=trajectory.per_frame_rms.copy(),
        inlier_point_ids=trajectory.inlier_point_ids,
        dropped_point_ids=trajectory.dropped_point_ids)


def conjugate_trajectory(trajectory: ObjectTrajectory, frame: Pose) -> ObjectTrajectory:
    """Re-express a frame-0-relative motion in a different base frame:
    pose[t] -> frame^-1 o pose[t] o frame. Used to turn camera-frame motion
    into motion relative to the object's own starting pose."""
    inv = frame.inverse()
    poses = [inv.compose(p).compose(frame) for p in trajectory.poses]
    poses[0] = Pose.identity()
    return ObjectTrajectory(
        poses=poses, per_frame_rms=trajectory.per_frame_rms.copy(),
        inlier_point_ids=trajectory.inlier_point_ids,
        dropped_point_ids=trajectory.dropped_point_ids)


# --- file formats ---------------------------------------------------------------------

def write_depth(frame: DepthFrame, path: str) -> None:
    header = DEPTH_MAGIC + struct.pack("<II", frame.width, frame.height)
    atomic_write_bytes(path, header + frame.values.astype("<f4").tobytes())


def read_depth(path: str) -> DepthFrame:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != DEPTH_MAGIC:
        raise UnknownFormat(f"{path}: bad depth magic {blob[:4]!r}")
    w, h = struct.unpack("<II", blob[4:12])
    values = np.frombuffer(blob[12:], dtype="<f4", count=w * h).reshape(h, w)
    return DepthFrame(width=w, height=h, values=values)


def write_mask(mask: MaskImage, path: str) -> None:
    header = MASK_MAGIC + struct.pack("<II", mask.width, mask.height)
    atomic_write_bytes(path, header + mask.data.tobytes())


def read_mask(path: str) -> MaskImage:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MASK_MAGIC:
        raise UnknownFormat(f"{path}: bad mask magic {blob[:4]!r}")
    w, h = struct.unpack("<II", blob[4:12])
    data = np.frombuffer(blob[12:], dtype=np.uint8, count=w * h).reshape(h, w)
    return MaskImage(width=w, height=h, data=data)


def write_tracks(uv: np.ndarray, visible: np.ndarray, k: CameraIntrinsics,
                 path: str) -> None:
    """JSON-lines track file: one header line, then one record per
    (frame, point) in frame-major order."""
    t, n, _ = uv.shape
    lines = [dumps_canonical({
        "num_frames": t, "num_points": n,
        "intrinsics": {"fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
                       "width": k.width, "height": k.height}})]
    for f in range(t):
        for i in range(n):
            lines.append(dumps_canonical({
                "frame": f, "point_id": i,
                "u": float(uv[f, i, 0]), "v": float(uv[f, i, 1]),
                "visible": bool(visible[f, i])}))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_tracks(path: str) -> tuple[np.ndarray, np.ndarray, CameraIntrinsics]:
    with open(path, "r", encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        t, n = int(header["num_frames"]), int(header["num_points"])
        ki = header["intrinsics"]
        k = CameraIntrinsics(fx=float(ki["fx"]), fy=float(ki["fy"]),
                             cx=float(ki["cx"]), cy=float(ki["cy"]),
                             width=int(ki["width"]), height=int(ki["height"]))
        uv = np.zeros((t, n, 2))
        visible = np.zeros((t, n), dtype=bool)
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            f, i = int(rec["frame"]), int(rec["point_id"])
            uv[f, i] = (float(rec["u"]), float(rec["v"]))
            visible[f, i] = bool(rec["visible"])
    return uv, visible, k


def write_trajectory(trajectory: ObjectTrajectory, path: str,
                     camera_pose: Pose | None = None) -> None:
    doc = {
        "num_frames": len(trajectory.poses),
        "camera_pose": None if camera_pose is None else {
            "position_m": list(camera_pose.position),
            "quaternion_wxyz": list(camera_pose.quat)},
        "frames": [
            {"frame": f,
             "position_m": list(p.position),
             "quaternion_wxyz": list(p.quat),
             "rms_m": float(trajectory.per_frame_rms[f])}
            for f, p in enumerate(trajectory.poses)],
        "inlier_point_ids": sorted(trajectory.inlier_point_ids),
        "dropped_point_ids": sorted(trajectory.dropped_point_ids),
    }
    atomic_write_text(path, dumps_canonical(doc, indent=2) + "\n")


def read_trajectory(path: str) -> tuple[ObjectTrajectory, Pose | None]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    poses = [Pose(np.array(f["position_m"], dtype=float),
                  np.array(f["quaternion_wxyz"], dtype=float))
             for f in doc["frames"]]
    rms = np.array([float(f["rms_m"]) for f in doc["frames"]])
    cam = None
    if doc.get("camera_pose") is not None:
        cp = doc["camera_pose"]
        cam = Pose(np.array(cp["position_m"], dtype=float),
                   np.array(cp["quaternion_wxyz"], dtype=float))
    return ObjectTrajectory(
        poses=poses, per_frame_rms=rms,
        inlier_point_ids=frozenset(int(i) for i in doc["inlier_point_ids"]),
        dropped_point_ids=frozenset(int(i) for i in doc["dropped_point_ids"])), cam
