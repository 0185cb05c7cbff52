"""Episode dataset layout: JSONL step records plus JSON sidecar metadata.

A dataset root holds ``chain.json`` (the robot the joints belong to),
``scenes/`` (content-addressed scene layouts shared across episodes),
``episodes/ep_NNNNNN.jsonl`` step records with ``ep_NNNNNN.meta.json``
sidecars, and a top-level ``manifest.json``. Every float is written with 9
significant digits through the canonical serializer, so emitting, parsing,
and re-emitting a dataset is byte-identical; the only fields that differ
between otherwise identical runs are the wall-clock and rate entries named
in ``VOLATILE_MANIFEST_KEYS``.
"""

from __future__ import annotations

import datetime
import json
import os
import re
from dataclasses import dataclass

import numpy as np

from .errors import DiscontinuousChain, DuplicateEpisode, MissingArtifact
from .kinematics import (
    GRIPPER_CLOSED,
    GRIPPER_OPEN,
    EeTrajectory,
    JointTrajectory,
    KinematicChain,
    parse_chain,
)
from .util import atomic_write_text, dumps_canonical, sha256_hex

EPISODE_DIR = "episodes"
SCENE_DIR = "scenes"
CHAIN_FILE = "chain.json"
DATASET_MANIFEST_FILE = "manifest.json"
DATASET_FORMAT = "demogen-episodes-v1"
VOLATILE_MANIFEST_KEYS = ("created_wall_clock", "generation_rate_eph")

_EPISODE_RE = re.compile(r"^ep_(\d{6})\.jsonl$")

_GRIPPER_CODE = {GRIPPER_OPEN: 0, GRIPPER_CLOSED: 1}


@dataclass(frozen=True)
class EpisodeContext:
    prompt: str
    manifest_hash: str
    scene_file: str   # dataset-relative path of the stored scene
    seed: int


@dataclass(frozen=True)
class QualityReport:
    per_frame_rms: float    # worst grounding residual across frames, meters
    dropped_tracks: int
    ik_max_error: float     # worst end-effector position error, meters


@dataclass
class Episode:
    episode_id: int
    timestamps: np.ndarray    # (M,) seconds, strictly increasing
    positions: np.ndarray     # (M, 3) end-effector world position
    quaternions: np.ndarray   # (M, 4) wxyz
    gripper: np.ndarray       # (M,) 0 open / 1 closed
    joints: np.ndarray        # (M, dof)
    context: EpisodeContext
    quality: QualityReport
    sub_task_index: int = 0
    sub_task_boundaries: tuple = (0,)

    @property
    def num_steps(self) -> int:
        return int(self.timestamps.shape[0])


def episode_from_trajectories(episode_id: int, ee: EeTrajectory,
                              jt: JointTrajectory, context: EpisodeContext,
                              quality: QualityReport,
                              sub_task_index: int = 0) -> Episode:
    if len(ee.poses) != jt.joints.shape[0]:
        raise ValueError("end-effector and joint trajectories disagree in length")
    return Episode(
        episode_id=episode_id,
        timestamps=np.asarray(jt.timestamps, dtype=float),
        positions=np.stack([p.position for p in ee.poses]),
        quaternions=np.stack([p.quat for p in ee.poses]),
        gripper=np.array([_GRIPPER_CODE[g] for g in jt.gripper], dtype=int),
        joints=np.asarray(jt.joints, dtype=float),
        context=context,
        quality=quality,
        sub_task_index=sub_task_index,
    )


def episode_paths(root: str, episode_id: int) -> tuple[str, str]:
    base = os.path.join(root, EPISODE_DIR, f"ep_{episode_id:06d}")
    return base + ".jsonl", base + ".meta.json"


def step_record_lines(timestamps, positions, quaternions, gripper,
                      joints) -> list[str]:
    """One canonical JSON line per step, shared by every JSONL emitter."""
    lines = []
    for i in range(len(timestamps)):
        lines.append(dumps_canonical({
            "timestamp_s": float(timestamps[i]),
            "position_m": [float(x) for x in positions[i]],
            "quaternion_wxyz": [float(x) for x in quaternions[i]],
            "gripper": int(gripper[i]),
            "joints": [float(x) for x in joints[i]],
        }))
    return lines


def write_step_records(path: str, timestamps, positions, quaternions,
                       gripper, joints) -> None:
    lines = step_record_lines(timestamps, positions, quaternions, gripper,
                              joints)
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_step_records(path: str):
    """Parse a step-record JSONL into (timestamps, positions, quaternions,
    gripper, joints) arrays."""
    timestamps, positions, quaternions, gripper, joints = [], [], [], [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            timestamps.append(float(rec["timestamp_s"]))
            positions.append(rec["position_m"])
            quaternions.append(rec["quaternion_wxyz"])
            gripper.append(int(rec["gripper"]))
            joints.append(rec["joints"])
    m = len(timestamps)
    return (np.array(timestamps, dtype=float),
            np.array(positions, dtype=float).reshape(m, 3),
            np.array(quaternions, dtype=float).reshape(m, 4),
            np.array(gripper, dtype=int),
            np.array(joints, dtype=float).reshape(m, -1))


def emit_episode(root: str, episode: Episode) -> tuple[str, str]:
    """Write the step records and metadata sidecar; fails on an existing id."""
    steps_path, meta_path = episode_paths(root, episode.episode_id)
    if os.path.exists(steps_path) or os.path.exists(meta_path):
        raise DuplicateEpisode(episode.episode_id)

    m = episode.num_steps
    shapes_ok = (episode.positions.shape == (m, 3)
                 and episode.quaternions.shape == (m, 4)
                 and episode.gripper.shape == (m,)
                 and episode.joints.shape[0] == m)
    if not shapes_ok:
        raise ValueError("episode arrays disagree in length")

    lines = step_record_lines(episode.timestamps, episode.positions,
                              episode.quaternions, episode.gripper,
                              episode.joints)
    atomic_write_text(steps_path, "\n".join(lines) + "\n")

    meta = {
        "episode_id": episode.episode_id,
        "context": {
            "prompt": episode.context.prompt,
            "manifest_hash": episode.context.manifest_hash,
            "scene_file": episode.context.scene_file,
            "seed": episode.context.seed,
        },
        "quality": {
            "per_frame_rms": float(episode.quality.per_frame_rms),
            "dropped_tracks": int(episode.quality.dropped_tracks),
            "ik_max_error": float(episode.quality.ik_max_error),
        },
        "sub_task_index": episode.sub_task_index,
        "sub_task_boundaries": list(episode.sub_task_boundaries),
        "num_steps": m,
    }
    atomic_write_text(meta_path, dumps_canonical(meta, indent=2) + "\n")
    return steps_path, meta_path


def load_episode(root: str, episode_id: int) -> Episode:
    steps_path, meta_path = episode_paths(root, episode_id)
    with open(meta_path, "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    timestamps, positions, quaternions, gripper, joints = \
        read_step_records(steps_path)
    ctx = meta["context"]
    qual = meta["quality"]
    return Episode(
        episode_id=int(meta["episode_id"]),
        timestamps=timestamps,
        positions=positions,
        quaternions=quaternions,
        gripper=gripper,
        joints=joints,
        context=EpisodeContext(prompt=ctx["prompt"],
                               manifest_hash=ctx["manifest_hash"],
                               scene_file=ctx["scene_file"],
                               seed=int(ctx["seed"])),
        quality=QualityReport(per_frame_rms=float(qual["per_frame_rms"]),
                              dropped_tracks=int(qual["dropped_tracks"]),
                              ik_max_error=float(qual["ik_max_error"])),
        sub_task_index=int(meta["sub_task_index"]),
        sub_task_boundaries=tuple(int(b) for b in meta["sub_task_boundaries"]),
    )


# --- dataset root ------------------------------------------------------------------

def init_dataset(root: str, chain_text: str) -> None:
    os.makedirs(os.path.join(root, EPISODE_DIR), exist_ok=True)
    os.makedirs(os.path.join(root, SCENE_DIR), exist_ok=True)
    atomic_write_text(os.path.join(root, CHAIN_FILE), chain_text)


def store_scene(root: str, scene_text: str) -> str:
    """Content-addressed scene storage; returns the dataset-relative path."""
    name = sha256_hex(scene_text.encode("utf-8")) + ".json"
    rel = f"{SCENE_DIR}/{name}"
    path = os.path.join(root, SCENE_DIR, name)
    if not os.path.exists(path):
        atomic_write_text(path, scene_text)
    return rel


def list_episode_ids(root: str) -> list[int]:
    directory = os.path.join(root, EPISODE_DIR)
    if not os.path.isdir(directory):
        return []
    ids = []
    for name in os.listdir(directory):
        match = _EPISODE_RE.match(name)
        if match:
            ids.append(int(match.group(1)))
    return sorted(ids)


def finalize_dataset(root: str, generation_rate_eph: float,
                     created_wall_clock: str | None = None) -> dict:
    """Write the dataset manifest. The wall-clock and rate fields are the
    run-specific entries listed in VOLATILE_MANIFEST_KEYS; everything else
    must be reproducible."""
    if created_wall_clock is None:
        created_wall_clock = datetime.datetime.now(
            datetime.timezone.utc).isoformat()
    manifest = {
        "format": DATASET_FORMAT,
        "num_episodes": len(list_episode_ids(root)),
        "created_wall_clock": created_wall_clock,
        "generation_rate_eph": float(generation_rate_eph),
    }
    atomic_write_text(os.path.join(root, DATASET_MANIFEST_FILE),
                      dumps_canonical(manifest, indent=2) + "\n")
    return manifest


def load_dataset_chain(root: str) -> KinematicChain:
    path = os.path.join(root, CHAIN_FILE)
    if not os.path.exists(path):
        raise MissingArtifact(path)
    with open(path, "r", encoding="utf-8") as fh:
        return parse_chain(fh.read())


# --- chaining -----------------------------------------------------------------------

def chain_subtasks(episodes: list[Episode], episode_id: int,
                   gap_tolerance_m: float = 0.005) -> Episode:
    """Concatenate same-scene episodes into one long-horizon episode.

    Consecutive parts must agree on context and hand off the end effector
    within ``gap_tolerance_m``; timestamps are re-offset so the combined
    clock keeps each part's own step interval at the joins.
    """
    if not episodes:
        raise ValueError("nothing to chain")
    first = episodes[0].context
    for i, ep in enumerate(episodes[1:], start=1):
        ctx = ep.context
        same = (ctx.prompt == first.prompt
                and ctx.manifest_hash == first.manifest_hash
                and ctx.scene_file == first.scene_file)
        if not same:
            raise ValueError(f"sub-task {i} belongs to a different scene")
        if ep.joints.shape[1] != episodes[0].joints.shape[1]:
            raise ValueError(f"sub-task {i} has a different joint count")
        gap = float(np.linalg.norm(ep.positions[0]
                                   - episodes[i - 1].positions[-1]))
        if gap > gap_tolerance_m:
            raise DiscontinuousChain(i, gap)

    boundaries = []
    times = []
    offset = 0.0
    total = 0
    for ep in episodes:
        t = np.asarray(ep.timestamps, dtype=float)
        dt = float(t[1] - t[0]) if t.shape[0] > 1 else 1.0
        shifted = t - t[0] + offset
        times.append(shifted)
        boundaries.append(total)
        total += ep.num_steps
        offset = float(shifted[-1]) + dt

    return Episode(
        episode_id=episode_id,
        timestamps=np.concatenate(times),
        positions=np.concatenate([ep.positions for ep in episodes]),
        quaternions=np.concatenate([ep.quaternions for ep in episodes]),
        gripper=np.concatenate([ep.gripper for ep in episodes]),
        joints=np.concatenate([ep.joints for ep in episodes]),
        context=first,
        quality=QualityReport(
            per_frame_rms=max(ep.quality.per_frame_rms for ep in episodes),
            dropped_tracks=sum(ep.quality.dropped_tracks for ep in episodes),
            ik_max_error=max(ep.quality.ik_max_error for ep in episodes)),
        sub_task_index=0,
        sub_task_boundaries=tuple(boundaries),
    )


# --- validation ---------------------------------------------------------------------

REASON_MONOTONE = "MonotoneTimestamps"
REASON_LIMITS = "JointLimits"
REASON_GRIPPER = "GripperTransitions"
REASON_LENGTH = "LengthMismatch"
REASON_PARSE = "ParseError"
REASON_QUALITY = "QualityNotFinite"
REASON_MANIFEST = "ManifestMismatch"

MANIFEST_EPISODE_ID = -1   # dataset-level failures carry this pseudo id


@dataclass
class DatasetReport:
    num_episodes: int
    failures: tuple  # ((episode_id, reason), ...)

    @property
    def ok(self) -> bool:
        return not self.failures


def _episode_failures(episode: Episode, chain: KinematicChain) -> list[str]:
    reasons = []
    m = episode.num_steps
    shapes_ok = (episode.positions.shape == (m, 3)
                 and episode.quaternions.shape == (m, 4)
                 and episode.gripper.shape == (m,)
                 and episode.joints.shape == (m, chain.dof))
    if not shapes_ok or m == 0:
        reasons.append(REASON_LENGTH)
        return reasons

    if np.any(np.diff(episode.timestamps) <= 0.0):
        reasons.append(REASON_MONOTONE)

    lo, hi = chain.lower_limits, chain.upper_limits
    if (np.any(episode.joints < lo - 1e-9)
            or np.any(episode.joints > hi + 1e-9)):
        reasons.append(REASON_LIMITS)

    transitions = int(np.count_nonzero(np.diff(episode.gripper)))
    expected = 2 * len(episode.sub_task_boundaries)
    values_ok = bool(np.all((episode.gripper == 0) | (episode.gripper == 1)))
    if not values_ok or transitions != expected:
        reasons.append(REASON_GRIPPER)

    finite = (bool(np.isfinite(episode.quality.per_frame_rms))
              and bool(np.isfinite(episode.quality.ik_max_error))
              and episode.quality.dropped_tracks >= 0)
    if not finite:
        reasons.append(REASON_QUALITY)
    return reasons


def validate_dataset(root: str, chain: KinematicChain | None = None) -> DatasetReport:
    """Check every episode for monotone time, joint limits, well-formed
    gripper switching, consistent lengths, and finite quality metrics, and
    the dataset manifest for format and episode-count agreement."""
    if chain is None:
        chain = load_dataset_chain(root)
    failures = []
    ids = list_episode_ids(root)

    manifest_path = os.path.join(root, DATASET_MANIFEST_FILE)
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        manifest_ok = (doc.get("format") == DATASET_FORMAT
                       and doc.get("num_episodes") == len(ids))
    except (OSError, json.JSONDecodeError):
        manifest_ok = False
    if not manifest_ok:
        failures.append((MANIFEST_EPISODE_ID, REASON_MANIFEST))

    for episode_id in ids:
        try:
            episode = load_episode(root, episode_id)
            meta_steps = episode.num_steps
            if episode.episode_id != episode_id:
                raise ValueError("episode id mismatch")
        except Exception:
            failures.append((episode_id, REASON_PARSE))
            continue
        # the sidecar's num_steps must match the record count
        _, meta_path = episode_paths(root, episode_id)
        with open(meta_path, "r", encoding="utf-8") as fh:
            declared = json.load(fh).get("num_steps")
        if declared != meta_steps:
            failures.append((episode_id, REASON_LENGTH))
            continue
        for reason in _episode_failures(episode, chain):
            failures.append((episode_id, reason))
    return DatasetReport(num_episodes=len(ids), failures=tuple(failures))
