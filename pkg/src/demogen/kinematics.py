"""Serial-chain kinematics: FK, geometric Jacobian, damped-least-squares IK,
grasp-conditioned end-effector trajectories, and joint-space tracking.

Chains are loaded from JSON configs (see ``chains/`` for the bundled 6- and
7-DoF test arms). Joint values are radians (revolute) or meters (prismatic).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import IkDiverged, JointJumpExceeded, JointLimitViolation
from .geometry import (
    Pose,
    quat_from_matrix,
    quat_slerp,
    quat_to_matrix,
    rotation_vector,
)
from .tracking import ObjectTrajectory

REVOLUTE = "revolute"
PRISMATIC = "prismatic"
FIXED = "fixed"

GRIPPER_OPEN = "open"
GRIPPER_CLOSED = "closed"

_LIMIT_EPS = 1e-9


@dataclass(frozen=True)
class LinkSpec:
    name: str
    joint_type: str
    axis: np.ndarray       # unit, in the link's own frame
    origin: Pose           # fixed offset from the previous link
    limits: tuple[float, float]

    def __post_init__(self):
        if self.joint_type not in (REVOLUTE, PRISMATIC, FIXED):
            raise ValueError(f"bad joint type {self.joint_type!r}")
        a = np.asarray(self.axis, dtype=float).reshape(3).copy()
        n = float(np.linalg.norm(a))
        if n < 1e-12:
            raise ValueError(f"link {self.name!r}: zero axis")
        a = a / n
        a.setflags(write=False)
        object.__setattr__(self, "axis", a)
        if self.limits[0] > self.limits[1]:
            raise ValueError(f"link {self.name!r}: limits reversed")


@dataclass(frozen=True)
class KinematicChain:
    links: tuple[LinkSpec, ...]
    base_pose: Pose

    @property
    def actuated(self) -> tuple[LinkSpec, ...]:
        return tuple(l for l in self.links if l.joint_type != FIXED)

    @property
    def dof(self) -> int:
        return len(self.actuated)

    @property
    def lower_limits(self) -> np.ndarray:
        return np.array([l.limits[0] for l in self.actuated])

    @property
    def upper_limits(self) -> np.ndarray:
        return np.array([l.limits[1] for l in self.actuated])

    def with_base(self, base_pose: Pose) -> "KinematicChain":
        return KinematicChain(links=self.links, base_pose=base_pose)


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def _check_limits(chain: KinematicChain, joints: np.ndarray) -> None:
    for value, link in zip(joints, chain.actuated):
        lo, hi = link.limits
        if value < lo - _LIMIT_EPS or value > hi + _LIMIT_EPS:
            raise JointLimitViolation(link.name, float(value), lo, hi)


def _fk_pass(chain: KinematicChain, joints: np.ndarray):
    """Returns (R_ee, p_ee, joint frames) where joint frames hold
    (world position, world axis, joint_type) for each actuated joint."""
    r = quat_to_matrix(chain.base_pose.quat)
    p = chain.base_pose.position.copy()
    frames = []
    qi = 0
    for link in chain.links:
        p = r @ link.origin.position + p
        r = r @ quat_to_matrix(link.origin.quat)
        if link.joint_type == REVOLUTE:
            frames.append((p.copy(), r @ link.axis, REVOLUTE))
            r = r @ _axis_angle_matrix(link.axis, float(joints[qi]))
            qi += 1
        elif link.joint_type == PRISMATIC:
            frames.append((p.copy(), r @ link.axis, PRISMATIC))
            p = p + r @ (link.axis * float(joints[qi]))
            qi += 1
    return r, p, frames


def forward_kinematics(chain: KinematicChain, joints) -> Pose:
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values")
    _check_limits(chain, joints)
    r, p, _ = _fk_pass(chain, joints)
    return Pose(p, quat_from_matrix(r))


def jacobian(chain: KinematicChain, joints) -> np.ndarray:
    """Geometric Jacobian (6 x dof) at the end effector: rows are linear
    velocity then angular velocity."""
    joints = np.asarray(joints, dtype=float)
    if joints.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} joint values")
    _check_limits(chain, joints)
    _, p_ee, frames = _fk_pass(chain, joints)
    jac = np.zeros((6, chain.dof))
    for i, (p_j, axis_w, kind) in enumerate(frames):
        if kind == REVOLUTE:
            jac[:3, i] = np.cross(axis_w, p_ee - p_j)
            jac[3:, i] = axis_w
        else:
            jac[:3, i] = axis_w
    return jac


@dataclass(frozen=True)
class IkParams:
    damping: float = 0.05
    step_clamp: float = 0.1            # max per-joint change per iteration
    pos_tol_m: float = 1e-3
    ang_tol_rad: float = math.radians(0.5)
    max_iterations: int = 200
    max_restarts: int = 8              # extra attempts beyond the seed posture
    restart_seed: int = 0
    stall_window: int = 30
    stall_improvement: float = 1e-12
    null_gain: float = 0.2             # pull toward the seed in the task null space


def _pose_targets(target: Pose) -> tuple[np.ndarray, np.ndarray]:
    return quat_to_matrix(target.quat), target.position


def _dls_iterate(chain: KinematicChain, r_t: np.ndarray, p_t: np.ndarray,
                 q: np.ndarray, q_ref: np.ndarray, params: IkParams):
    """One damped-least-squares descent (SVD form). Joint directions the task
    has genuinely lost (vanishing singular values, e.g. aligned wrist rolls)
    get a pull toward ``q_ref`` so the solver picks a consistent branch
    instead of drifting along the redundant continuum; because the pull lives
    strictly in those null directions it cannot bias task convergence."""
    lo = chain.lower_limits
    hi = chain.upper_limits
    lam2 = params.damping * params.damping
    best = math.inf
    since_best = 0
    for _ in range(params.max_iterations):
        r, p, frames = _fk_pass(chain, q)
        e_pos = p_t - p
        q_err = quat_from_matrix(r_t @ r.T)
        e_rot = rotation_vector(q_err)
        pos_err = float(np.linalg.norm(e_pos))
        ang_err = float(np.linalg.norm(e_rot))
        if pos_err <= params.pos_tol_m and ang_err <= params.ang_tol_rad:
            return q, True, pos_err, ang_err

        err_norm = pos_err + ang_err
        if err_norm < best - params.stall_improvement:
            best = err_norm
            since_best = 0
        else:
            since_best += 1
            if since_best >= params.stall_window:
                break  # not making progress; let a restart take over

        jac = np.zeros((6, chain.dof))
        for i, (p_j, axis_w, kind) in enumerate(frames):
            if kind == REVOLUTE:
                jac[:3, i] = np.cross(axis_w, p - p_j)
                jac[3:, i] = axis_w
            else:
                jac[:3, i] = axis_w
        e = np.concatenate([e_pos, e_rot])
        u, s, vt = np.linalg.svd(jac, full_matrices=True)
        gains = s / (s * s + lam2)
        dq = vt[:len(s)].T @ (gains * (u.T @ e)[:len(s)])
        if params.null_gain > 0.0:
            null_cut = 1e-4 * (s[0] if s[0] > 0 else 1.0)
            lost = np.zeros(chain.dof, dtype=bool)
            lost[:len(s)] = s < null_cut
            lost[len(s):] = True
            if np.any(lost):
                coords = vt @ (params.null_gain * (q_ref - q))
                dq = dq + vt.T @ np.where(lost, coords, 0.0)
        dq = np.clip(dq, -params.step_clamp, params.step_clamp)
        q = np.clip(q + dq, lo, hi)

    r, p, _ = _fk_pass(chain, q)
    pos_err = float(np.linalg.norm(p_t - p))
    ang_err = float(np.linalg.norm(rotation_vector(quat_from_matrix(r_t @ r.T))))
    return q, False, pos_err, ang_err


def solve_ik_dls(chain: KinematicChain, target: Pose, seed_joints,
                 params: IkParams = IkParams(),
                 posture_reference=None) -> np.ndarray:
    """Damped-least-squares IK with per-step clamping and joint-limit
    clamping. A target already satisfied by the seed returns immediately.
    Falls back to deterministic random restarts before raising IkDiverged.

    ``posture_reference`` anchors redundant joint directions (defaults to the
    seed); trackers pass a fixed comfortable posture so redundancy does not
    drift into limits over a long path."""
    q = np.asarray(seed_joints, dtype=float).copy()
    if q.shape != (chain.dof,):
        raise ValueError(f"expected {chain.dof} seed joint values")
    _check_limits(chain, q)
    r_t, p_t = _pose_targets(target)
    if posture_reference is None:
        q_ref = q
    else:
        q_ref = np.asarray(posture_reference, dtype=float)
        if q_ref.shape != (chain.dof,):
            raise ValueError(f"expected {chain.dof} posture reference values")

    q_out, ok, pos_err, ang_err = _dls_iterate(chain, r_t, p_t, q, q_ref,
                                               params)
    if ok:
        return q_out
    best = (pos_err, ang_err)
    rng = np.random.default_rng(params.restart_seed)
    lo = chain.lower_limits
    hi = chain.upper_limits
    for attempt in range(params.max_restarts):
        if attempt < params.max_restarts // 2:
            # stay near the seed first so solutions keep its branch
            q0 = np.clip(q + rng.normal(0.0, 0.3, size=chain.dof), lo, hi)
        else:
            q0 = rng.uniform(lo, hi)
        q_out, ok, pos_err, ang_err = _dls_iterate(chain, r_t, p_t, q0, q_ref,
                                                   params)
        if ok:
            return q_out
        best = min(best, (pos_err, ang_err))
    raise IkDiverged(best[0], best[1])


# --- grasp-conditioned trajectories ---------------------------------------------

@dataclass(frozen=True)
class GraspPose:
    pose: Pose                 # gripper frame in the object frame
    approach_axis: np.ndarray  # gripper-frame direction toward the object
    pre_grasp_offset_m: float = 0.08

    def __post_init__(self):
        a = np.asarray(self.approach_axis, dtype=float).reshape(3).copy()
        n = float(np.linalg.norm(a))
        if n < 1e-12:
            raise ValueError("zero approach axis")
        a = a / n
        a.setflags(write=False)
        object.__setattr__(self, "approach_axis", a)
        if not self.pre_grasp_offset_m > 0:
            raise ValueError("pre_grasp_offset_m must be positive")


@dataclass
class EeTrajectory:
    poses: list[Pose]
    gripper: list[str]            # GRIPPER_OPEN / GRIPPER_CLOSED per step
    timestamps: np.ndarray        # strictly increasing seconds
    manipulation_range: tuple[int, int]  # [start, end) of the object-riding phase

    def __len__(self) -> int:
        return len(self.poses)


def _lerp_pose(a: Pose, b: Pose, s: float) -> Pose:
    return Pose(a.position + s * (b.position - a.position),
                quat_slerp(a.quat, b.quat, s))


def grasp_to_ee_trajectory(object_traj: ObjectTrajectory, object_pose0: Pose,
                           grasp: GraspPose, frame_dt: float,
                           approach_steps: int = 10,
                           release_steps: int = 10) -> EeTrajectory:
    """Three-phase gripper path riding a grounded object trajectory.

    Approach: pre-grasp pose (grasp retracted along the approach axis) down
    to the grasp pose, gripper open. Manipulate: gripper closed, rigidly
    attached, pose[t] = object_pose0 o object_traj.pose[t] o grasp.pose.
    Release: gripper opens at the final pose and retracts. Timestamps are
    uniform at ``frame_dt``; exactly two gripper transitions.
    """
    if approach_steps < 2 or release_steps < 2:
        raise ValueError("approach/release need at least 2 steps")
    if frame_dt <= 0:
        raise ValueError("frame_dt must be positive")
    t = len(object_traj.poses)
    if t < 1:
        raise ValueError("empty object trajectory")
    p0, a0 = object_traj.poses[0].position, object_traj.poses[0].quat
    if float(np.linalg.norm(p0)) > 1e-9 or abs(1.0 - abs(a0[0])) > 1e-9:
        raise ValueError("object trajectory must start at the identity")

    retreat = Pose(-grasp.pre_grasp_offset_m * grasp.approach_axis,
                   np.array([1.0, 0, 0, 0]))
    grasp_world = [object_pose0.compose(pose).compose(grasp.pose)
                   for pose in object_traj.poses]
    pre_grasp = grasp_world[0].compose(retreat)
    final = grasp_world[-1]
    post_release = final.compose(retreat)

    poses: list[Pose] = []
    gripper: list[str] = []
    for j in range(approach_steps):
        poses.append(_lerp_pose(pre_grasp, grasp_world[0], j / (approach_steps - 1)))
        gripper.append(GRIPPER_OPEN)
    manip_start = len(poses)
    poses.extend(grasp_world)
    gripper.extend([GRIPPER_CLOSED] * t)
    manip_end = len(poses)
    for j in range(release_steps):
        poses.append(_lerp_pose(final, post_release, j / (release_steps - 1)))
        gripper.append(GRIPPER_OPEN)

    timestamps = np.arange(len(poses)) * frame_dt
    return EeTrajectory(poses=poses, gripper=gripper, timestamps=timestamps,
                        manipulation_range=(manip_start, manip_end))


@dataclass
class JointTrajectory:
    joints: np.ndarray        # (M, dof)
    gripper: list[str]
    timestamps: np.ndarray


def _interp_pose(a: Pose, b: Pose, t: float) -> Pose:
    return Pose((1.0 - t) * a.position + t * b.position,
                quat_slerp(a.quat, b.quat, t))


def _unwrap_toward(chain: KinematicChain, q: np.ndarray,
                   q_prev: np.ndarray) -> np.ndarray:
    """Shift revolute joints by full turns toward ``q_prev`` where the
    shifted value stays inside limits (FK is invariant under full turns)."""
    q = q.copy()
    two_pi = 2.0 * math.pi
    for j, link in enumerate(chain.actuated):
        if link.joint_type != REVOLUTE:
            continue
        lo, hi = link.limits
        for cand in (q[j] - two_pi, q[j] + two_pi):
            if (lo - _LIMIT_EPS <= cand <= hi + _LIMIT_EPS
                    and abs(cand - q_prev[j]) < abs(q[j] - q_prev[j])):
                q[j] = cand
    return q


def _nearest_equivalent(chain: KinematicChain, q: np.ndarray,
                        q_prev: np.ndarray) -> np.ndarray:
    """Among joint vectors with the same end-effector pose as ``q``, pick the
    closest to ``q_prev``. Candidates are full revolute turns plus the
    roll-pitch-roll flip (a+pi, -b, c+pi) tried at every consecutive revolute
    triple; flips compose through a greedy improvement loop and each one is
    verified through FK rather than assuming chain geometry."""
    best = _unwrap_toward(chain, q, q_prev)
    if chain.dof < 3:
        return best
    r0, p0, _ = _fk_pass(chain, q)
    lo = chain.lower_limits
    hi = chain.upper_limits
    act = chain.actuated
    dist = float(np.max(np.abs(best - q_prev)))
    improved = True
    while improved:
        improved = False
        for i in range(chain.dof - 2):
            if any(act[j].joint_type != REVOLUTE for j in (i, i + 1, i + 2)):
                continue
            for sign in (1.0, -1.0):
                cand = best.copy()
                cand[i] += sign * math.pi
                cand[i + 1] = -cand[i + 1]
                cand[i + 2] += sign * math.pi
                cand = _unwrap_toward(chain, cand, q_prev)
                if np.any(cand < lo - _LIMIT_EPS) or np.any(cand > hi + _LIMIT_EPS):
                    continue
                d = float(np.max(np.abs(cand - q_prev)))
                if d >= dist:
                    continue
                r, p, _ = _fk_pass(chain, cand)
                if np.max(np.abs(p - p0)) < 1e-9 and np.max(np.abs(r - r0)) < 1e-9:
                    best = cand
                    dist = d
                    improved = True
    return best


def trajectory_to_joints(chain: KinematicChain, ee_traj: EeTrajectory,
                         seed_joints, params: IkParams = IkParams(),
                         max_joint_step: float = 0.8,
                         substeps: int = 8) -> JointTrajectory:
    """Warm-started waypoint IK. A waypoint that diverges or lands on a
    different branch (the jump guard) is retried by subdividing the motion
    from the previous pose into ``substeps`` interpolated targets, which keeps
    the solver inside its contraction region. Raises IkDiverged (with the
    step index) when a waypoint stays unreachable and JointJumpExceeded when
    the solution still jumps by more than ``max_joint_step`` per joint.
    Branch flips show up as radian-scale jumps, so the guard sits well above
    any per-frame motion a 30 Hz waypoint stream produces."""
    q = np.asarray(seed_joints, dtype=float)
    posture = q.copy()
    prev_pose = forward_kinematics(chain, q)
    out = np.zeros((len(ee_traj), chain.dof))
    for i, target in enumerate(ee_traj.poses):
        q_prev = q
        try:
            q = _nearest_equivalent(
                chain, solve_ik_dls(chain, target, q_prev, params,
                                    posture_reference=posture), q_prev)
            # The seed is an arbitrary posture, so only guard steps that
            # continue an already-solved path.
            subdivide = i > 0 and float(np.max(np.abs(q - q_prev))) > max_joint_step
        except IkDiverged:
            subdivide = True
        if subdivide:
            failure = None
            q = q_prev
            try:
                for k in range(1, substeps + 1):
                    q_k = solve_ik_dls(chain, _interp_pose(prev_pose, target,
                                                           k / substeps),
                                       q, params, posture_reference=posture)
                    q = _nearest_equivalent(chain, q_k, q)
                jump = float(np.max(np.abs(q - q_prev)))
                if i > 0 and jump > max_joint_step:
                    failure = JointJumpExceeded(i, jump, max_joint_step)
            except IkDiverged as exc:
                failure = IkDiverged(exc.pos_error, exc.ang_error, step=i)
            if failure is not None:
                # Last resort: a fresh solve from the anchor posture mapped to
                # its nearest exact alias can land back on the tracked branch.
                try:
                    q_alt = _nearest_equivalent(
                        chain, solve_ik_dls(chain, target, posture, params,
                                            posture_reference=posture),
                        q_prev)
                except IkDiverged:
                    raise failure from None
                jump = float(np.max(np.abs(q_alt - q_prev)))
                if i > 0 and jump > max_joint_step:
                    raise failure
                q = q_alt
        out[i] = q
        prev_pose = target
    return JointTrajectory(joints=out, gripper=list(ee_traj.gripper),
                           timestamps=ee_traj.timestamps.copy())


def reach_envelope(chain: KinematicChain) -> tuple[float, float]:
    """Rough (shoulder_height_m, max_reach_m) for base placement: the offset
    accumulated through the first two actuated joints, and the summed link
    lengths beyond them."""
    height = 0.0
    reach = 0.0
    actuated_seen = 0
    for link in chain.links:
        step = float(np.linalg.norm(link.origin.position))
        if actuated_seen < 2:
            height += step
        else:
            reach += step
        if link.joint_type != FIXED:
            actuated_seen += 1
    return height, reach


def neutral_joints(chain: KinematicChain) -> np.ndarray:
    """A deterministic elbow-bent posture away from the straight-up
    singularity: Y-axis revolute joints lean 0.35 rad, others stay mid-range."""
    q = 0.5 * (chain.lower_limits + chain.upper_limits)
    for i, link in enumerate(chain.actuated):
        if link.joint_type == REVOLUTE and abs(link.axis[1]) > 0.9:
            q[i] = float(np.clip(q[i] + 0.35, link.limits[0], link.limits[1]))
    return q


# --- chain configs ----------------------------------------------------------------

def _pose_from_doc(doc) -> Pose:
    return Pose(np.array(doc["position_m"], dtype=float),
                np.array(doc["quaternion_wxyz"], dtype=float))


def parse_chain(text: str) -> KinematicChain:
    doc = json.loads(text)
    links = tuple(
        LinkSpec(
            name=l["name"],
            joint_type=l["joint_type"],
            axis=np.array(l["axis"], dtype=float),
            origin=_pose_from_doc(l["origin"]),
            limits=(float(l["limits"][0]), float(l["limits"][1])),
        )
        for l in doc["links"]
    )
    return KinematicChain(links=links, base_pose=_pose_from_doc(doc["base_pose"]))


def load_chain(path: str) -> KinematicChain:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_chain(fh.read())


def bundled_chain_text(name: str) -> str:
    """Raw JSON for a chain shipped with the package ('six_dof', 'seven_dof')."""
    ref = resources.files("demogen").joinpath(f"chains/{name}.json")
    return ref.read_text(encoding="utf-8")


def bundled_chain(name: str) -> KinematicChain:
    return parse_chain(bundled_chain_text(name))
