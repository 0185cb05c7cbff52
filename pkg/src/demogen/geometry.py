"""Rigid-body geometry: quaternion/pose algebra, axis-aligned boxes, pinhole
projection, and rigid point-set registration with a RANSAC front end.

Conventions
-----------
* quaternions are (w, x, y, z), unit norm, canonical hemisphere w >= 0
* translations and depths are meters; depth is along the camera optical axis
* point sets are (N, 3) float arrays
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateConfiguration,
    NoConsensus,
    NonPositiveDepth,
    OutOfBounds,
)

QUAT_NORM_TOL = 1e-9


def _vec3(value) -> np.ndarray:
    v = np.asarray(value, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite 3-vector")
    return v


# --- quaternions -------------------------------------------------------------

def quat_normalize(q) -> np.ndarray:
    """Unit norm, then flip into the w >= 0 hemisphere."""
    q = np.asarray(q, dtype=float).reshape(4)
    n = float(np.linalg.norm(q))
    if not math.isfinite(n) or n < 1e-12:
        raise ValueError("cannot normalize a near-zero quaternion")
    q = q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_multiply(a, b) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_rotate(q, v) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion q. v is (3,) or (N, 3)."""
    v = np.asarray(v, dtype=float)
    qv = np.asarray(q[1:], dtype=float)
    w = float(q[0])
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = _vec3(axis)
    n = float(np.linalg.norm(axis))
    if n < 1e-12:
        raise ValueError("zero rotation axis")
    half = 0.5 * float(angle)
    return quat_normalize(np.concatenate(([math.cos(half)], axis / n * math.sin(half))))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(m) -> np.ndarray:
    """Shepperd's method; picks the numerically largest pivot."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array([
            0.25 * s,
            (m[2, 1] - m[1, 2]) / s,
            (m[0, 2] - m[2, 0]) / s,
            (m[1, 0] - m[0, 1]) / s,
        ])
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array([
                (m[2, 1] - m[1, 2]) / s,
                0.25 * s,
                (m[0, 1] + m[1, 0]) / s,
                (m[0, 2] + m[2, 0]) / s,
            ])
        elif i == 1:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array([
                (m[0, 2] - m[2, 0]) / s,
                (m[0, 1] + m[1, 0]) / s,
                0.25 * s,
                (m[1, 2] + m[2, 1]) / s,
            ])
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array([
                (m[1, 0] - m[0, 1]) / s,
                (m[0, 2] + m[2, 0]) / s,
                (m[1, 2] + m[2, 1]) / s,
                0.25 * s,
            ])
    return quat_normalize(q)


def quat_angle(a, b) -> float:
    """Geodesic rotation angle between two unit quaternions, radians."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, d))


def quat_slerp(a, b, s: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = float(np.dot(a, b))
    if d < 0.0:
        b = -b
        d = -d
    if d > 1.0 - 1e-12:
        return quat_normalize(a + s * (b - a))
    theta = math.acos(min(1.0, d))
    sa = math.sin((1.0 - s) * theta) / math.sin(theta)
    sb = math.sin(s * theta) / math.sin(theta)
    return quat_normalize(sa * a + sb * b)


def quat_mean(quats, reference=None) -> np.ndarray:
    """Normalized arithmetic mean after aligning every quaternion to one
    hemisphere. Adequate for tight clusters (frame-to-frame smoothing)."""
    qs = np.asarray(quats, dtype=float)
    ref = qs[0] if reference is None else np.asarray(reference, dtype=float)
    signs = np.where(qs @ ref < 0.0, -1.0, 1.0)
    return quat_normalize((qs * signs[:, None]).mean(axis=0))


def rotation_vector(q) -> np.ndarray:
    """Axis-angle vector of a unit quaternion (stable near identity)."""
    q = np.asarray(q, dtype=float)
    if q[0] < 0.0:
        q = -q
    vn = float(np.linalg.norm(q[1:]))
    if vn < 1e-12:
        return np.zeros(3)
    angle = 2.0 * math.atan2(vn, float(q[0]))
    return q[1:] / vn * angle


# --- poses -------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotate by ``quat`` then translate by ``position``."""

    position: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        p = _vec3(self.position).copy()
        q = quat_normalize(self.quat).copy()
        p.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        return cls(_vec3(translation), quat_from_axis_angle(axis, angle))

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, 3], quat_from_matrix(m[:3, :3]))

    def to_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.quat)
        m[:3, 3] = self.position
        return m

    def compose(self, other: "Pose") -> "Pose":
        """self applied after other's frame: (self o other)(x) = self(other(x))."""
        return Pose(
            self.position + quat_rotate(self.quat, other.position),
            quat_multiply(self.quat, other.quat),
        )

    def inverse(self) -> "Pose":
        qc = quat_conjugate(self.quat)
        return Pose(-quat_rotate(qc, self.position), qc)

    def apply(self, points) -> np.ndarray:
        return quat_rotate(self.quat, points) + self.position


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance m, geodesic rotation angle rad) between poses."""
    return (
        float(np.linalg.norm(a.position - b.position)),
        quat_angle(a.quat, b.quat),
    )


# --- axis-aligned boxes -------------------------------------------------------

@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = _vec3(self.min).copy()
        hi = _vec3(self.max).copy()
        if np.any(hi < lo):
            raise ValueError("aabb max < min")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def from_center_extent(cls, center, extent) -> "Aabb":
        c = _vec3(center)
        h = _vec3(extent) * 0.5
        return cls(c - h, c + h)

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.min + self.max)

    @property
    def extent(self) -> np.ndarray:
        return self.max - self.min


def aabb_overlap(a: Aabb, b: Aabb) -> np.ndarray:
    """Per-axis overlap amounts (negative where separated)."""
    return np.minimum(a.max, b.max) - np.maximum(a.min, b.min)


def aabb_intersect(a: Aabb, b: Aabb, tolerance: float = 0.0) -> bool:
    """True when the boxes overlap by more than ``tolerance`` on every axis."""
    return bool(np.all(aabb_overlap(a, b) > tolerance))


# --- pinhole camera ------------------------------------------------------------

@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")


def backproject(u: float, v: float, depth: float, k: CameraIntrinsics) -> np.ndarray:
    """Pixel + depth -> camera-frame 3D point. Depth is along the optical axis."""
    if not depth > 0.0:
        raise NonPositiveDepth(f"depth {depth} at ({u}, {v})")
    if not (0.0 <= u < k.width and 0.0 <= v < k.height):
        raise OutOfBounds(f"pixel ({u}, {v}) outside {k.width}x{k.height}")
    return np.array([
        (u - k.cx) * depth / k.fx,
        (v - k.cy) * depth / k.fy,
        depth,
    ])


def project(point, k: CameraIntrinsics) -> tuple[float, float]:
    """Camera-frame 3D point -> pixel. Inverse of backproject for z > 0."""
    p = _vec3(point)
    if not p[2] > 0.0:
        raise NonPositiveDepth(f"point depth {p[2]} behind camera")
    return (
        float(k.fx * p[0] / p[2] + k.cx),
        float(k.fy * p[1] / p[2] + k.cy),
    )


# --- rigid registration --------------------------------------------------------

@dataclass
class RigidFitResult:
    transform: Pose
    inlier_flags: np.ndarray
    rms_residual: float


def rigid_fit(src, dst) -> RigidFitResult:
    """Least-squares rigid transform T minimizing ||T(src) - dst||^2.

    SVD solution with the det(R) = +1 correction; no scale. Raises
    DegenerateConfiguration when the correspondences do not pin down a
    unique rotation (collinear or coincident points).
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src/dst must be matching (N, 3) arrays")
    if src.shape[0] < 3:
        raise ValueError("need at least 3 correspondences")

    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    # rank < 2 leaves a free rotation about the dominant axis
    if s[0] <= 0.0 or s[1] <= 1e-9 * s[0]:
        raise DegenerateConfiguration("correspondences are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - r @ c_src

    transform = Pose(t, quat_from_matrix(r))
    residuals = np.linalg.norm(src @ r.T + t - dst, axis=1)
    return RigidFitResult(
        transform=transform,
        inlier_flags=np.ones(src.shape[0], dtype=bool),
        rms_residual=float(np.sqrt(np.mean(residuals**2))),
    )


def _fit_residuals(transform: Pose, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    return np.linalg.norm(transform.apply(src) - dst, axis=1)


def ransac_rigid_fit(
    src,
    dst,
    inlier_threshold: float = 0.005,
    max_iterations: int = 200,
    seed: int = 0,
) -> RigidFitResult:
    """RANSAC wrapper around rigid_fit.

    Minimal samples of 3, residual test against ``inlier_threshold``, final
    refit on the consensus set. Deterministic for a fixed seed. Uses the
    standard adaptive stopping rule (99% confidence) so clean data costs one
    iteration; ``max_iterations`` is the hard cap. Raises NoConsensus when no
    model reaches 3 inliers.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 3:
        raise ValueError("src/dst must be matching (N, 3) arrays")
    n = src.shape[0]
    if n < 3:
        raise ValueError("need at least 3 correspondences")

    rng = np.random.default_rng(seed)
    best_count = 0
    best_rms = math.inf
    best_flags = None
    needed = max_iterations
    it = 0
    while it < needed:
        idx = rng.choice(n, size=3, replace=False)
        try:
            model = rigid_fit(src[idx], dst[idx]).transform
        except DegenerateConfiguration:
            it += 1
            continue
        residuals = _fit_residuals(model, src, dst)
        flags = residuals <= inlier_threshold
        count = int(flags.sum())
        if count >= 3:
            rms = float(np.sqrt(np.mean(residuals[flags] ** 2)))
            if count > best_count or (count == best_count and rms < best_rms):
                best_count = count
                best_rms = rms
                best_flags = flags
                w = count / n
                if w >= 1.0:
                    needed = it + 1
                else:
                    denom = math.log(max(1e-12, 1.0 - w**3))
                    needed = min(max_iterations, it + 1 + int(math.ceil(
                        math.log(0.01) / denom)))
        it += 1

    if best_flags is None or best_count < 3:
        raise NoConsensus(f"no rigid model with >= 3 inliers out of {n} points")

    refit = rigid_fit(src[best_flags], dst[best_flags]).transform
    residuals = _fit_residuals(refit, src, dst)
    flags = residuals <= inlier_threshold
    if int(flags.sum()) < 3:
        raise NoConsensus("consensus collapsed below 3 inliers on refit")
    rms = float(np.sqrt(np.mean(residuals[flags] ** 2)))
    return RigidFitResult(transform=refit, inlier_flags=flags, rms_residual=rms)
