"""Independent reference implementations used as test oracles.

Everything in this module is deliberately written from first principles
(Rodrigues' formula, homogeneous 4x4 matrices, central differences,
interval arithmetic) so that agreement with the package is evidence, not
tautology. Nothing here imports package internals beyond the public
types being checked.
"""

from __future__ import annotations

import math

import numpy as np

from demogen.kinematics import forward_kinematics


# --- rotation / transform oracles --------------------------------------------------

def rodrigues_matrix(axis, angle: float) -> np.ndarray:
    """3x3 rotation about a unit axis, via Rodrigues' formula:

        R = I + sin(t) K + (1 - cos(t)) K^2,  K = skew(axis)
    """
    a = np.asarray(axis, dtype=np.float64)
    a = a / np.linalg.norm(a)
    k = np.array([
        [0.0, -a[2], a[1]],
        [a[2], 0.0, -a[0]],
        [-a[1], a[0], 0.0],
    ])
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def homogeneous(rotation: np.ndarray, translation) -> np.ndarray:
    """4x4 homogeneous transform from a 3x3 rotation and a 3-vector."""
    m = np.eye(4)
    m[:3, :3] = rotation
    m[:3, 3] = np.asarray(translation, dtype=np.float64)
    return m


def homogeneous_from_axis_angle(axis, angle: float, translation=(0, 0, 0)) -> np.ndarray:
    return homogeneous(rodrigues_matrix(axis, angle), translation)


def apply_homogeneous(m: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Transform (..., 3) points by a 4x4 matrix."""
    pts = np.asarray(points, dtype=np.float64)
    return pts @ m[:3, :3].T + m[:3, 3]


def quat_to_rotation_vector(q) -> np.ndarray:
    """axis * angle from a wxyz quaternion, minimal representation.

    angle = 2 atan2(|v|, w) after forcing w >= 0, axis = v / |v|.
    """
    q = np.asarray(q, dtype=np.float64)
    if q[0] < 0.0:
        q = -q
    v = q[1:]
    s = float(np.linalg.norm(v))
    if s < 1e-15:
        return np.zeros(3)
    angle = 2.0 * math.atan2(s, float(q[0]))
    return (v / s) * angle


# --- finite-difference Jacobian oracle ----------------------------------------------

def finite_difference_jacobian(chain, joints, step: float = 1e-6) -> np.ndarray:
    """6 x dof Jacobian by central differences of forward kinematics.

    Rows 0-2: positional derivative. Rows 3-5: angular velocity direction,
    obtained as the rotation vector of R(q+) R(q-)^T over the 2*step span.
    Configurations must sit at least ``step`` inside the joint limits.
    """
    joints = np.asarray(joints, dtype=np.float64)
    cols = []
    for j in range(joints.size):
        dq = np.zeros_like(joints)
        dq[j] = step
        hi = forward_kinematics(chain, joints + dq)
        lo = forward_kinematics(chain, joints - dq)
        linear = (hi.position - lo.position) / (2.0 * step)
        # relative rotation hi o lo^-1 expressed as a rotation vector
        w1, x1, y1, z1 = hi.quat
        w2, x2, y2, z2 = lo.quat
        rel = np.array([
            w1 * w2 + x1 * x2 + y1 * y2 + z1 * z2,
            -w1 * x2 + x1 * w2 - y1 * z2 + z1 * y2,
            -w1 * y2 + x1 * z2 + y1 * w2 - z1 * x2,
            -w1 * z2 - x1 * y2 + y1 * x2 + z1 * w2,
        ])
        angular = quat_to_rotation_vector(rel) / (2.0 * step)
        cols.append(np.concatenate([linear, angular]))
    return np.stack(cols, axis=1)


# --- box overlap oracle --------------------------------------------------------------

def boxes_intersect(min_a, max_a, min_b, max_b, tolerance: float = 0.0) -> bool:
    """Per-axis interval test: boxes intersect iff every axis overlaps by
    strictly more than ``tolerance``."""
    for i in range(3):
        overlap = min(max_a[i], max_b[i]) - max(min_a[i], min_b[i])
        if overlap <= tolerance:
            return False
    return True


def any_pair_intersects(scene, tolerance: float = 1e-4):
    """Brute-force pairwise scan over a SceneLayout; returns the first
    offending name pair or None."""
    objs = scene.objects
    for i in range(len(objs)):
        for j in range(i + 1, len(objs)):
            a, b = objs[i].aabb, objs[j].aabb
            if boxes_intersect(a.min, a.max, b.min, b.max, tolerance):
                return objs[i].name, objs[j].name
    return None


def support_gap(scene, obj) -> float:
    """Signed gap between an object's bottom face and its support's top face
    (ground support measures against the scene ground plane)."""
    if obj.support == "ground":
        return float(obj.bottom_z - scene.ground_z)
    parent = scene.get(obj.support)
    return float(obj.bottom_z - parent.top_z)
