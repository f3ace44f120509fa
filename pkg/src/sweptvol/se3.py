"""Rigid-body transform algebra: poses, twists, exp/log maps, adjoints.

Twists are 6-vectors ordered (linear, angular).  Batched helpers operate on
stacked arrays and are used by the sweep solvers, which evaluate poses at
thousands of trajectory times per query.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_EPS_ANGLE = 1e-10


def _check_rotation(R: np.ndarray) -> None:
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise ValueError("rotation has non-finite entries")
    err = np.abs(R.T @ R - np.eye(3)).max()
    if err > 1e-9:
        raise ValueError(f"rotation not orthonormal (|R^T R - I| = {err:.2e})")
    if abs(np.linalg.det(R) - 1.0) > 1e-9:
        raise ValueError("rotation has det != +1")


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation matrix + translation in meters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.ascontiguousarray(np.asarray(self.rotation, dtype=np.float64))
        t = np.ascontiguousarray(np.asarray(self.translation, dtype=np.float64).reshape(3))
        _check_rotation(R)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation has non-finite entries")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one point (3,) or many points (..., 3)."""
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def flat(self) -> np.ndarray:
        """12-number encoding: rotation rows then translation."""
        return np.concatenate([self.rotation.reshape(9), self.translation])

    @staticmethod
    def from_flat(v: np.ndarray) -> "Pose":
        v = np.asarray(v, dtype=np.float64).reshape(12)
        return Pose(v[:9].reshape(3, 3), v[9:])


@dataclass(frozen=True)
class Twist:
    """Body velocity: linear part (m / unit time) and angular part (rad / unit time)."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.linear, dtype=np.float64).reshape(3))
        w = np.ascontiguousarray(np.asarray(self.angular, dtype=np.float64).reshape(3))
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(w))):
            raise ValueError("twist has non-finite entries")
        v.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "linear", v)
        object.__setattr__(self, "angular", w)

    @staticmethod
    def zero() -> "Twist":
        return Twist(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vec(xi: np.ndarray) -> "Twist":
        xi = np.asarray(xi, dtype=np.float64).reshape(6)
        return Twist(xi[:3], xi[3:])

    def vec(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def skew(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula, Taylor-safe near zero angle."""
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < _EPS_ANGLE:
        return np.eye(3) + K + 0.5 * (K @ K)
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / (theta * theta)
    return np.eye(3) + a * K + b * (K @ K)


def rotation_log(R: np.ndarray) -> np.ndarray:
    """Inverse of rotation_exp.

    At angle pi the axis sign is ambiguous; we pick the axis whose first
    nonzero component is positive.
    """
    tr = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    theta = np.arccos(tr)
    anti = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-8:
        return anti
    if theta > np.pi - 1e-6:
        # Near pi sin(theta) vanishes; recover the axis from the symmetric part
        # a a^T = (S - cos(theta) I) / (1 - cos(theta)).
        S = 0.5 * (R + R.T)
        B = (S - tr * np.eye(3)) / (1.0 - tr)
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k].copy()
        axis[k] = max(B[k, k], 0.0)
        axis[k] = np.sqrt(axis[k])
        if axis[k] < 1e-12:
            raise ValueError("degenerate rotation log")
        axis[[i for i in range(3) if i != k]] /= axis[k]
        axis /= np.linalg.norm(axis)
        if np.linalg.norm(anti) > 1e-9:
            if np.dot(anti, axis) < 0.0:
                axis = -axis
        else:
            # theta = pi exactly: both signs valid; take the axis whose first
            # nonzero component is positive.
            for c in axis:
                if abs(c) > 1e-12:
                    if c < 0:
                        axis = -axis
                    break
        return theta * axis
    return theta / np.sin(theta) * anti


def _so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-6:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    t2 = theta * theta
    a = (1.0 - np.cos(theta)) / t2
    b = (theta - np.sin(theta)) / (t2 * theta)
    return np.eye(3) + a * K + b * (K @ K)


def _so3_left_jacobian_inv(w: np.ndarray) -> np.ndarray:
    theta = np.linalg.norm(w)
    K = skew(w)
    if theta < 1e-6:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    half = 0.5 * theta
    cot = half / np.tan(half)
    coeff = (1.0 - cot) / (theta * theta)
    return np.eye(3) - 0.5 * K + coeff * (K @ K)


def pose_exp(xi: Twist, t: float = 1.0) -> Pose:
    """Exponential of a constant body twist integrated for time t."""
    v = xi.linear * t
    w = xi.angular * t
    R = rotation_exp(w)
    trans = _so3_left_jacobian(w) @ v
    return Pose(R, trans)


def pose_log(p: Pose) -> Twist:
    """Inverse of pose_exp for rotation angles < pi (branch at pi documented in rotation_log)."""
    w = rotation_log(p.rotation)
    v = _so3_left_jacobian_inv(w) @ p.translation
    return Twist(v, w)


def pose_compose(a: Pose, b: Pose) -> Pose:
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def pose_inverse(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def pose_relative(a: Pose, b: Pose) -> Pose:
    """a^{-1} b."""
    Rt = a.rotation.T
    return Pose(Rt @ b.rotation, Rt @ (b.translation - a.translation))


def adjoint(p: Pose) -> np.ndarray:
    """6x6 adjoint mapping body twists to twists in the parent frame, (v, w) order."""
    A = np.zeros((6, 6))
    A[:3, :3] = p.rotation
    A[:3, 3:] = skew(p.translation) @ p.rotation
    A[3:, 3:] = p.rotation
    return A


def pose_distance(a: Pose, b: Pose) -> float:
    """Chart distance: norm of log(a^{-1} b)."""
    return float(np.linalg.norm(pose_log(pose_relative(a, b)).vec()))


# ---------------------------------------------------------------------------
# Batched variants.  Shapes: w (..., 3), xi (..., 6); outputs broadcast.
# ---------------------------------------------------------------------------

def skew_batch(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    K = np.zeros(w.shape[:-1] + (3, 3))
    K[..., 0, 1] = -w[..., 2]
    K[..., 0, 2] = w[..., 1]
    K[..., 1, 0] = w[..., 2]
    K[..., 1, 2] = -w[..., 0]
    K[..., 2, 0] = -w[..., 1]
    K[..., 2, 1] = w[..., 0]
    return K


def rotation_exp_batch(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1)
    K = skew_batch(w)
    KK = K @ K
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(safe) / safe)
    b = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    I = np.broadcast_to(np.eye(3), K.shape)
    return I + a[..., None, None] * K + b[..., None, None] * KK


def pose_exp_batch(xi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched pose_exp: xi (..., 6) -> (R (..., 3, 3), t (..., 3))."""
    xi = np.asarray(xi, dtype=np.float64)
    v = xi[..., :3]
    w = xi[..., 3:]
    theta = np.linalg.norm(w, axis=-1)
    K = skew_batch(w)
    KK = K @ K
    small = theta < 1e-8
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 0.5, (1.0 - np.cos(safe)) / (safe * safe))
    b = np.where(small, 1.0 / 6.0, (safe - np.sin(safe)) / (safe ** 3))
    I = np.broadcast_to(np.eye(3), K.shape)
    V = I + a[..., None, None] * K + b[..., None, None] * KK
    R = rotation_exp_batch(w)
    t = np.einsum("...ij,...j->...i", V, v)
    return R, t


def segment_poses(start: Pose, xi: Twist, ts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Poses of start o exp(xi * t) for an array of times ts (...,)."""
    ts = np.asarray(ts, dtype=np.float64)
    scaled = ts[..., None] * xi.vec()
    R, t = pose_exp_batch(scaled)
    Rw = np.einsum("ij,...jk->...ik", start.rotation, R)
    tw = np.einsum("ij,...j->...i", start.rotation, t) + start.translation
    return Rw, tw
