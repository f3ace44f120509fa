"""Trajectories on SE(3): constant-twist segments and twist-chart B-splines.

Both kinds answer pose, body-twist, linearization, and discretization queries
on [0,1].  Queries outside [0,1] are clamped.  The spline lives in the twist
chart anchored at its first control pose: eval(t) = anchor o exp(w(t)) with
w(t) a clamped B-spline through the control offsets.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import BSpline

from .se3 import (Pose, Twist, pose_compose, pose_exp, pose_log, pose_relative,
                  segment_poses, skew, pose_exp_batch)


def _clamp01(t):
    return min(1.0, max(0.0, float(t)))


class LinearTwistSegment:
    """Constant body-twist motion: eval(t) = start o exp(xi * t)."""

    __slots__ = ("start", "xi")

    def __init__(self, start: Pose, xi: Twist):
        self.start = start
        self.xi = xi

    def eval(self, t: float) -> Pose:
        return pose_compose(self.start, pose_exp(self.xi, _clamp01(t)))

    def eval_many(self, ts: np.ndarray, clamp: bool = True):
        ts = np.asarray(ts, dtype=np.float64)
        if clamp:
            ts = np.clip(ts, 0.0, 1.0)
        return segment_poses(self.start, self.xi, ts)

    def velocity(self, t: float) -> Twist:
        return self.xi

    def end(self) -> Pose:
        return self.eval(1.0)

    def __repr__(self):
        return f"LinearTwistSegment(|v|={np.linalg.norm(self.xi.linear):.3g}, |w|={np.linalg.norm(self.xi.angular):.3g})"


def _so3_Q_matrix(rho: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """Translation block of the SE(3) left Jacobian (Barfoot's Q)."""
    th = np.linalg.norm(phi)
    rx = skew(rho)
    px = skew(phi)
    pxrx = px @ rx
    rxpx = rx @ px
    pxrxpx = pxrx @ px
    if th < 1e-4:
        # Series to O(th^2); adequate below the switch point.
        c1 = 1.0 / 6.0 - th ** 2 / 120.0
        c2 = -1.0 / 24.0 + th ** 2 / 720.0
        c3 = -1.0 / 60.0 + th ** 2 / 1260.0
    else:
        t2 = th * th
        t3 = t2 * th
        t4 = t3 * th
        t5 = t4 * th
        c1 = (th - np.sin(th)) / t3
        c2 = (1.0 - t2 / 2.0 - np.cos(th)) / t4
        c3 = (c2 - 3.0 * (th - np.sin(th) - t3 / 6.0) / t5)
    Q = (0.5 * rx
         + c1 * (pxrx + rxpx + px @ rx @ px)
         - c2 * (px @ pxrx + rxpx @ px - 3.0 * px @ rx @ px)
         - 0.5 * c3 * (px @ rx @ px @ px + px @ px @ rx @ px))
    return Q


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """6x6 left Jacobian of the SE(3) exponential, twist order (v, w)."""
    from .se3 import _so3_left_jacobian

    xi = np.asarray(xi, dtype=np.float64).reshape(6)
    rho, phi = xi[:3], xi[3:]
    J = _so3_left_jacobian(phi)
    Q = _so3_Q_matrix(rho, phi)
    out = np.zeros((6, 6))
    out[:3, :3] = J
    out[:3, 3:] = Q
    out[3:, 3:] = J
    return out


def se3_right_jacobian(xi: np.ndarray) -> np.ndarray:
    """Right Jacobian: d/ds log(exp(xi)^{-1} exp(xi + s delta)) = J_r delta."""
    return se3_left_jacobian(-np.asarray(xi, dtype=np.float64))


class SplineTrajectory:
    """Clamped B-spline in the twist chart of the first control pose.

    Control poses P_k are stored as the anchor P_0 plus offsets
    c_k = log(P_0^{-1} P_k); eval(t) = P_0 o exp(sum_k B_k(t) c_k).  The knot
    vector is clamped so eval(0) and eval(1) interpolate the end poses.  The
    degree drops below 3 automatically when fewer than 4 control poses are
    given.
    """

    __slots__ = ("anchor", "offsets", "degree", "_spline", "_dspline")

    def __init__(self, control, degree: int = 3):
        if len(control) < 2:
            raise ValueError("need at least 2 control poses")
        first = control[0]
        if isinstance(first, Pose):
            anchor = control[0]
            offsets = np.stack([pose_log(pose_relative(anchor, p)).vec() for p in control])
        else:
            raise TypeError("control must be a sequence of Pose")
        self._init_from(anchor, offsets, degree)

    @classmethod
    def from_chart(cls, anchor: Pose, offsets: np.ndarray, degree: int = 3) -> "SplineTrajectory":
        """Build directly from chart offsets (M, 6); offsets[0] should be 0."""
        obj = cls.__new__(cls)
        obj._init_from(anchor, np.asarray(offsets, dtype=np.float64), degree)
        return obj

    def _init_from(self, anchor, offsets, degree):
        m = len(offsets)
        deg = min(degree, m - 1)
        knots = np.concatenate([np.zeros(deg), np.linspace(0.0, 1.0, m - deg + 1), np.ones(deg)])
        self.anchor = anchor
        self.offsets = np.asarray(offsets, dtype=np.float64).reshape(m, 6)
        self.degree = deg
        self._spline = BSpline(knots, self.offsets, deg, extrapolate=False)
        self._dspline = self._spline.derivative()

    @property
    def control_poses(self):
        return [pose_compose(self.anchor, pose_exp(Twist.from_vec(c))) for c in self.offsets]

    def chart(self, t) -> np.ndarray:
        t = np.clip(t, 0.0, 1.0)
        return self._spline(t)

    def chart_velocity(self, t) -> np.ndarray:
        t = np.clip(t, 0.0, 1.0)
        return self._dspline(t)

    def eval(self, t: float) -> Pose:
        w = self.chart(_clamp01(t))
        return pose_compose(self.anchor, pose_exp(Twist.from_vec(w)))

    def eval_many(self, ts: np.ndarray, clamp: bool = True):
        ts = np.asarray(ts, dtype=np.float64)
        ts = np.clip(ts, 0.0, 1.0)
        w = self._spline(ts.reshape(-1))
        R, p = pose_exp_batch(w)
        A, b = self.anchor.rotation, self.anchor.translation
        Rw = np.einsum("ij,...jk->...ik", A, R)
        pw = p @ A.T + b
        shape = ts.shape
        return Rw.reshape(shape + (3, 3)), pw.reshape(shape + (3,))

    def velocity(self, t: float) -> Twist:
        t = _clamp01(t)
        w = self.chart(t)
        wdot = self.chart_velocity(t)
        return Twist.from_vec(se3_right_jacobian(w) @ wdot)

    def end(self) -> Pose:
        return self.eval(1.0)

    def __repr__(self):
        return f"SplineTrajectory({len(self.offsets)} control, degree {self.degree})"


Trajectory = LinearTwistSegment | SplineTrajectory


def evaluate(traj, t: float) -> Pose:
    return traj.eval(t)


def velocity(traj, t: float) -> Twist:
    return traj.velocity(t)


def linearize(traj, t: float) -> tuple[Pose, Twist]:
    """First-order local model at t: s -> pose o exp(xi * s)."""
    return traj.eval(t), traj.velocity(t)


def discretize(traj, n: int) -> list[Pose]:
    """n poses at uniform parameter values t = k/(n-1)."""
    if n < 2:
        raise ValueError("need n >= 2 waypoints")
    return [traj.eval(k / (n - 1)) for k in range(n)]


def serialize(traj) -> np.ndarray:
    """Flat numeric record: 12 start-pose numbers + M x 6 twist coordinates."""
    if isinstance(traj, LinearTwistSegment):
        return np.concatenate([traj.start.flat(), traj.xi.vec()])
    return np.concatenate([traj.anchor.flat(), traj.offsets.reshape(-1)])


def deserialize(rec: np.ndarray):
    """Inverse of serialize: 12 + 6 numbers -> segment, 12 + 6M -> spline."""
    rec = np.asarray(rec, dtype=np.float64).reshape(-1)
    if len(rec) < 18 or (len(rec) - 12) % 6 != 0:
        raise ValueError(f"bad trajectory record length {len(rec)}")
    start = Pose.from_flat(rec[:12])
    coords = rec[12:].reshape(-1, 6)
    if len(coords) == 1:
        return LinearTwistSegment(start, Twist.from_vec(coords[0]))
    return SplineTrajectory.from_chart(start, coords)
