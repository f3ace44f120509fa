"""Ground-truth swept-volume labels.

oracle_dense: exact convex penetration queries on a dense time grid with
golden-section refinement; bounding-sphere gaps prune grid times that provably
cannot contain the minimum, so the result matches an unpruned sweep.

oracle_implicit: the point-sampled implicit-function method; static surface
points minimize the moving shape's signed distance over time, refined
per-point.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import (epa_penetration_posed, gjk_distance_posed,
                     signed_distance_posed)
from .sampling import points_to_part_sdf
from .se3 import Pose
from .shapes import ShapeModel, penetration_depth

GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0

DEFAULT_N_T = 257
NEAR_CONTACT_N_T = 2049


@dataclass
class DenseOracleResult:
    max_pen: float          # -min_t signed distance: positive = penetration depth
    t_star: float
    label: bool


class _PosedPair:
    """Static shape posed once; exact signed distance vs the moving shape at
    any pose, with part-pair sphere culling."""

    def __init__(self, a: ShapeModel, pa: Pose, b: ShapeModel):
        self.va = [pa.apply(p.vertices) for p in a.parts]
        self.ca = np.stack([v.mean(axis=0) for v in self.va])
        self.ra = np.array([p.radius for p in a.parts])
        self.b_parts = b.parts
        self.cb = np.stack([p.centroid for p in b.parts])
        self.rb = np.array([p.radius for p in b.parts])

    def signed(self, R: np.ndarray, t: np.ndarray) -> float:
        cb_w = self.cb @ R.T + t
        gaps = (np.linalg.norm(self.ca[:, None, :] - cb_w[None, :, :], axis=-1)
                - self.ra[:, None] - self.rb[None, :])
        order = np.argsort(gaps, axis=None)
        nb = len(self.b_parts)
        best = np.inf
        posed = {}
        for flat in order:
            i, j = divmod(int(flat), nb)
            if gaps[i, j] >= best:
                break
            if j not in posed:
                posed[j] = self.b_parts[j].vertices @ R.T + t
            sd = signed_distance_posed(self.va[i], posed[j])
            best = min(best, sd)
        return float(best)

    def signed_at(self, traj, t: float) -> float:
        pose = traj.eval(t)
        return self.signed(pose.rotation, pose.translation)

    def grid_bounds(self, traj, ts: np.ndarray) -> np.ndarray:
        """Lower bound on the signed distance at each grid time (part-level
        bounding spheres; valid for both signs of the gap)."""
        R, tr = traj.eval_many(ts)
        cb_w = np.einsum("tij,bj->tbi", R, self.cb) + tr[:, None, :]
        d = np.linalg.norm(self.ca[None, :, None, :] - cb_w[:, None, :, :], axis=-1)
        gaps = d - self.ra[None, :, None] - self.rb[None, None, :]
        return gaps.reshape(len(ts), -1).min(axis=1)


def _golden_refine(fn, lo: float, hi: float, tol: float) -> tuple[float, float]:
    """Golden-section minimize fn on [lo, hi] to interval width tol."""
    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1, f2 = fn(x1), fn(x2)
    while hi - lo > tol:
        if f1 <= f2:
            hi, x2, f2 = x2, x1, f1
            x1 = hi - GOLDEN * (hi - lo)
            f1 = fn(x1)
        else:
            lo, x1, f1 = x1, x2, f2
            x2 = lo + GOLDEN * (hi - lo)
            f2 = fn(x2)
    if f1 <= f2:
        return x1, f1
    return x2, f2


def oracle_dense(a: ShapeModel, pa: Pose, b: ShapeModel, traj,
                 n_t: int = DEFAULT_N_T, refine_tol: float = 1e-5) -> DenseOracleResult:
    """Dense-grid exact oracle: minimum signed shape distance over the sweep.

    Grid times whose part-level sphere bound cannot beat the running minimum
    are skipped; the skipping never changes the reported extremum.
    """
    if n_t < 2:
        raise ValueError("n_t must be >= 2")
    ts = np.linspace(0.0, 1.0, n_t)
    pair = _PosedPair(a, pa, b)
    bound = pair.grid_bounds(traj, ts)

    order = np.argsort(bound, kind="stable")
    best = np.inf
    best_t = float(ts[order[0]])
    for k in order:
        if bound[k] >= best:
            break
        val = pair.signed_at(traj, float(ts[k]))
        if val < best:
            best = val
            best_t = float(ts[k])

    dt = ts[1] - ts[0]
    lo = max(0.0, best_t - dt)
    hi = min(1.0, best_t + dt)
    t_ref, v_ref = _golden_refine(lambda t: pair.signed_at(traj, t),
                                  lo, hi, refine_tol)
    if v_ref < best:
        best, best_t = v_ref, t_ref
    return DenseOracleResult(max_pen=-best, t_star=best_t, label=best < 0.0)


def closest_approach_vector(a: ShapeModel, pa: Pose, b: ShapeModel, traj,
                            n_t: int = DEFAULT_N_T) -> tuple[float, float, np.ndarray]:
    """Signed minimum over the sweep plus the static-shape translation that
    would close (or just open) the gap at the critical time.

    Returns (signed_min, t_star, delta): translating the static shape by delta
    turns the configuration into a touching contact at t_star.
    """
    res = oracle_dense(a, pa, b, traj, n_t)
    t = res.t_star
    pose_b = traj.eval(t)
    va = [pa.apply(p.vertices) for p in a.parts]
    vb = [pose_b.apply(p.vertices) for p in b.parts]
    best = None
    for i, xa in enumerate(va):
        for j, xb in enumerate(vb):
            d, wa, wb = gjk_distance_posed(xa, xb)
            if d > 0.0:
                if best is None or d < best[0]:
                    best = (d, wb - wa)
            else:
                depth, dirn = epa_penetration_posed(xa, xb)
                if best is None or -depth < best[0]:
                    best = (-depth, -depth * dirn)
    signed, delta = best
    return float(signed), float(t), np.asarray(delta)


@dataclass
class ImplicitOracleResult:
    max_pen: float
    label: bool


def _moving_sdf(points_w: np.ndarray, b: ShapeModel, R: np.ndarray,
                t: np.ndarray) -> np.ndarray:
    """Union signed distance of world points to the moving shape at pose (R, t)."""
    body = (points_w - t) @ R
    out = np.full(len(body), np.inf)
    for part in b.parts:
        np.minimum(out, points_to_part_sdf(body, part), out=out)
    return out


def oracle_implicit(a: ShapeModel, pa: Pose, b: ShapeModel, traj,
                    n_points: int = 2048, n_t: int = 65,
                    refine_iters: int = 26) -> ImplicitOracleResult:
    """Implicit-function oracle: per static surface point, minimize the moving
    shape's signed distance over time; report the most negative value.

    Points are a prefix of the shape's surface stream, so enlarging n_points
    only adds candidates (the reported penetration never decreases).
    """
    if n_points < 1:
        raise ValueError("n_points must be >= 1")
    pts = a.surface[: min(n_points, len(a.surface))]
    pts_w = pa.apply(pts)
    P = len(pts_w)

    ts = np.linspace(0.0, 1.0, n_t)
    R, tr = traj.eval_many(ts)
    vals = np.empty((n_t, P))
    for k in range(n_t):
        vals[k] = _moving_sdf(pts_w, b, R[k], tr[k])
    kmin = vals.argmin(axis=0)
    vmin = vals[kmin, np.arange(P)]

    # Vectorized per-point golden refinement around each grid minimum.
    dt = ts[1] - ts[0] if n_t > 1 else 1.0
    lo = np.clip(ts[kmin] - dt, 0.0, 1.0)
    hi = np.clip(ts[kmin] + dt, 0.0, 1.0)

    def eval_at(tq: np.ndarray) -> np.ndarray:
        Rq, trq = traj.eval_many(tq)
        body = np.einsum("pji,pj->pi", Rq, pts_w - trq)
        out = np.full(P, np.inf)
        for part in b.parts:
            np.minimum(out, points_to_part_sdf(body, part), out=out)
        return out

    x1 = hi - GOLDEN * (hi - lo)
    x2 = lo + GOLDEN * (hi - lo)
    f1 = eval_at(x1)
    f2 = eval_at(x2)
    for _ in range(refine_iters):
        take1 = f1 <= f2
        hi = np.where(take1, x2, hi)
        lo = np.where(take1, lo, x1)
        x1n = hi - GOLDEN * (hi - lo)
        x2n = lo + GOLDEN * (hi - lo)
        # Reuse the surviving interior sample; evaluate only the fresh one.
        x1_new = np.where(take1, x1n, x2)
        f1_new = np.where(take1, np.nan, f2)
        x2_new = np.where(take1, x1, x2n)
        f2_new = np.where(take1, f1, np.nan)
        miss1 = np.isnan(f1_new)
        f1_eval = eval_at(x1_new)
        f2_eval = eval_at(x2_new)
        f1 = np.where(miss1, f1_eval, f1_new)
        f2 = np.where(~miss1, f2_eval, f2_new)
        x1, x2 = x1_new, x2_new
    refined = np.minimum(np.minimum(f1, f2), vmin)
    best = float(refined.min())
    return ImplicitOracleResult(max_pen=-best, label=best < 0.0)
