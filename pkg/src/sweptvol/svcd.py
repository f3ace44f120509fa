"""Two-phase swept-volume collision detector.

Broad phase: per pair of bounding spheres, minimize the center gap over the
trajectory (multi-start guarded Newton on the squared distance) and keep the
pairs whose swept spheres overlap.  Narrow phase: linearize the trajectory at
each pair's critical time and score the pair with the learned decoder; the
shape-level answer is the max-pooled logit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import nnet
from .latent import DistributedRepr
from .params import Checkpoint
from .se3 import Pose, Twist, pose_exp_batch
from .traj import LinearTwistSegment, SplineTrajectory

NEG_INF = float("-inf")

GRID_SAMPLES = 17
NEWTON_STARTS = 3
NEWTON_ITERS = 20
NEWTON_DT_TOL = 1e-8
NEWTON_FD_H = 1e-5


@dataclass
class CandidateSet:
    """Broad-phase survivors sorted by ascending gap (all gaps negative)."""

    i: np.ndarray         # index into the static representation
    j: np.ndarray         # index into the moving representation
    t_dagger: np.ndarray
    gap: np.ndarray

    def __len__(self):
        return len(self.i)

    @staticmethod
    def empty() -> "CandidateSet":
        z = np.zeros(0)
        return CandidateSet(z.astype(int), z.astype(int), z.copy(), z.copy())


@dataclass
class SvcdResult:
    logit: float
    probability: float
    argmax_pair: tuple[int, int, float] | None
    per_pair_logits: np.ndarray | None = None


def _sigmoid(x: float) -> float:
    if x == NEG_INF:
        return 0.0
    return float(1.0 / (1.0 + np.exp(-x)))


def _traj_eval_fn(traj):
    """(ts, sel) -> world points of given moving-rep coordinates.

    Returns a closure f(ts, q) where ts is any-shaped times and q matching
    (..., 3) body points; sel is unused for single trajectories.
    """
    def f(ts, q):
        R, t = traj.eval_many(ts, clamp=False) if isinstance(traj, LinearTwistSegment) \
            else traj.eval_many(ts)
        return np.einsum("...ij,...j->...i", R, q) + t
    return f


def _segment_points(starts_R, starts_t, xis, ts, sel, q):
    """Batched segment evaluation: world points of body coords q at times ts.

    ts, sel, q share a leading shape; sel indexes the segment batch.
    """
    scaled = ts[..., None] * xis[sel]
    R, t = pose_exp_batch(scaled)
    SR = starts_R[sel]
    St = starts_t[sel]
    Rw = SR @ R
    tw = np.einsum("...ij,...j->...i", SR, t) + St
    return np.einsum("...ij,...j->...i", Rw, q) + tw


def newton_min_gap(point_fn, p_static, q_mov, r_sum, t0):
    """Guarded Newton on squared center distance from multiple starts.

    point_fn(ts) -> world positions of q_mov at times ts (vectorized).
    t0 (..., S) are the starts.  Returns (t_best, gap_best) using the best of
    all refined starts, evaluated exactly at the final times.
    """
    t = np.array(t0, dtype=np.float64)

    def g(ts):
        w = point_fn(ts)
        d = w - p_static[..., None, :]
        return (d * d).sum(-1)

    for _ in range(NEWTON_ITERS):
        tc = np.clip(t, NEWTON_FD_H, 1.0 - NEWTON_FD_H)
        g0 = g(tc)
        gp = g(tc + NEWTON_FD_H)
        gm = g(tc - NEWTON_FD_H)
        grad = (gp - gm) / (2.0 * NEWTON_FD_H)
        curv = (gp - 2.0 * g0 + gm) / (NEWTON_FD_H * NEWTON_FD_H)
        ok = curv > 1e-12
        step = np.where(ok, -grad / np.where(ok, curv, 1.0), -np.sign(grad) * 0.05)
        t_new = np.clip(t + step, 0.0, 1.0)
        if np.abs(t_new - t).max() < NEWTON_DT_TOL:
            t = t_new
            break
        t = t_new

    vals = g(t)
    k = np.argmin(vals, axis=-1)
    t_best = np.take_along_axis(t, k[..., None], axis=-1)[..., 0]
    v_best = np.take_along_axis(vals, k[..., None], axis=-1)[..., 0]
    return t_best, np.sqrt(v_best) - r_sum


def min_gap_over_time(traj, p_static, p_mov, r_static, r_mov):
    """Spec equation for one sphere pair: min_t dist(p_s, tau(t) p_m) - r_s - r_m.

    Multi-start guarded Newton seeded with the best grid samples; used
    directly by the broad phase and by the grid-oracle acceptance check.
    """
    f = _traj_eval_fn(traj)
    q = np.asarray(p_mov, dtype=np.float64)
    p = np.asarray(p_static, dtype=np.float64)
    ts = np.linspace(0.0, 1.0, GRID_SAMPLES)
    w = f(ts, np.broadcast_to(q, (GRID_SAMPLES, 3)))
    d2 = ((w - p) ** 2).sum(-1)
    starts = ts[np.argsort(d2)[:NEWTON_STARTS]]
    point_fn = lambda tt: f(tt, np.broadcast_to(q, tt.shape + (3,)))
    t_best, gap = newton_min_gap(point_fn, p, q, r_static + r_mov, starts[None, :])
    t_grid = ts[int(np.argmin(d2))]
    gap_grid = float(np.sqrt(d2.min())) - (r_static + r_mov)
    if gap_grid < gap[0]:
        return float(t_grid), float(gap_grid)
    return float(t_best[0]), float(gap[0])


def _broad_phase_core(eval_pts, xi_speed_bound, zs, zm, top_m, prune):
    """Shared broad phase over one trajectory.

    eval_pts(ts, q) evaluates moving body points; xi_speed_bound(q_norm) bounds
    point speed for safe Lipschitz pruning of clearly-positive pairs.
    """
    ps = zs.points
    pm = zm.points
    ns, nm = len(ps), len(pm)
    rsum = zs.radii[:, None] + zm.radii[None, :]

    ts = np.linspace(0.0, 1.0, GRID_SAMPLES)
    w = eval_pts(ts[:, None].repeat(nm, axis=1), np.broadcast_to(pm, (GRID_SAMPLES, nm, 3)))
    diff = ps[None, :, None, :] - w[:, None, :, :]
    d2 = (diff * diff).sum(-1)                       # (T, ns, nm)
    dmin_idx = d2.argmin(axis=0)
    dmin = np.sqrt(np.take_along_axis(d2, dmin_idx[None], axis=0)[0])
    gaps_grid = dmin - rsum

    if prune:
        # Between grid samples the center distance moves at most
        # speed * dt / 2, so pairs above that margin stay positive.
        margin = xi_speed_bound(np.linalg.norm(pm, axis=1)) * (ts[1] - ts[0]) * 0.5
        candidate_mask = gaps_grid < margin[None, :]
    else:
        candidate_mask = np.ones_like(gaps_grid, dtype=bool)

    si, sj = np.nonzero(candidate_mask)
    if len(si) == 0:
        return CandidateSet.empty()

    order3 = np.argsort(d2[:, si, sj], axis=0)[:NEWTON_STARTS].T   # (S, 3)
    t0 = ts[order3]
    q = pm[sj]
    p = ps[si]

    def point_fn(tt):
        return eval_pts(tt, np.broadcast_to(q[:, None, :], tt.shape + (3,)))

    t_best, gap = newton_min_gap(point_fn, p, q, rsum[si, sj], t0)
    # Keep whichever of grid / Newton is lower (Newton can stall on plateaus).
    grid_best_t = ts[dmin_idx[si, sj]]
    grid_gap = gaps_grid[si, sj]
    use_grid = grid_gap < gap
    t_best = np.where(use_grid, grid_best_t, t_best)
    gap = np.where(use_grid, grid_gap, gap)

    neg = gap < 0.0
    si, sj, t_best, gap = si[neg], sj[neg], t_best[neg], gap[neg]
    if len(si) == 0:
        return CandidateSet.empty()
    order = np.argsort(gap, kind="stable")[:top_m]
    return CandidateSet(si[order], sj[order], t_best[order], gap[order])


def _speed_bound_fn(traj):
    """Conservative bound on |d/dt tau(t) q| as a function of |q|."""
    if isinstance(traj, LinearTwistSegment):
        v = np.linalg.norm(traj.xi.linear)
        w = np.linalg.norm(traj.xi.angular)
        return lambda qn: v + w * qn
    tt = np.linspace(0.0, 1.0, 33)
    xis = np.stack([traj.velocity(t).vec() for t in tt])
    v = np.linalg.norm(xis[:, :3], axis=1).max()
    w = np.linalg.norm(xis[:, 3:], axis=1).max()
    # Sampled bound; inflate for inter-sample wiggle of the spline derivative.
    return lambda qn: 2.0 * (v + w * qn)


def broad_phase(zs: DistributedRepr, zm: DistributedRepr, traj, top_m: int,
                prune: bool = True) -> CandidateSet:
    """Sphere-sweep candidate pairs (i, j, t_dagger, gap), ascending gap."""
    if top_m < 1:
        raise ValueError("top_m must be >= 1")
    return _broad_phase_core(_traj_eval_fn(traj), _speed_bound_fn(traj),
                             zs, zm, top_m, prune)


# ---------------------------------------------------------------------------
# Narrow phase.
# ---------------------------------------------------------------------------

def _check_compat(zs: DistributedRepr, zm: DistributedRepr, ckpt: Checkpoint):
    width = nnet.phi_feature_width(zs.channels)
    if zs.channels != zm.channels:
        raise ValueError("representation channel counts differ")
    if width != ckpt.decoder.in_width:
        raise ValueError(
            f"checkpoint/architecture mismatch: decoder expects input width "
            f"{ckpt.decoder.in_width}, representations give {width}")


def _decoder_tensors(ckpt: Checkpoint):
    Ws = [nnet.to_t(W) for W in ckpt.decoder.weights]
    bs = [nnet.to_t(b) for b in ckpt.decoder.biases]
    return Ws, bs


def decode_logits(ckpt: Checkpoint, zs: DistributedRepr, zm: DistributedRepr,
                  idx_i: np.ndarray, idx_j: np.ndarray,
                  R_t: np.ndarray, t_t: np.ndarray, xis: np.ndarray) -> np.ndarray:
    """Decoder logits for candidate pairs at given moving poses and twists."""
    _check_compat(zs, zm, ckpt)
    Rt = nnet.to_t(R_t)
    tt = nnet.to_t(t_t)
    p1 = nnet.to_t(zs.points[idx_i])
    z1 = nnet.to_t(zs.latents[idx_i])
    pj = nnet.to_t(zm.points[idx_j])
    zj = nnet.to_t(zm.latents[idx_j])
    p2 = (Rt @ pj[..., None])[..., 0] + tt
    z2 = nnet.rotate_latent_t(Rt, zj)
    feats = nnet.preprocess_phi_t(p1, z1, p2, z2, nnet.to_t(xis), Rt, tt)
    Ws, bs = _decoder_tensors(ckpt)
    with torch.no_grad():
        out = nnet.decoder_forward(Ws, bs, feats)
    return out.numpy().reshape(np.shape(idx_i))


def decode_pair(p_i, z_i, p_j, z_j, pose_t: Pose, xi: Twist,
                ckpt: Checkpoint) -> float:
    """Score one candidate: moving-side (p_j, z_j) is transformed by pose_t,
    then the invariant features feed the MLP."""
    Rt = nnet.to_t(pose_t.rotation)
    tt = nnet.to_t(pose_t.translation)
    p2 = (Rt @ nnet.to_t(p_j)) + tt
    z2 = nnet.rotate_latent_t(Rt, nnet.to_t(z_j))
    feats = nnet.preprocess_phi_t(
        nnet.to_t(p_i), nnet.to_t(z_i), p2, z2,
        nnet.to_t(xi.vec()), Rt, tt)
    Ws, bs = _decoder_tensors(ckpt)
    with torch.no_grad():
        out = nnet.decoder_forward(Ws, bs, feats)
    return float(out)


def _result_from_logits(cand: CandidateSet, logits: np.ndarray,
                        keep_logits: bool) -> SvcdResult:
    if len(cand) == 0:
        return SvcdResult(NEG_INF, 0.0, None,
                          np.zeros(0) if keep_logits else None)
    k = int(np.argmax(logits))
    logit = float(logits[k])
    return SvcdResult(logit, _sigmoid(logit),
                      (int(cand.i[k]), int(cand.j[k]), float(cand.t_dagger[k])),
                      logits.copy() if keep_logits else None)


def svcd(zs: DistributedRepr, zm: DistributedRepr, traj, top_m: int,
         ckpt: Checkpoint, keep_logits: bool = False) -> SvcdResult:
    """Full detector: broad phase, local linearization, decode, max-pool."""
    _check_compat(zs, zm, ckpt)
    cand = broad_phase(zs, zm, traj, top_m)
    if len(cand) == 0:
        return _result_from_logits(cand, np.zeros(0), keep_logits)
    poses = [traj.eval(t) for t in cand.t_dagger]
    xis = np.stack([traj.velocity(t).vec() for t in cand.t_dagger])
    R_t = np.stack([p.rotation for p in poses])
    t_t = np.stack([p.translation for p in poses])
    logits = decode_logits(ckpt, zs, zm, cand.i, cand.j, R_t, t_t, xis)
    return _result_from_logits(cand, logits, keep_logits)


def svcd_discrete(zs: DistributedRepr, zm: DistributedRepr, traj,
                  n_waypoints: int, ckpt: Checkpoint,
                  top_m: int | None = None,
                  keep_logits: bool = False) -> SvcdResult:
    """Waypoint variant: static sphere checks and zero-twist decodes at n
    uniform times, max-pooled over waypoints and pairs."""
    _check_compat(zs, zm, ckpt)
    if n_waypoints < 1:
        raise ValueError("need n_waypoints >= 1")
    if n_waypoints == 1:
        ts = np.array([0.0])
    else:
        ts = np.linspace(0.0, 1.0, n_waypoints)
    Rw, tw = traj.eval_many(ts) if not isinstance(traj, LinearTwistSegment) \
        else traj.eval_many(ts)
    pm_w = np.einsum("tij,mj->tmi", Rw, zm.points) + tw[:, None, :]
    diff = zs.points[None, :, None, :] - pm_w[:, None, :, :]
    gaps = np.sqrt((diff * diff).sum(-1)) - (zs.radii[:, None] + zm.radii[None, :])[None]
    wk, si, sj = np.nonzero(gaps < 0.0)
    if len(wk) == 0:
        return _result_from_logits(CandidateSet.empty(), np.zeros(0), keep_logits)
    g = gaps[wk, si, sj]
    order = np.argsort(g, kind="stable")
    if top_m is not None:
        order = order[:top_m * n_waypoints]
    wk, si, sj, g = wk[order], si[order], sj[order], g[order]
    cand = CandidateSet(si, sj, ts[wk], g)
    xis = np.zeros((len(wk), 6))
    logits = decode_logits(ckpt, zs, zm, si, sj, Rw[wk], tw[wk], xis)
    return _result_from_logits(cand, logits, keep_logits)


def svcd_batch(items, top_m: int, ckpt: Checkpoint) -> list[SvcdResult]:
    """Batch query surface: sequence of (static repr, moving repr, trajectory)."""
    return [svcd(zs, zm, traj, top_m, ckpt) for (zs, zm, traj) in items]


def segment_logits_batch(zs: DistributedRepr, zm: DistributedRepr,
                         starts_R: np.ndarray, starts_t: np.ndarray,
                         xis: np.ndarray, top_m: int, ckpt: Checkpoint,
                         want_candidates: bool = False):
    """Max-pooled logits for B constant-twist segments against one scene pair.

    Vectorizes the broad phase across segments and runs one decoder batch; the
    planner's sampling loop lives on this path.  Returns logits (B,) with
    -inf for segments with no candidates (and optionally the per-segment
    candidate arrays for gradient replays).
    """
    _check_compat(zs, zm, ckpt)
    B = len(xis)
    ps, pm = zs.points, zm.points
    ns, nm = len(ps), len(pm)
    rsum = zs.radii[:, None] + zm.radii[None, :]

    ts = np.linspace(0.0, 1.0, GRID_SAMPLES)
    scaled = ts[None, :, None] * xis[:, None, :]                 # (B, T, 6)
    R, t = pose_exp_batch(scaled)
    Rw = starts_R[:, None] @ R
    tw = np.einsum("bij,btj->bti", starts_R, t) + starts_t[:, None, :]
    w = np.einsum("btij,mj->btmi", Rw, pm) + tw[:, :, None, :]   # (B, T, nm, 3)
    diff = ps[None, None, :, None, :] - w[:, :, None, :, :]
    d2 = (diff * diff).sum(-1)                                   # (B, T, ns, nm)
    gaps_grid = np.sqrt(d2.min(axis=1)) - rsum[None]

    speed = (np.linalg.norm(xis[:, :3], axis=1)[:, None]
             + np.linalg.norm(xis[:, 3:], axis=1)[:, None] * np.linalg.norm(pm, axis=1)[None, :])
    margin = speed * (ts[1] - ts[0]) * 0.5                        # (B, nm)
    sb, si, sj = np.nonzero(gaps_grid < margin[:, None, :])
    logits = np.full(B, NEG_INF)
    cands = [None] * B
    if len(sb) == 0:
        return (logits, cands) if want_candidates else logits

    order3 = np.argsort(d2[sb, :, si, sj], axis=1)[:, :NEWTON_STARTS]
    t0 = ts[order3]
    q = pm[sj]
    p = ps[si]

    def point_fn(tt):
        return _segment_points(starts_R, starts_t, xis, tt,
                               sb[:, None].repeat(tt.shape[1], axis=1),
                               np.broadcast_to(q[:, None, :], tt.shape + (3,)))

    t_best, gap = newton_min_gap(point_fn, p, q, rsum[si, sj], t0)
    grid_idx = d2[sb, :, si, sj].argmin(axis=1)
    grid_gap = gaps_grid[sb, si, sj]
    use_grid = grid_gap < gap
    t_best = np.where(use_grid, ts[grid_idx], t_best)
    gap = np.where(use_grid, grid_gap, gap)

    neg = gap < 0.0
    sb, si, sj, t_best, gap = sb[neg], si[neg], sj[neg], t_best[neg], gap[neg]
    if len(sb) == 0:
        return (logits, cands) if want_candidates else logits

    # Per-segment top_m truncation.
    keep = np.zeros(len(sb), dtype=bool)
    for b in np.unique(sb):
        rows = np.nonzero(sb == b)[0]
        best = rows[np.argsort(gap[rows], kind="stable")[:top_m]]
        keep[best] = True
    sb, si, sj, t_best = sb[keep], si[keep], sj[keep], t_best[keep]

    scaled = t_best[:, None] * xis[sb]
    Rl, tl = pose_exp_batch(scaled)
    R_t = starts_R[sb] @ Rl
    t_t = np.einsum("kij,kj->ki", starts_R[sb], tl) + starts_t[sb]
    lg = decode_logits(ckpt, zs, zm, si, sj, R_t, t_t, xis[sb])
    np.maximum.at(logits, sb, lg)
    if want_candidates:
        for b in np.unique(sb):
            rows = sb == b
            cands[b] = (si[rows], sj[rows], t_best[rows])
        return logits, cands
    return logits
