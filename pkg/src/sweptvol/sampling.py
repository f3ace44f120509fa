"""Point sampling utilities: farthest point sampling, hull surface sampling,
and vectorized point-to-convex-part signed distances.
"""
from __future__ import annotations

import numpy as np

from .convex import ConvexPart
from .se3 import Pose


def farthest_point_sampling(points: np.ndarray, n: int, seed: int) -> np.ndarray:
    """Greedy max-min point selection.

    The first index is drawn uniformly from the seed; each later pick
    maximizes the distance to the already-selected set, ties resolved to the
    lowest index.  Returns indices, deterministic in (points, n, seed).
    """
    pts = np.asarray(points, dtype=np.float64)
    m = len(pts)
    if n < 1 or n > m:
        raise ValueError(f"n must be in [1, {m}], got {n}")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(m))
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = first
    dmin = np.linalg.norm(pts - pts[first], axis=1)
    for k in range(1, n):
        nxt = int(np.argmax(dmin))
        chosen[k] = nxt
        np.minimum(dmin, np.linalg.norm(pts - pts[nxt], axis=1), out=dmin)
    return chosen


def hull_triangles(part: ConvexPart) -> tuple[np.ndarray, np.ndarray]:
    """Hull triangle vertex coordinates (T, 3, 3) and areas (T,); cached."""
    if part._tris is None:
        hull = part.hull()
        tris = part.vertices[hull.simplices]
        e1 = tris[:, 1] - tris[:, 0]
        e2 = tris[:, 2] - tris[:, 0]
        areas = 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)
        part._tris = (tris, areas)
    return part._tris


def sample_on_triangles(tris: np.ndarray, areas: np.ndarray, n: int,
                        rng: np.random.Generator) -> np.ndarray:
    """Area-stratified uniform samples on a triangle set.

    Counts are allocated proportionally to area with largest-remainder
    rounding so coverage stays uniform even for small n.
    """
    if n <= 0:
        return np.zeros((0, 3))
    total = areas.sum()
    if total <= 0:
        raise ValueError("degenerate triangle set")
    quota = areas / total * n
    counts = np.floor(quota).astype(np.int64)
    short = n - counts.sum()
    if short > 0:
        rem = quota - counts
        counts[np.argsort(-rem, kind="stable")[:short]] += 1
    out = np.empty((n, 3))
    pos = 0
    for t_idx in np.nonzero(counts)[0]:
        c = counts[t_idx]
        r1 = np.sqrt(rng.random(c))
        r2 = rng.random(c)
        a, b, cc = tris[t_idx]
        out[pos:pos + c] = ((1 - r1)[:, None] * a
                            + (r1 * (1 - r2))[:, None] * b
                            + (r1 * r2)[:, None] * cc)
        pos += c
    return out


def part_face_planes(part: ConvexPart) -> tuple[np.ndarray, np.ndarray]:
    """Hull half-space form (A, b) with A x + b <= 0 inside; cached."""
    if part._planes is None:
        eq = part.hull().equations
        part._planes = (np.ascontiguousarray(eq[:, :3]), np.ascontiguousarray(eq[:, 3]))
    return part._planes


def points_plane_margin(points: np.ndarray, part: ConvexPart) -> np.ndarray:
    """max_f (A_f x + b_f): negative strictly inside, exact inner distance."""
    A, b = part_face_planes(part)
    return (points @ A.T + b).max(axis=1)


def _point_triangle_distance(points: np.ndarray, tris: np.ndarray) -> np.ndarray:
    """Min distance from each point to a triangle set; fully vectorized.

    points (P, 3), tris (T, 3, 3) -> (P,).
    """
    P = points[:, None, :]                      # (P, 1, 3)
    a = tris[None, :, 0, :]
    b = tris[None, :, 1, :]
    c = tris[None, :, 2, :]
    ab = b - a
    ac = c - a
    ap = P - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = P - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = P - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    # Region tests, resolved in priority order via masks.
    safe = lambda num, den: num / np.where(np.abs(den) < 1e-300, 1.0, den)

    t_edge_ab = np.clip(safe(d1, d1 - d3), 0.0, 1.0)
    t_edge_ac = np.clip(safe(d2, d2 - d6), 0.0, 1.0)
    t_edge_bc = np.clip(safe(d4 - d3, (d4 - d3) + (d5 - d6)), 0.0, 1.0)

    denom = va + vb + vc
    v_in = safe(vb, denom)
    w_in = safe(vc, denom)
    closest_face = a + v_in[..., None] * ab + w_in[..., None] * ac

    cand_a = a
    cand_b = b
    cand_c = c
    cand_ab = a + t_edge_ab[..., None] * ab
    cand_ac = a + t_edge_ac[..., None] * ac
    cand_bc = b + t_edge_bc[..., None] * (c - b)

    in_a = (d1 <= 0) & (d2 <= 0)
    in_b = (d3 >= 0) & (d4 <= d3)
    in_c = (d6 >= 0) & (d5 <= d6)
    in_ab = (~in_a) & (~in_b) & (~in_c) & (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    in_ac = (~in_a) & (~in_b) & (~in_c) & (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    in_bc = (~in_a) & (~in_b) & (~in_c) & (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)

    closest = closest_face
    for mask, cand in ((in_bc, cand_bc), (in_ac, cand_ac), (in_ab, cand_ab),
                       (in_c, cand_c), (in_b, cand_b), (in_a, cand_a)):
        closest = np.where(mask[..., None], cand, closest)
    d = np.linalg.norm(P - closest, axis=-1)
    return d.min(axis=1)


def points_to_part_sdf(points: np.ndarray, part: ConvexPart,
                       pose: Pose | None = None) -> np.ndarray:
    """Signed distance of world points to a posed convex part (negative inside)."""
    pts = np.asarray(points, dtype=np.float64)
    if pose is not None:
        pts = (pts - pose.translation) @ pose.rotation
    margin = points_plane_margin(pts, part)
    inside = margin <= 0.0
    out = margin.copy()
    if np.any(~inside):
        tris, _ = hull_triangles(part)
        out[~inside] = _point_triangle_distance(pts[~inside], tris)
    return out
