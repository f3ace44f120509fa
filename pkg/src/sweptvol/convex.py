"""Convex queries over vertex sets: support maps, GJK distance, EPA penetration.

Parts are plain vertex clouds; every query works on the convex hull implied by
the vertices, so degenerate parts (segments, single points) are legal inputs.
The simplex and polytope bookkeeping uses scalar tuple math: these loops sit
under every oracle and baseline, and small-array numpy overhead dominates
otherwise.
"""
from __future__ import annotations

import numpy as np

from .se3 import Pose

GJK_MAX_ITERATIONS = 128
GJK_REL_PROGRESS = 1e-10
EPA_FACE_TOL = 1e-8
EPA_MAX_FACES = 1024


class ConvexQueryError(RuntimeError):
    pass


class ConvexPart:
    """Convex body given by its vertices in the body frame.

    Non-degenerate parts need >= 4 non-coplanar vertices; flag degenerate=True
    for intentional lower-dimensional sets (segments, single points).
    """

    __slots__ = ("vertices", "degenerate", "centroid", "radius", "_hull",
                 "_planes", "_tris")

    def __init__(self, vertices, degenerate: bool = False):
        v = np.ascontiguousarray(np.asarray(vertices, dtype=np.float64))
        if v.ndim != 2 or v.shape[1] != 3 or v.shape[0] < 1:
            raise ValueError("vertices must be (n, 3) with n >= 1")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertices contain non-finite values")
        if not degenerate:
            if v.shape[0] < 4:
                raise ValueError("non-degenerate part needs >= 4 vertices")
            spread = v - v.mean(axis=0)
            if np.linalg.matrix_rank(spread, tol=1e-9) < 3:
                raise ValueError("vertices are coplanar; flag degenerate=True if intended")
        v.flags.writeable = False
        self.vertices = v
        self.degenerate = bool(degenerate)
        self.centroid = v.mean(axis=0)
        self.radius = float(np.linalg.norm(v - self.centroid, axis=1).max())
        self._hull = None
        self._planes = None
        self._tris = None

    def hull(self):
        """scipy ConvexHull of the vertices (cached); requires non-degenerate."""
        if self._hull is None:
            from scipy.spatial import ConvexHull

            self._hull = ConvexHull(self.vertices)
        return self._hull

    def __repr__(self):
        return f"ConvexPart({len(self.vertices)} vertices{', degenerate' if self.degenerate else ''})"


def support(part: ConvexPart, pose: Pose, direction: np.ndarray) -> np.ndarray:
    """Posed vertex maximizing dot(direction, .); ties go to the lowest index."""
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    n = np.linalg.norm(d)
    if n == 0.0 or not np.all(np.isfinite(d)):
        raise ValueError("degenerate direction")
    idx = int(np.argmax(part.vertices @ (pose.rotation.T @ d)))
    return pose.apply(part.vertices[idx])


# ---------------------------------------------------------------------------
# Scalar 3-vector helpers (tuples of floats).
# ---------------------------------------------------------------------------

def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _mul(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0])


def _neg(a):
    return (-a[0], -a[1], -a[2])


# ---------------------------------------------------------------------------
# Closest point to the origin on a simplex, with barycentric coordinates.
# Returns (bary tuple, keep index tuple, contains_origin).
# ---------------------------------------------------------------------------

def _closest_segment(a, b):
    ab = _sub(b, a)
    denom = _dot(ab, ab)
    if denom < 1e-300:
        return (1.0,), (0,)
    t = -_dot(a, ab) / denom
    if t <= 0.0:
        return (1.0,), (0,)
    if t >= 1.0:
        return (1.0,), (1,)
    return (1.0 - t, t), (0, 1)


def _closest_triangle(a, b, c):
    ab = _sub(b, a)
    ac = _sub(c, a)
    d1 = -_dot(ab, a)
    d2 = -_dot(ac, a)
    if d1 <= 0.0 and d2 <= 0.0:
        return (1.0,), (0,)
    d3 = -_dot(ab, b)
    d4 = -_dot(ac, b)
    if d3 >= 0.0 and d4 <= d3:
        return (1.0,), (1,)
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        denom = d1 - d3
        if abs(denom) < 1e-300:
            return (1.0,), (0,)
        v = d1 / denom
        return (1.0 - v, v), (0, 1)
    d5 = -_dot(ab, c)
    d6 = -_dot(ac, c)
    if d6 >= 0.0 and d5 <= d6:
        return (1.0,), (2,)
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        denom = d2 - d6
        if abs(denom) < 1e-300:
            return (1.0,), (0,)
        w = d2 / denom
        return (1.0 - w, w), (0, 2)
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        denom = (d4 - d3) + (d5 - d6)
        if abs(denom) < 1e-300:
            return (1.0,), (1,)
        w = (d4 - d3) / denom
        return (1.0 - w, w), (1, 2)
    denom = va + vb + vc
    if abs(denom) < 1e-300:
        best = None
        pts = (a, b, c)
        for i0, i1 in ((0, 1), (0, 2), (1, 2)):
            bary, keep = _closest_segment(pts[i0], pts[i1])
            idx = (i0, i1)
            pt = (0.0, 0.0, 0.0)
            for w_, k_ in zip(bary, keep):
                pt = _add(pt, _mul(pts[idx[k_]], w_))
            d = _dot(pt, pt)
            if best is None or d < best[0]:
                best = (d, bary, tuple(idx[k_] for k_ in keep))
        return best[1], best[2]
    v = vb / denom
    w = vc / denom
    return (1.0 - v - w, v, w), (0, 1, 2)


def _closest_tetra(pts):
    a, b, c, d = pts

    def _face_away(p0, p1, p2, p3):
        n = _cross(_sub(p1, p0), _sub(p2, p0))
        dv = _dot(n, _sub(p3, p0))
        do = -_dot(n, p0)
        return dv * do < 0.0, abs(dv)

    out_abc, v1 = _face_away(a, b, c, d)
    out_abd, v2 = _face_away(a, b, d, c)
    out_acd, v3 = _face_away(a, c, d, b)
    out_bcd, v4 = _face_away(b, c, d, a)
    flat = max(v1, v2, v3, v4) < 1e-300
    if not flat and not (out_abc or out_abd or out_acd or out_bcd):
        return (0.25, 0.25, 0.25, 0.25), (0, 1, 2, 3), True
    if flat:
        faces = ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3))
    else:
        faces = tuple(f for f, out in (((0, 1, 2), out_abc), ((0, 1, 3), out_abd),
                                       ((0, 2, 3), out_acd), ((1, 2, 3), out_bcd)) if out)
    best = None
    for f in faces:
        bary, keep = _closest_triangle(pts[f[0]], pts[f[1]], pts[f[2]])
        pt = (0.0, 0.0, 0.0)
        for w_, k_ in zip(bary, keep):
            pt = _add(pt, _mul(pts[f[k_]], w_))
        dd = _dot(pt, pt)
        if best is None or dd < best[0]:
            best = (dd, bary, tuple(f[k_] for k_ in keep))
    return best[1], best[2], False


def _simplex_closest(pts):
    n = len(pts)
    if n == 1:
        return (1.0,), (0,), False
    if n == 2:
        bary, keep = _closest_segment(pts[0], pts[1])
        return bary, keep, False
    if n == 3:
        bary, keep = _closest_triangle(pts[0], pts[1], pts[2])
        return bary, keep, False
    return _closest_tetra(pts)


# ---------------------------------------------------------------------------
# GJK distance with witness points.
# ---------------------------------------------------------------------------

def gjk_distance(a: ConvexPart, pa: Pose, b: ConvexPart, pb: Pose):
    """Distance between posed convex parts with witness points.

    Returns (distance, witness_a, witness_b); distance 0 means the hulls
    intersect or touch (witnesses then coincide at a common point).
    """
    va = pa.apply(a.vertices)
    vb = pb.apply(b.vertices)
    return gjk_distance_posed(va, vb)


def gjk_distance_posed(va: np.ndarray, vb: np.ndarray):
    """GJK on pre-posed vertex arrays (fast path used by the sweep loops)."""
    ia = int(np.argmax(va[:, 0]))
    ib = int(np.argmin(vb[:, 0]))
    wa0 = tuple(va[ia])
    wb0 = tuple(vb[ib])
    simplex = [_sub(wa0, wb0)]
    wits_a = [wa0]
    wits_b = [wb0]
    bary = (1.0,)
    scale2 = max(float((va * va).sum(axis=1).max()),
                 float((vb * vb).sum(axis=1).max()), 1.0)
    eps_abs2 = 1e-24 * scale2
    prev_dist2 = np.inf

    def _witnesses():
        pa_w = (0.0, 0.0, 0.0)
        pb_w = (0.0, 0.0, 0.0)
        for t, w1, w2 in zip(bary, wits_a, wits_b):
            pa_w = _add(pa_w, _mul(w1, t))
            pb_w = _add(pb_w, _mul(w2, t))
        return pa_w, pb_w

    for _ in range(GJK_MAX_ITERATIONS):
        v = (0.0, 0.0, 0.0)
        for t, p in zip(bary, simplex):
            v = _add(v, _mul(p, t))
        dist2 = _dot(v, v)
        if dist2 < eps_abs2:
            pa_w, pb_w = _witnesses()
            mid = np.array(_mul(_add(pa_w, pb_w), 0.5))
            return 0.0, mid, mid.copy()
        ia = int(np.argmax(va @ (-np.asarray(v))))
        ib = int(np.argmax(vb @ np.asarray(v)))
        sa = tuple(va[ia])
        sb = tuple(vb[ib])
        s = _sub(sa, sb)
        # distance >= dot(v, s)/|v| for every point of the difference body, so
        # stop once the new support cannot improve the current estimate.
        if dist2 - _dot(v, s) <= GJK_REL_PROGRESS * dist2 + 1e-300:
            break
        if dist2 >= prev_dist2 * (1.0 - GJK_REL_PROGRESS):
            break
        prev_dist2 = dist2
        dup = False
        for p in simplex:
            if p[0] == s[0] and p[1] == s[1] and p[2] == s[2]:
                dup = True
                break
        if dup:
            break
        simplex.append(s)
        wits_a.append(sa)
        wits_b.append(sb)
        bary, keep, contains = _simplex_closest(simplex)
        simplex = [simplex[k] for k in keep]
        wits_a = [wits_a[k] for k in keep]
        wits_b = [wits_b[k] for k in keep]
        if contains:
            pa_w, pb_w = _witnesses()
            mid = np.array(_mul(_add(pa_w, pb_w), 0.5))
            return 0.0, mid, mid.copy()
    else:
        v = (0.0, 0.0, 0.0)
        for t, p in zip(bary, simplex):
            v = _add(v, _mul(p, t))
        raise ConvexQueryError(
            f"GJK did not converge in {GJK_MAX_ITERATIONS} iterations; "
            f"best distance bound {np.sqrt(_dot(v, v)):.6e}")

    pa_w, pb_w = _witnesses()
    diff = _sub(pa_w, pb_w)
    return float(np.sqrt(_dot(diff, diff))), np.array(pa_w), np.array(pb_w)


def gjk_intersecting(va: np.ndarray, vb: np.ndarray) -> bool:
    """Boolean overlap query (cheaper than the distance when only the sign
    of the gap matters)."""
    enclosed, _ = _gjk_enclose(va, vb)
    return enclosed


# ---------------------------------------------------------------------------
# EPA: penetration depth of intersecting hulls.
# ---------------------------------------------------------------------------

def _gjk_enclose(va, vb):
    """GJK variant driving the simplex to enclose the origin.

    Returns (enclosed, simplex points).
    """
    ia = int(np.argmax(va[:, 0]))
    ib = int(np.argmin(vb[:, 0]))
    simplex = [_sub(tuple(va[ia]), tuple(vb[ib]))]
    bary = (1.0,)
    prev_dist2 = np.inf
    for _ in range(GJK_MAX_ITERATIONS):
        v = (0.0, 0.0, 0.0)
        for t, p in zip(bary, simplex):
            v = _add(v, _mul(p, t))
        dist2 = _dot(v, v)
        if dist2 < 1e-24:
            return True, simplex
        if dist2 >= prev_dist2 * (1.0 - GJK_REL_PROGRESS):
            return False, simplex
        prev_dist2 = dist2
        ia = int(np.argmax(va @ (-np.asarray(v))))
        ib = int(np.argmax(vb @ np.asarray(v)))
        s = _sub(tuple(va[ia]), tuple(vb[ib]))
        if dist2 - _dot(v, s) <= GJK_REL_PROGRESS * dist2 + 1e-300:
            return False, simplex
        dup = False
        for p in simplex:
            if p[0] == s[0] and p[1] == s[1] and p[2] == s[2]:
                dup = True
                break
        if dup:
            return False, simplex
        simplex.append(s)
        bary, keep, contains = _simplex_closest(simplex)
        simplex = [simplex[k] for k in keep]
        if contains:
            return True, simplex
    return False, simplex


def _minkowski_support(va, vb, d):
    ia = int(np.argmax(va @ np.asarray(d)))
    ib = int(np.argmax(vb @ (-np.asarray(d))))
    return _sub(tuple(va[ia]), tuple(vb[ib]))


def _expand_to_tetra(simplex, va, vb):
    """Grow a <4-point simplex into a non-degenerate tetrahedron."""
    pts = list(simplex)

    def _try_add(d):
        n2 = _dot(d, d)
        if n2 < 1e-24:
            return
        s = _minkowski_support(va, vb, d)
        for p in pts:
            dd = _sub(s, p)
            if _dot(dd, dd) < 1e-24:
                return
        pts.append(s)

    axes = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))
    if len(pts) == 1:
        for ax in axes:
            _try_add(ax)
            if len(pts) >= 2:
                break
            _try_add(_neg(ax))
            if len(pts) >= 2:
                break
    if len(pts) == 2:
        axis = _sub(pts[1], pts[0])
        k = int(np.argmin(np.abs(axis)))
        ref = [0.0, 0.0, 0.0]
        ref[k] = 1.0
        u = _cross(axis, tuple(ref))
        w = _cross(axis, u)
        for d in (u, _neg(u), w, _neg(w)):
            _try_add(d)
            if len(pts) >= 3:
                break
    if len(pts) == 3:
        n = _cross(_sub(pts[1], pts[0]), _sub(pts[2], pts[0]))
        _try_add(n)
        if len(pts) == 3:
            _try_add(_neg(n))
    if len(pts) < 4:
        return None
    base = pts[:3]
    e1 = _sub(base[1], base[0])
    e2 = _sub(base[2], base[0])
    n = _cross(e1, e2)
    for cand in pts[3:]:
        vol = _dot(n, _sub(cand, base[0]))
        if abs(vol) > 1e-18:
            return base + [cand]
    return None


def epa_penetration_posed(va, vb):
    """EPA on pre-posed vertices; the hulls must intersect.

    Returns (depth, direction): translating the second body by depth*direction
    separates the hulls.
    """
    enclosed, simplex = _gjk_enclose(va, vb)
    if not enclosed:
        raise ConvexQueryError("EPA called on separated shapes")
    if len(simplex) == 4:
        e1 = _sub(simplex[1], simplex[0])
        e2 = _sub(simplex[2], simplex[0])
        e3 = _sub(simplex[3], simplex[0])
        if abs(_dot(_cross(e1, e2), e3)) > 1e-18:
            tet = list(simplex)
        else:
            tet = _expand_to_tetra(simplex[:3], va, vb)
    else:
        tet = _expand_to_tetra(simplex, va, vb)
    if tet is None:
        raise ConvexQueryError("EPA simplex degeneracy")

    verts = list(tet)
    cx = sum(p[0] for p in verts) / 4.0
    cy = sum(p[1] for p in verts) / 4.0
    cz = sum(p[2] for p in verts) / 4.0
    interior = (cx, cy, cz)

    def _make_face(i, j, k):
        pi, pj, pk = verts[i], verts[j], verts[k]
        n = _cross(_sub(pj, pi), _sub(pk, pi))
        nn2 = _dot(n, n)
        if nn2 < 1e-28:
            return None
        inv = 1.0 / np.sqrt(nn2)
        n = _mul(n, inv)
        if _dot(n, _sub(pi, interior)) < 0.0:
            n = _neg(n)
            j, k = k, j
        return (i, j, k, n, _dot(n, pi))

    faces = []
    for tri in ((0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)):
        f = _make_face(*tri)
        if f is None:
            raise ConvexQueryError("EPA simplex degeneracy")
        faces.append(f)

    for _ in range(EPA_MAX_FACES):
        best = min(faces, key=lambda q: q[4])
        n = best[3]
        off = best[4]
        s = _minkowski_support(va, vb, n)
        if _dot(n, s) - off < EPA_FACE_TOL:
            return max(off, 0.0), np.array(n)
        dup = False
        for p in verts:
            dd = _sub(s, p)
            if _dot(dd, dd) < 1e-24:
                dup = True
                break
        if dup:
            return max(off, 0.0), np.array(n)
        verts.append(s)
        si = len(verts) - 1
        edge_count: dict[tuple[int, int], int] = {}
        kept = []
        for f in faces:
            if _dot(f[3], s) - f[4] > 1e-12:
                for e in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
                    key = (e[0], e[1]) if e[0] < e[1] else (e[1], e[0])
                    edge_count[key] = edge_count.get(key, 0) + 1
            else:
                kept.append(f)
        horizon = [e for e, c in edge_count.items() if c == 1]
        if not horizon:
            return max(off, 0.0), np.array(n)
        for (ei, ej) in horizon:
            f = _make_face(ei, ej, si)
            if f is None:
                raise ConvexQueryError("EPA face degeneracy")
            kept.append(f)
        faces = kept
    raise ConvexQueryError("EPA exceeded face budget")


def epa_penetration(a: ConvexPart, pa: Pose, b: ConvexPart, pb: Pose, retries: int = 3):
    """Penetration depth and direction for intersecting posed parts.

    Retries with a tiny deterministic perturbation of the second pose when the
    expanding polytope degenerates; raises after the retry budget.
    """
    va = pa.apply(a.vertices)
    vb = pb.apply(b.vertices)
    scale = max(a.radius, b.radius, 1e-6)
    rng = np.random.default_rng(12345)
    last = None
    for attempt in range(retries + 1):
        try:
            if attempt == 0:
                return epa_penetration_posed(va, vb)
            jitter = rng.normal(size=3) * (1e-9 * scale * attempt)
            return epa_penetration_posed(va, vb + jitter)
        except ConvexQueryError as exc:
            if "separated" in str(exc):
                raise
            last = exc
    raise ConvexQueryError(f"EPA failed after {retries} retries: {last}")


def signed_distance_parts(a: ConvexPart, pa: Pose, b: ConvexPart, pb: Pose) -> float:
    """Positive separation distance, or minus the EPA penetration depth."""
    va = pa.apply(a.vertices)
    vb = pb.apply(b.vertices)
    return signed_distance_posed(va, vb)


def signed_distance_posed(va: np.ndarray, vb: np.ndarray) -> float:
    dist, _, _ = gjk_distance_posed(va, vb)
    if dist > 0.0:
        return dist
    depth, _ = epa_penetration_posed(va, vb)
    return -depth
