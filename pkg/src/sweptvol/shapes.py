"""Rigid bodies as unions of convex parts, plus procedural generators.

Shapes carry a sampled surface point cloud used by the encoders and the
implicit oracle.  Generators build desk-scale fixtures (boxes, plates,
brackets, racks, pegs, slots, arches) from abutting axis-aligned boxes, so no
convex decomposition is ever needed.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .convex import (ConvexPart, epa_penetration_posed, gjk_distance_posed,
                     signed_distance_posed)
from .sampling import hull_triangles, points_plane_margin, sample_on_triangles
from .se3 import Pose

SHAPE_KINDS = ("box", "plate", "l_bracket", "rack", "peg", "slot", "tunnel_arch")

# Kinds whose generator families appear in training pools; the remaining kinds
# are held out for out-of-domain evaluation.
IN_DOMAIN_KINDS = ("box", "plate", "l_bracket", "rack", "peg")
OUT_OF_DOMAIN_KINDS = ("slot", "tunnel_arch")


class ShapeModel:
    """Union of convex parts with a sampled surface cloud."""

    __slots__ = ("parts", "surface", "scale_hint", "name")

    def __init__(self, parts, surface, scale_hint: float, name: str = ""):
        if not parts:
            raise ValueError("shape needs at least one part")
        surface = np.ascontiguousarray(np.asarray(surface, dtype=np.float64))
        if surface.ndim != 2 or surface.shape[1] != 3 or len(surface) == 0:
            raise ValueError("surface must be a non-empty (n, 3) array")
        if scale_hint <= 0:
            raise ValueError("scale_hint must be positive")
        surface.flags.writeable = False
        self.parts = tuple(parts)
        self.surface = surface
        self.scale_hint = float(scale_hint)
        self.name = name

    def aabb(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.min([p.vertices.min(axis=0) for p in self.parts], axis=0)
        hi = np.max([p.vertices.max(axis=0) for p in self.parts], axis=0)
        return lo, hi

    def bounding_radius(self) -> float:
        return float(max(np.linalg.norm(p.centroid) + p.radius for p in self.parts))

    def __repr__(self):
        return f"ShapeModel({self.name or 'anon'}, {len(self.parts)} parts, {len(self.surface)} surface pts)"


@dataclass
class SphereSet:
    """Sphere cloud approximating a shape (centers + radii)."""

    centers: np.ndarray
    radii: np.ndarray
    interior_empty: bool = False

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(-1, 3)
        self.radii = np.asarray(self.radii, dtype=np.float64).reshape(-1)
        if len(self.centers) != len(self.radii):
            raise ValueError("centers and radii length mismatch")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")


def boundary_distance(shape: ShapeModel, points: np.ndarray) -> np.ndarray:
    """Distance from points to the nearest part boundary (0 on any part surface)."""
    from .sampling import points_to_part_sdf

    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    best = np.full(len(pts), np.inf)
    for part in shape.parts:
        np.minimum(best, np.abs(points_to_part_sdf(pts, part)), out=best)
    return best


def union_contains(shape: ShapeModel, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
    """Boolean mask: point inside (or within tol of) some part."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    mask = np.zeros(len(pts), dtype=bool)
    for part in shape.parts:
        mask |= points_plane_margin(pts, part) <= tol
    return mask


def sample_surface(parts, n: int, seed: int) -> np.ndarray:
    """Area-weighted stratified samples over the part hulls.

    Points landing strictly inside another part are discarded (they are not on
    any boundary); shared abutting faces are kept.  Top-up rounds preserve
    determinism in the seed.
    """
    tris = []
    areas = []
    owner = []
    for idx, part in enumerate(parts):
        t, a = hull_triangles(part)
        tris.append(t)
        areas.append(a)
        owner.extend([idx] * len(t))
    tris = np.concatenate(tris)
    areas = np.concatenate(areas)
    owner = np.asarray(owner)

    collected = []
    total = 0
    for round_idx in range(8):
        want = n - total
        if want <= 0:
            break
        rng = np.random.default_rng(np.random.SeedSequence((seed, round_idx)))
        batch = max(want + 16, int(want * 1.25))
        pts = sample_on_triangles(tris, areas, batch, rng)
        keep = np.ones(len(pts), dtype=bool)
        for j, part in enumerate(parts):
            inner = points_plane_margin(pts, part) < -1e-9
            keep &= ~inner
        pts = pts[keep][: n - total]
        collected.append(pts)
        total += len(pts)
    if total < n:
        warnings.warn(f"surface sampling yielded {total}/{n} points")
    return np.concatenate(collected) if collected else np.zeros((0, 3))


def _box_part(lo, hi) -> ConvexPart:
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if np.any(hi <= lo):
        raise ValueError("box needs positive extents")
    corners = np.array([[x, y, z]
                        for x in (lo[0], hi[0])
                        for y in (lo[1], hi[1])
                        for z in (lo[2], hi[2])])
    return ConvexPart(corners)


def _centered(parts):
    lo = np.min([p.vertices.min(axis=0) for p in parts], axis=0)
    hi = np.max([p.vertices.max(axis=0) for p in parts], axis=0)
    mid = 0.5 * (lo + hi)
    return [ConvexPart(p.vertices - mid, degenerate=p.degenerate) for p in parts]


def _build_parts(kind: str, p: dict):
    if kind == "box":
        lx, ly, lz = p["lx"], p["ly"], p["lz"]
        return [_box_part([-lx / 2, -ly / 2, -lz / 2], [lx / 2, ly / 2, lz / 2])]
    if kind == "plate":
        lx, ly, t = p["lx"], p["ly"], p["thickness"]
        return [_box_part([-lx / 2, -ly / 2, -t / 2], [lx / 2, ly / 2, t / 2])]
    if kind == "peg":
        w, h, ln = p["w"], p["h"], p["length"]
        return [_box_part([-w / 2, -h / 2, -ln / 2], [w / 2, h / 2, ln / 2])]
    if kind == "l_bracket":
        a, b, t, w = p["leg_a"], p["leg_b"], p["thickness"], p["width"]
        parts = [
            _box_part([0, 0, 0], [a, w, t]),
            _box_part([0, 0, t], [t, w, b]),
        ]
        return _centered(parts)
    if kind == "rack":
        n_slots = int(p["n_slots"])
        sw, wt = p["slot_width"], p["wall_thickness"]
        depth, height, bt = p["depth"], p["height"], p["base_thickness"]
        if n_slots < 1:
            raise ValueError("rack needs >= 1 slot")
        x = 0.0
        walls = []
        for k in range(n_slots + 1):
            walls.append(_box_part([x, 0, bt], [x + wt, depth, bt + height]))
            x += wt + sw
        length = (n_slots + 1) * wt + n_slots * sw
        base = _box_part([0, 0, 0], [length, depth, bt])
        parts = [base] + walls
        return _centered(parts)
    if kind == "slot":
        iw, ih, depth, wall = p["inner_w"], p["inner_h"], p["depth"], p["wall"]
        parts = [
            _box_part([-iw / 2 - wall, -ih / 2 - wall, -depth / 2],
                      [-iw / 2, ih / 2 + wall, depth / 2]),
            _box_part([iw / 2, -ih / 2 - wall, -depth / 2],
                      [iw / 2 + wall, ih / 2 + wall, depth / 2]),
            _box_part([-iw / 2, -ih / 2 - wall, -depth / 2],
                      [iw / 2, -ih / 2, depth / 2]),
            _box_part([-iw / 2, ih / 2, -depth / 2],
                      [iw / 2, ih / 2 + wall, depth / 2]),
        ]
        return parts
    if kind == "tunnel_arch":
        w, h, depth, t = p["width"], p["height"], p["depth"], p["thickness"]
        parts = [
            _box_part([-w / 2 - t, 0, -depth / 2], [-w / 2, h, depth / 2]),
            _box_part([w / 2, 0, -depth / 2], [w / 2 + t, h, depth / 2]),
            _box_part([-w / 2 - t, h, -depth / 2], [w / 2 + t, h + t, depth / 2]),
        ]
        return _centered(parts)
    raise ValueError(f"unknown shape kind {kind!r}")


_DEFAULTS = {
    "box": dict(lx=0.3, ly=0.2, lz=0.15),
    "plate": dict(lx=0.28, ly=0.2, thickness=0.02),
    "peg": dict(w=0.06, h=0.06, length=0.24),
    "l_bracket": dict(leg_a=0.28, leg_b=0.2, thickness=0.04, width=0.14),
    "rack": dict(n_slots=3, slot_width=0.06, wall_thickness=0.02,
                 depth=0.2, height=0.16, base_thickness=0.02),
    "slot": dict(inner_w=0.08, inner_h=0.08, depth=0.12, wall=0.04),
    "tunnel_arch": dict(width=0.18, height=0.16, depth=0.14, thickness=0.05),
}


def generate_shape(kind: str, params: dict | None = None, seed: int = 0,
                   surface_density: float = 4096.0) -> ShapeModel:
    """Procedural shape: watertight union of boxes with a sampled surface.

    surface_density is points per square meter of hull area; all dimensions
    must be positive.
    """
    if kind not in SHAPE_KINDS:
        raise ValueError(f"unknown shape kind {kind!r}; known: {SHAPE_KINDS}")
    p = dict(_DEFAULTS[kind])
    if params:
        unknown = set(params) - set(p)
        if unknown:
            raise ValueError(f"unknown params for {kind}: {sorted(unknown)}")
        p.update(params)
    for key, val in p.items():
        if key != "n_slots" and val <= 0:
            raise ValueError(f"{kind}.{key} must be positive, got {val}")
    parts = _build_parts(kind, p)
    area = sum(hull_triangles(part)[1].sum() for part in parts)
    n_pts = max(256, int(np.ceil(area * surface_density)))
    surface = sample_surface(parts, n_pts, seed)
    lo = np.min([q.vertices.min(axis=0) for q in parts], axis=0)
    hi = np.max([q.vertices.max(axis=0) for q in parts], axis=0)
    scale_hint = float(np.max(hi - lo))
    return ShapeModel(parts, surface, scale_hint, name=f"{kind}#{seed}")


def penetration_depth(a: ShapeModel, pa: Pose, b: ShapeModel, pb: Pose) -> float:
    """Signed shape distance: min separation when apart, -max EPA depth when not.

    Part pairs are pruned with bounding-sphere gaps, which lower-bound the
    convex distance, so the reported extremum is exact.
    """
    va = [pa.apply(p.vertices) for p in a.parts]
    vb = [pb.apply(p.vertices) for p in b.parts]
    ca = np.array([v.mean(axis=0) for v in va])
    cb = np.array([v.mean(axis=0) for v in vb])
    ra = np.array([p.radius for p in a.parts])
    rb = np.array([p.radius for p in b.parts])
    gaps = (np.linalg.norm(ca[:, None, :] - cb[None, :, :], axis=-1)
            - ra[:, None] - rb[None, :])
    order = np.argsort(gaps, axis=None)
    best = np.inf
    na, nb = len(a.parts), len(b.parts)
    for flat in order:
        i, j = divmod(int(flat), nb)
        if gaps[i, j] >= best:
            break
        sd = signed_distance_posed(va[i], vb[j])
        best = min(best, sd)
    return float(best)


def sphere_approximation(shape: ShapeModel, voxel_size: float, n_surface: int,
                         seed: int) -> SphereSet:
    """cuRobo-style sphere cloud: voxel-interior spheres plus surface spheres.

    Interior spheres sit at voxel centers inside the part union with radius
    voxel_size/2; surface spheres are uniform area-weighted samples with
    radius voxel_size/4.  Sets interior_empty when no voxel center lands
    inside.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    lo, hi = shape.aabb()
    counts = np.maximum(1, np.floor((hi - lo) / voxel_size + 1e-9).astype(int))
    axes = [lo[k] + (np.arange(counts[k]) + 0.5) * voxel_size for k in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    inside = union_contains(shape, grid, tol=-1e-12)
    centers = [grid[inside]]
    radii = [np.full(int(inside.sum()), voxel_size / 2.0)]
    interior_empty = not bool(inside.any())
    if interior_empty:
        warnings.warn("sphere approximation found no interior voxels; surface spheres only")
        centers = []
        radii = []
    if n_surface > 0:
        pts = sample_surface(shape.parts, n_surface, seed)
        centers.append(pts)
        radii.append(np.full(len(pts), voxel_size / 4.0))
    if not centers:
        return SphereSet(np.zeros((0, 3)), np.zeros(0), interior_empty=True)
    return SphereSet(np.concatenate(centers), np.concatenate(radii),
                     interior_empty=interior_empty)


def load_obj(path, surface_density: float = 4096.0, seed: int = 0,
             scale: float = 1.0) -> ShapeModel:
    """OBJ ingestion: vertex/face lines only; one convex part per group.

    Vertices of each group are convex-hulled; non-watertight input is accepted
    with a warning (faces are only used to detect group membership).
    """
    verts = []
    groups: dict[str, set[int]] = {}
    current = "default"
    used_faces = 0
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            tok = line.split()
            if tok[0] == "v" and len(tok) >= 4:
                verts.append([float(tok[1]), float(tok[2]), float(tok[3])])
            elif tok[0] in ("g", "o"):
                current = " ".join(tok[1:]) or "default"
            elif tok[0] == "f":
                idxs = [int(t.split("/")[0]) for t in tok[1:]]
                idxs = [i - 1 if i > 0 else len(verts) + i for i in idxs]
                groups.setdefault(current, set()).update(idxs)
                used_faces += 1
    if not verts:
        raise ValueError(f"no vertices in {path}")
    verts = np.asarray(verts, dtype=np.float64) * scale
    if not groups:
        groups = {"default": set(range(len(verts)))}
        warnings.warn(f"{path}: no faces; treating all vertices as one convex part")
    parts = []
    for name, idxs in sorted(groups.items()):
        pts = verts[sorted(idxs)]
        try:
            part = ConvexPart(pts)
        except ValueError:
            part = ConvexPart(pts, degenerate=True)
            warnings.warn(f"{path}: group {name} is degenerate")
        parts.append(part)
    # Watertightness is not checked beyond hull construction.
    hull_area = sum(hull_triangles(q)[1].sum() for q in parts if not q.degenerate)
    n_pts = max(256, int(np.ceil(hull_area * surface_density)))
    sampleable = [q for q in parts if not q.degenerate]
    if not sampleable:
        raise ValueError(f"{path}: no non-degenerate groups")
    surface = sample_surface(sampleable, n_pts, seed)
    lo = np.min([q.vertices.min(axis=0) for q in parts], axis=0)
    hi = np.max([q.vertices.max(axis=0) for q in parts], axis=0)
    return ShapeModel(parts, surface, float(np.max(hi - lo)), name=str(path))
