"""Classical swept-volume detectors used for comparison.

convexcell: convex-hull sweep cells checked with GJK/EPA (continuous builds
the hull of each moving part over segment endpoints; discrete checks waypoint
snapshots).  sphere_mesh: sphere cloud for the moving body swept piecewise
linearly against the static parts.

Both report value = min signed distance over all checks and label it a
collision when value < activation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convex import ConvexPart, gjk_distance_posed, signed_distance_posed
from .se3 import Pose
from .shapes import ShapeModel, SphereSet
from .traj import discretize


@dataclass
class BaselineResult:
    value: float
    label: bool
    extra: dict | None = None


def _static_posed(a: ShapeModel, pa: Pose):
    va = [pa.apply(p.vertices) for p in a.parts]
    ca = np.stack([v.mean(axis=0) for v in va])
    ra = np.array([p.radius for p in a.parts])
    return va, ca, ra


def convexcell(a: ShapeModel, pa: Pose, b: ShapeModel, traj, n_seg: int,
               activation: float, mode: str = "continuous") -> BaselineResult:
    """Convex-cell sweep detector.

    continuous: per trajectory segment and moving part, the vertex union at
    the segment's endpoint poses forms the sweep cell (exact for pure
    translation).  discrete: parts at waypoint poses only.  Pairs are culled
    with bounding-sphere gaps, which never changes the minimum.
    """
    if mode not in ("continuous", "discrete"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "continuous" and n_seg < 1:
        raise ValueError("continuous needs n_seg >= 1")
    if mode == "discrete" and n_seg < 2:
        raise ValueError("discrete needs >= 2 waypoints")

    va, ca, ra = _static_posed(a, pa)
    if mode == "continuous":
        poses = discretize(traj, n_seg + 1)
        cells = []
        for k in range(n_seg):
            p0, p1 = poses[k], poses[k + 1]
            for part in b.parts:
                v = np.vstack([p0.apply(part.vertices), p1.apply(part.vertices)])
                cells.append(v)
    else:
        poses = discretize(traj, n_seg)
        cells = [p.apply(part.vertices) for p in poses for part in b.parts]

    cc = np.stack([v.mean(axis=0) for v in cells])
    rc = np.array([np.linalg.norm(v - c, axis=1).max() for v, c in zip(cells, cc)])
    gaps = (np.linalg.norm(ca[:, None, :] - cc[None, :, :], axis=-1)
            - ra[:, None] - rc[None, :])
    order = np.argsort(gaps, axis=None)
    best = np.inf
    nc = len(cells)
    for flat in order:
        i, j = divmod(int(flat), nc)
        if gaps[i, j] >= best:
            break
        sd = signed_distance_posed(va[i], cells[j])
        best = min(best, sd)
    return BaselineResult(float(best), bool(best < activation))


def sphere_mesh(a_static: ShapeModel, pa: Pose, b_spheres: SphereSet, traj,
                n_interp: int, activation: float,
                mode: str = "continuous") -> BaselineResult:
    """Sphere-cloud sweep detector.

    continuous: each sphere center is swept piecewise linearly over n_interp
    sub-segments; the check is segment-vs-part distance minus the radius.
    discrete: centers at waypoints only (zero-length segments).  extra carries
    the summed penetration used as a planner cost.
    """
    if len(b_spheres.centers) == 0:
        raise ValueError("empty sphere set")
    if mode not in ("continuous", "discrete"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "continuous" and n_interp < 1:
        raise ValueError("continuous needs n_interp >= 1")
    if mode == "discrete" and n_interp < 2:
        raise ValueError("discrete needs >= 2 waypoints")

    va, ca, ra = _static_posed(a_static, pa)
    n_way = n_interp + 1 if mode == "continuous" else n_interp
    poses = discretize(traj, n_way)
    centers = np.stack([p.apply(b_spheres.centers) for p in poses])  # (W, S, 3)
    radii = b_spheres.radii

    if mode == "continuous":
        seg_a = centers[:-1].reshape(-1, 3)
        seg_b = centers[1:].reshape(-1, 3)
        seg_r = np.tile(radii, n_interp)
    else:
        seg_a = centers.reshape(-1, 3)
        seg_b = seg_a
        seg_r = np.tile(radii, n_interp)

    mid = 0.5 * (seg_a + seg_b)
    half = 0.5 * np.linalg.norm(seg_b - seg_a, axis=1)
    bound = (np.linalg.norm(ca[:, None, :] - mid[None, :, :], axis=-1)
             - ra[:, None] - (half + seg_r)[None, :])
    order = np.argsort(bound, axis=None)
    ns = len(seg_a)
    best = np.inf
    sphere_pen: dict[int, float] = {}
    for flat in order:
        i, j = divmod(int(flat), ns)
        # A pair can matter only if it could lower the minimum or penetrate
        # (the penetration sum needs every negative pair).
        if bound[i, j] >= best and bound[i, j] >= 0.0:
            break
        if seg_a is seg_b:
            seg = seg_a[j][None, :]
        else:
            seg = np.stack([seg_a[j], seg_b[j]])
        d, _, _ = gjk_distance_posed(va[i], seg)
        sd = d - seg_r[j]
        best = min(best, sd)
        if sd < 0.0:
            key = j % len(radii)
            sphere_pen[key] = max(sphere_pen.get(key, 0.0), -sd)
    pen_sum = float(sum(sphere_pen.values()))
    return BaselineResult(float(best), bool(best < activation),
                          extra={"penetration_sum": pen_sum})