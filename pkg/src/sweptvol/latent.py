"""Distributed latent shape representation.

A shape becomes N triples (point, latent, radius): representative surface
points from farthest point sampling, rotation-equivariant vector-feature
latents encoding the local point neighborhood, and bounding-sphere radii that
cover each neighborhood.  Rigid transforms act analytically: points move with
the pose, latents rotate channel-wise, radii are untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import nnet
from .params import Checkpoint, EncoderParams
from .sampling import farthest_point_sampling
from .se3 import Pose, Twist
from .shapes import ShapeModel


@dataclass
class DistributedRepr:
    """N representative points with local latents and bounding radii."""

    points: np.ndarray            # (N, 3)
    latents: np.ndarray           # (N, C, 3)
    radii: np.ndarray             # (N,)
    alpha: float

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.latents = np.ascontiguousarray(self.latents, dtype=np.float64)
        self.radii = np.ascontiguousarray(self.radii, dtype=np.float64).reshape(-1)
        n = len(self.points)
        if self.latents.shape[0] != n or self.radii.shape[0] != n:
            raise ValueError("points/latents/radii length mismatch")
        if self.latents.ndim != 3 or self.latents.shape[2] != 3:
            raise ValueError("latents must be (N, C, 3)")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")
        if self.alpha <= 1.0:
            raise ValueError("alpha must exceed 1")

    @property
    def n(self) -> int:
        return len(self.points)

    @property
    def channels(self) -> int:
        return self.latents.shape[1]


def representative_points(surface: np.ndarray, n: int, seed: int):
    """FPS representatives plus nearest-representative assignment.

    Returns (indices, assignment) where assignment[k] is the representative
    index owning surface point k (ties to the lowest index).
    """
    idx = farthest_point_sampling(surface, n, seed)
    reps = surface[idx]
    d2 = ((surface[:, None, :] - reps[None, :, :]) ** 2).sum(-1)
    assign = np.argmin(d2, axis=1)
    return idx, assign


def nearest_neighbor_radii(points: np.ndarray, alpha: float,
                           scale_hint: float) -> np.ndarray:
    """alpha * distance to the nearest other representative.

    With a single representative the nearest-neighbor rule is undefined; the
    radius falls back to alpha * scale_hint so the global-representation
    variant stays runnable.
    """
    n = len(points)
    if n == 1:
        return np.array([alpha * scale_hint])
    d = np.linalg.norm(points[:, None, :] - points[None, :, :], axis=-1)
    np.fill_diagonal(d, np.inf)
    return alpha * d.min(axis=1)


def encode(shape: ShapeModel, n: int, alpha: float,
           params: EncoderParams) -> DistributedRepr:
    """Distributed representation of a shape in its body frame."""
    surface = shape.surface
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > len(surface):
        raise ValueError(f"n = {n} exceeds surface size {len(surface)}")
    if alpha <= 1.0:
        raise ValueError("alpha must exceed 1")
    idx, assign = representative_points(surface, n, params.seed)
    reps = surface[idx]
    radii = nearest_neighbor_radii(reps, alpha, shape.scale_hint)

    counts = np.bincount(assign, minlength=n)
    pmax = int(counts.max())
    rel = np.zeros((n, pmax, 3))
    mask = np.zeros((n, pmax))
    cursor = np.zeros(n, dtype=np.int64)
    order = np.argsort(assign, kind="stable")
    for k in order:
        i = assign[k]
        rel[i, cursor[i]] = surface[k] - reps[i]
        mask[i, cursor[i]] = 1.0
        cursor[i] += 1

    layers = {k: nnet.to_t(v) for k, v in params.layers.items()}
    with torch.no_grad():
        z = nnet.encoder_forward(layers, nnet.to_t(rel), nnet.to_t(mask))
    return DistributedRepr(points=reps, latents=z.numpy(), radii=radii, alpha=alpha)


def rotate_latent(R: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Latent rotation operator: each channel 3-vector rotated by R.

    Block-diagonal construction, so composing operators matches composing
    rotations exactly.
    """
    R = np.asarray(R, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    return np.einsum("ij,...cj->...ci", R, z)


def transform_repr(T: Pose, repr_: DistributedRepr) -> DistributedRepr:
    """Rigid transform of a representation: points by T, latents by the
    latent rotation operator, radii unchanged."""
    return DistributedRepr(
        points=T.apply(repr_.points),
        latents=rotate_latent(T.rotation, repr_.latents),
        radii=repr_.radii.copy(),
        alpha=repr_.alpha,
    )


def preprocess_phi(p1, z1, p2, z2, xi: Twist, pose_rel: Pose) -> np.ndarray:
    """Rigid- and scale-invariant feature vector for one candidate pair.

    See nnet.preprocess_phi_t for the construction; this is the numpy-facing
    entry point (used directly by tests and by single-pair decoding).
    """
    out = nnet.preprocess_phi_t(
        nnet.to_t(p1), nnet.to_t(z1), nnet.to_t(p2), nnet.to_t(z2),
        nnet.to_t(xi.vec() if isinstance(xi, Twist) else xi),
        nnet.to_t(pose_rel.rotation), nnet.to_t(pose_rel.translation),
    )
    return out.numpy()


def containment_check(shape: ShapeModel, repr_: DistributedRepr, seed: int) -> float:
    """Max over surface points of (distance to assigned rep) / its radius.

    Values <= 1 certify that every local neighborhood is inside its sphere.
    """
    _, assign = representative_points(shape.surface, repr_.n, seed)
    d = np.linalg.norm(shape.surface - repr_.points[assign], axis=1)
    return float((d / repr_.radii[assign]).max())
