"""Differentiable core of the learned detector (torch, float64).

Holds the rotation-equivariant vector-feature encoder, the pair-frame
preprocessing, the logit decoder, and batched SE(3) maps used by gradient
paths.  Parameters live in plain numpy arrays (see params.py); functions here
accept torch tensors built from them so the same code serves inference,
training, and planner gradients.
"""
from __future__ import annotations

import numpy as np
import torch

DTYPE = torch.float64


def to_t(x) -> torch.Tensor:
    arr = np.asarray(x, dtype=np.float64)
    if not arr.flags.writeable:
        arr = arr.copy()
    return torch.as_tensor(arr, dtype=DTYPE)


# ---------------------------------------------------------------------------
# SE(3) in torch (batched, differentiable, Taylor-safe at zero angle).
# ---------------------------------------------------------------------------

def skew_t(w: torch.Tensor) -> torch.Tensor:
    zero = torch.zeros_like(w[..., 0])
    rows = [
        torch.stack([zero, -w[..., 2], w[..., 1]], dim=-1),
        torch.stack([w[..., 2], zero, -w[..., 0]], dim=-1),
        torch.stack([-w[..., 1], w[..., 0], zero], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def _sin_coeffs(theta: torch.Tensor):
    """(sin t / t, (1-cos t)/t^2, (t - sin t)/t^3) with series fallbacks."""
    small = theta < 1e-6
    t = torch.where(small, torch.ones_like(theta), theta)
    t2 = t * t
    a = torch.where(small, 1.0 - theta * theta / 6.0, torch.sin(t) / t)
    b = torch.where(small, 0.5 - theta * theta / 24.0, (1.0 - torch.cos(t)) / t2)
    c = torch.where(small, 1.0 / 6.0 - theta * theta / 120.0, (t - torch.sin(t)) / (t2 * t))
    return a, b, c


def rotation_exp_t(w: torch.Tensor) -> torch.Tensor:
    theta = torch.linalg.norm(w, dim=-1)
    a, b, _ = _sin_coeffs(theta)
    K = skew_t(w)
    KK = K @ K
    I = torch.eye(3, dtype=w.dtype, device=w.device).expand(K.shape)
    return I + a[..., None, None] * K + b[..., None, None] * KK


def pose_exp_t(xi: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """xi (..., 6) -> (R, t); twist order (linear, angular)."""
    v, w = xi[..., :3], xi[..., 3:]
    theta = torch.linalg.norm(w, dim=-1)
    a, b, c = _sin_coeffs(theta)
    K = skew_t(w)
    KK = K @ K
    I = torch.eye(3, dtype=xi.dtype, device=xi.device).expand(K.shape)
    R = I + a[..., None, None] * K + b[..., None, None] * KK
    V = I + b[..., None, None] * K + c[..., None, None] * KK
    t = (V @ v[..., None])[..., 0]
    return R, t


def adjoint_t(R: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    """6x6 adjoint of (R, t) acting on (v, w) twists."""
    top = torch.cat([R, skew_t(t) @ R], dim=-1)
    bot = torch.cat([torch.zeros_like(R), R], dim=-1)
    return torch.cat([top, bot], dim=-2)


def rotation_log_t(R: torch.Tensor) -> torch.Tensor:
    """Batched SO(3) log for angles safely below pi (planner-scale steps)."""
    tr = R[..., 0, 0] + R[..., 1, 1] + R[..., 2, 2]
    cos = torch.clamp((tr - 1.0) * 0.5, -1.0, 1.0)
    theta = torch.acos(torch.clamp(cos, -1.0 + 1e-12, 1.0 - 1e-12))
    anti = 0.5 * torch.stack([
        R[..., 2, 1] - R[..., 1, 2],
        R[..., 0, 2] - R[..., 2, 0],
        R[..., 1, 0] - R[..., 0, 1],
    ], dim=-1)
    small = theta < 1e-6
    t = torch.where(small, torch.ones_like(theta), theta)
    scale = torch.where(small, 1.0 + theta * theta / 6.0, t / torch.sin(t))
    return scale[..., None] * anti


def pose_log_t(R: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
    w = rotation_log_t(R)
    theta = torch.linalg.norm(w, dim=-1)
    K = skew_t(w)
    KK = K @ K
    small = theta < 1e-6
    th = torch.where(small, torch.ones_like(theta), theta)
    half = 0.5 * th
    cot_term = torch.where(
        small,
        1.0 / 12.0 + theta * theta / 720.0,
        (1.0 - half / torch.tan(half)) / (th * th),
    )
    I = torch.eye(3, dtype=R.dtype, device=R.device).expand(K.shape)
    Vinv = I - 0.5 * K + cot_term[..., None, None] * KK
    v = (Vinv @ t[..., None])[..., 0]
    return torch.cat([v, w], dim=-1)


# ---------------------------------------------------------------------------
# Vector-feature encoder: exactly SO(3)-equivariant by construction.
# ---------------------------------------------------------------------------

def _gate(V: torch.Tensor, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Rescale each channel vector by a smooth function of its norm."""
    n = torch.sqrt((V * V).sum(dim=-1) + 1e-12)
    g = torch.sigmoid(a * n + b)
    return V * g[..., None]


def encoder_forward(layers: dict[str, torch.Tensor], rel: torch.Tensor,
                    mask: torch.Tensor) -> torch.Tensor:
    """Encode local point sets into vector-feature latents.

    rel: (..., P, 3) points relative to their representative; mask (..., P)
    with 1 for real points.  Returns latents (..., C, 3).
    """
    V = layers["w1"][:, None] * rel[..., None, :]          # (..., P, C, 3)
    V = _gate(V, layers["a1"], layers["b1"])
    V = torch.einsum("dc,...pcx->...pdx", layers["w2"], V)
    V = _gate(V, layers["a2"], layers["b2"])
    denom = mask.sum(dim=-1).clamp(min=1.0)
    pooled = (V * mask[..., None, None]).sum(dim=-3) / denom[..., None, None]
    V = torch.einsum("dc,...cx->...dx", layers["w3"], pooled)
    V = _gate(V, layers["a3"], layers["b3"])
    return V


def rotate_latent_t(R: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
    """Block-diagonal latent rotation: each channel 3-vector rotated by R."""
    return torch.einsum("...ij,...cj->...ci", R, z)


# ---------------------------------------------------------------------------
# Pair-frame preprocessing.
# ---------------------------------------------------------------------------

def _complete_frame(axis1: torch.Tensor, ref1: torch.Tensor, ref2: torch.Tensor):
    """Orthonormal frame with given first axis.

    The secondary reference axes are supplied by the caller (they must rotate
    with the scene for the construction to stay covariant); ref2 is used where
    ref1 is nearly parallel to axis1.
    """
    c1 = ref1 - (ref1 * axis1).sum(-1, keepdim=True) * axis1
    c2 = ref2 - (ref2 * axis1).sum(-1, keepdim=True) * axis1
    n1 = torch.linalg.norm(c1, dim=-1, keepdim=True)
    use2 = (n1 < 1e-6)
    cand = torch.where(use2, c2, c1)
    axis2 = cand / torch.linalg.norm(cand, dim=-1, keepdim=True).clamp(min=1e-300)
    axis3 = torch.cross(axis1, axis2, dim=-1)
    return torch.stack([axis1, axis2, axis3], dim=-1)  # columns


def preprocess_phi_t(p1: torch.Tensor, z1: torch.Tensor,
                     p2: torch.Tensor, z2: torch.Tensor,
                     xi: torch.Tensor, rel_R: torch.Tensor,
                     rel_t: torch.Tensor) -> torch.Tensor:
    """Invariant decoder features for one (or a batch of) candidate pairs.

    Builds the pair frame (origin at the midpoint, first axis along p2 - p1,
    completion from the moving body's own axes so the construction is
    covariant), cancels it from every input, and normalizes lengths by the
    larger latent norm.  xi is the body twist of the moving side; it is
    re-expressed in the pair frame via the adjoint.  Output layout:
    [p1, p2, z1, z2, xi, rel pose (9 + 3)] -> (..., 24 + 6 C).
    """
    d = p2 - p1
    dn = torch.linalg.norm(d, dim=-1, keepdim=True)
    z1n = torch.sqrt((z1 * z1).sum(dim=(-1, -2)))
    z2n = torch.sqrt((z2 * z2).sum(dim=(-1, -2)))
    s = torch.maximum(z1n, z2n)
    if bool((s < 1e-300).any()):
        raise ValueError("degenerate latents: max(|z1|, |z2|) is zero")

    # Fallback first axis from z1's dominant channel when the points coincide.
    ch_norm = torch.linalg.norm(z1, dim=-1)
    dom = torch.argmax(ch_norm, dim=-1)
    zdom = torch.gather(z1, -2, dom[..., None, None].expand(z1.shape[:-2] + (1, 3))).squeeze(-2)
    zdom_n = torch.linalg.norm(zdom, dim=-1, keepdim=True)
    degenerate_pts = dn < 1e-12
    if bool((degenerate_pts & (zdom_n < 1e-12)).any()):
        raise ValueError("degenerate pair: coincident points and zero latent")
    axis1 = torch.where(
        degenerate_pts,
        zdom / zdom_n.clamp(min=1e-300),
        d / dn.clamp(min=1e-300),
    )
    # Covariant completion: reference axes ride on the moving body's rotation.
    ref1 = rel_R[..., :, 2]
    ref2 = rel_R[..., :, 1]
    F = _complete_frame(axis1, ref1, ref2)                 # (..., 3, 3) columns
    mid = 0.5 * (p1 + p2)

    Ft = F.transpose(-1, -2)
    p1f = (Ft @ (p1 - mid)[..., None])[..., 0]
    p2f = (Ft @ (p2 - mid)[..., None])[..., 0]
    z1f = rotate_latent_t(Ft, z1)
    z2f = rotate_latent_t(Ft, z2)
    Rf = Ft @ rel_R
    tf = (Ft @ (rel_t - mid)[..., None])[..., 0]
    # Body twist -> pair frame: Ad(phi^{-1} o rel_pose).
    A = adjoint_t(Rf, tf)
    xif = (A @ xi[..., None])[..., 0]

    inv_s = 1.0 / s
    feats = [
        p1f * inv_s[..., None],
        p2f * inv_s[..., None],
        (z1f * inv_s[..., None, None]).flatten(-2),
        (z2f * inv_s[..., None, None]).flatten(-2),
        torch.cat([xif[..., :3] * inv_s[..., None], xif[..., 3:]], dim=-1),
        Rf.flatten(-2),
        tf * inv_s[..., None],
    ]
    return torch.cat(feats, dim=-1)


def phi_feature_width(channels: int) -> int:
    return 24 + 6 * channels


# ---------------------------------------------------------------------------
# Decoder MLP: softplus keeps curvature nonzero everywhere, which the
# eikonal-style regularizer differentiates through twice.
# ---------------------------------------------------------------------------

def decoder_forward(weights: list[torch.Tensor], biases: list[torch.Tensor],
                    x: torch.Tensor) -> torch.Tensor:
    h = x
    for W, b in zip(weights[:-1], biases[:-1]):
        h = torch.nn.functional.softplus(h @ W.T + b)
    return (h @ weights[-1].T + biases[-1])[..., 0]
