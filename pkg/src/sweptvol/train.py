"""Dataset generation and detector training.

Samples are linear constant-twist sweeps of one pool shape against another,
labeled by the dense oracle and rejection-balanced to half positives.  The
loss is binary cross-entropy on the max-pooled logit plus an eikonal-style
penalty pushing the logit field toward unit slope in the relative-pose chart,
differentiated end to end through the decoder, the pair preprocessing, and
the encoder.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from . import nnet
from .latent import DistributedRepr, nearest_neighbor_radii, representative_points
from .oracle import oracle_dense
from .params import Checkpoint, init_checkpoint
from .se3 import Pose, Twist, pose_exp, rotation_exp
from .svcd import broad_phase
from .traj import LinearTwistSegment

DATASET_MAGIC = b"SVCDATA1"


@dataclass
class TrainSample:
    static_id: int
    moving_id: int
    start: Pose            # moving pose at t = 0, static frame
    xi: Twist
    label: bool
    max_pen: float

    def trajectory(self) -> LinearTwistSegment:
        return LinearTwistSegment(self.start, self.xi)


@dataclass
class TrainConfig:
    count: int = 5000
    batch_size: int = 64
    learning_rate: float = 3e-3
    lam_reg: float = 0.1
    seed: int = 0
    epochs: int = 30
    balance_tol: float = 0.02
    n_reps: int = 16
    channels: int = 16
    alpha: float = 1.3
    top_m: int = 16
    val_fraction: float = 0.1
    oracle_n_t: int = 257

    def __post_init__(self):
        if not (0.0 <= self.balance_tol <= 0.1):
            raise ValueError("balance tolerance must be in [0, 0.1]")
        for name in ("count", "batch_size", "learning_rate", "lam_reg",
                     "epochs", "n_reps", "channels", "top_m"):
            if getattr(self, name) < 0 or (name not in ("lam_reg",) and getattr(self, name) == 0):
                raise ValueError(f"{name} must be positive")


def random_twist(rng: np.random.Generator, scale: float) -> Twist:
    """Unit direction in R^6 scaled by U(0.1, 2.0); linear part rides on the
    shape scale so sweeps cover grazing through tunneling regimes."""
    d = rng.normal(size=6)
    d /= np.linalg.norm(d)
    mag = rng.uniform(0.1, 2.0)
    return Twist(d[:3] * mag * scale, d[3:] * mag)


def random_start_pose(rng: np.random.Generator, a, b) -> Pose:
    R = rotation_exp(rng.normal(size=3) * 2.0)
    ra = a.bounding_radius()
    rb = b.bounding_radius()
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    dist = rng.uniform(0.0, 1.1) * (ra + rb)
    return Pose(R, d * dist)


def gen_dataset(pool, count: int, seed: int, balance_tol: float = 0.02,
                oracle_n_t: int = 257) -> list[TrainSample]:
    """Rejection-balanced labeled sweeps over a shape pool.

    The two label buckets are filled to an exact half split (the tolerance
    absorbs odd counts); generation aborts after 100x count attempts.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xDA7A)))
    want_pos = count // 2
    want_neg = count - want_pos
    if abs(want_pos / count - 0.5) > balance_tol:
        raise ValueError("count too small for requested balance tolerance")
    samples: list[TrainSample] = []
    n_pos = n_neg = 0
    attempts = 0
    while len(samples) < count:
        attempts += 1
        if attempts > 100 * count:
            raise RuntimeError(
                f"unbalanceable pool: {attempts} attempts for {len(samples)}/{count} samples")
        si = int(rng.integers(len(pool)))
        mi = int(rng.integers(len(pool)))
        a, b = pool[si], pool[mi]
        start = random_start_pose(rng, a, b)
        xi = random_twist(rng, 0.5 * (a.scale_hint + b.scale_hint))
        traj = LinearTwistSegment(start, xi)
        res = oracle_dense(a, Pose.identity(), b, traj, n_t=oracle_n_t)
        if res.label and n_pos >= want_pos:
            continue
        if not res.label and n_neg >= want_neg:
            continue
        samples.append(TrainSample(si, mi, start, xi, res.label, res.max_pen))
        if res.label:
            n_pos += 1
        else:
            n_neg += 1
    return samples


def save_dataset(samples, path, meta: dict | None = None) -> None:
    header = json.dumps({"count": len(samples), "meta": meta or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for s in samples:
            fh.write(struct.pack("<II", s.static_id, s.moving_id))
            fh.write(s.start.flat().astype("<f8").tobytes())
            fh.write(s.xi.vec().astype("<f8").tobytes())
            fh.write(struct.pack("<Bd", 1 if s.label else 0, s.max_pen))


def load_dataset(path) -> list[TrainSample]:
    with open(path, "rb") as fh:
        if fh.read(len(DATASET_MAGIC)) != DATASET_MAGIC:
            raise ValueError(f"{path}: not a dataset file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        out = []
        rec = struct.Struct("<II")
        for _ in range(header["count"]):
            si, mi = rec.unpack(fh.read(8))
            pose = Pose.from_flat(np.frombuffer(fh.read(96), dtype="<f8"))
            xi = Twist.from_vec(np.frombuffer(fh.read(48), dtype="<f8"))
            lab, pen = struct.unpack("<Bd", fh.read(9))
            out.append(TrainSample(si, mi, pose, xi, bool(lab), pen))
    return out


# ---------------------------------------------------------------------------
# Differentiable training graph.
# ---------------------------------------------------------------------------

class ShapeCache:
    """Per-shape constants: representatives, radii, padded local point sets."""

    def __init__(self, shape, n_reps: int, alpha: float, seed: int):
        surface = shape.surface
        idx, assign = representative_points(surface, n_reps, seed)
        reps = surface[idx]
        radii = nearest_neighbor_radii(reps, alpha, shape.scale_hint)
        counts = np.bincount(assign, minlength=n_reps)
        pmax = max(1, int(counts.max()))
        rel = np.zeros((n_reps, pmax, 3))
        mask = np.zeros((n_reps, pmax))
        cursor = np.zeros(n_reps, dtype=np.int64)
        for k in np.argsort(assign, kind="stable"):
            i = assign[k]
            rel[i, cursor[i]] = surface[k] - reps[i]
            mask[i, cursor[i]] = 1.0
            cursor[i] += 1
        self.points = reps
        self.radii = radii
        self.rel = nnet.to_t(rel)
        self.mask = nnet.to_t(mask)
        self.alpha = alpha

    def geom_repr(self, channels: int) -> DistributedRepr:
        return DistributedRepr(self.points, np.zeros((len(self.points), channels, 3)),
                               self.radii, self.alpha)


@dataclass
class PreparedSample:
    static_id: int
    moving_id: int
    label: float
    cand_i: np.ndarray
    cand_j: np.ndarray
    pose_R: np.ndarray     # tau(t_dagger) rotations (K, 3, 3)
    pose_t: np.ndarray
    xi: np.ndarray         # constant segment twist (6,)


def prepare_samples(samples, caches: dict[int, ShapeCache], channels: int,
                    top_m: int) -> list[PreparedSample]:
    """Broad-phase candidates and critical poses; parameter-independent."""
    out = []
    for s in samples:
        zs = caches[s.static_id].geom_repr(channels)
        zm = caches[s.moving_id].geom_repr(channels)
        traj = s.trajectory()
        cand = broad_phase(zs, zm, traj, top_m)
        if len(cand):
            poses = [traj.eval(t) for t in cand.t_dagger]
            pose_R = np.stack([p.rotation for p in poses])
            pose_t = np.stack([p.translation for p in poses])
        else:
            pose_R = np.zeros((0, 3, 3))
            pose_t = np.zeros((0, 3))
        out.append(PreparedSample(s.static_id, s.moving_id, float(s.label),
                                  cand.i, cand.j, pose_R, pose_t, s.xi.vec()))
    return out


class TorchParams:
    """Torch views of a checkpoint's parameters (leaf tensors)."""

    def __init__(self, ckpt: Checkpoint, requires_grad: bool = True):
        self.ckpt = ckpt
        self.enc = {k: nnet.to_t(v).requires_grad_(requires_grad)
                    for k, v in ckpt.encoder.layers.items()}
        self.dec_W = [nnet.to_t(W).requires_grad_(requires_grad)
                      for W in ckpt.decoder.weights]
        self.dec_b = [nnet.to_t(b).requires_grad_(requires_grad)
                      for b in ckpt.decoder.biases]

    def all_named(self):
        out = [(f"enc.{k}", v) for k, v in self.enc.items()]
        out += [(f"dec.W{i}", W) for i, W in enumerate(self.dec_W)]
        out += [(f"dec.b{i}", b) for i, b in enumerate(self.dec_b)]
        return out

    def write_back(self) -> None:
        for k, v in self.enc.items():
            self.ckpt.encoder.layers[k] = v.detach().numpy().copy()
        for i, W in enumerate(self.dec_W):
            self.ckpt.decoder.weights[i] = W.detach().numpy().copy()
        for i, b in enumerate(self.dec_b):
            self.ckpt.decoder.biases[i] = b.detach().numpy().copy()


EMPTY_LOGIT = -30.0


def batch_logits(tp: TorchParams, caches: dict[int, ShapeCache],
                 batch: list[PreparedSample], delta: torch.Tensor | None = None):
    """Max-pooled logits for a batch of prepared samples.

    delta (B, 6), when given, right-perturbs the moving body's pose in its
    own frame at every critical time; the eikonal term differentiates the
    logits with respect to it at zero.
    """
    shape_ids = sorted({s.static_id for s in batch} | {s.moving_id for s in batch})
    latents = {}
    for sid in shape_ids:
        c = caches[sid]
        latents[sid] = nnet.encoder_forward(tp.enc, c.rel, c.mask)

    rows_p1, rows_z1, rows_pj, rows_zj = [], [], [], []
    rows_R0, rows_t0, rows_xi, rows_sample = [], [], [], []
    for b_idx, s in enumerate(batch):
        k = len(s.cand_i)
        if k == 0:
            continue
        c_s = caches[s.static_id]
        c_m = caches[s.moving_id]
        rows_p1.append(nnet.to_t(c_s.points[s.cand_i]))
        rows_z1.append(latents[s.static_id][nnet.to_t(s.cand_i).long()])
        rows_pj.append(nnet.to_t(c_m.points[s.cand_j]))
        rows_zj.append(latents[s.moving_id][nnet.to_t(s.cand_j).long()])
        rows_R0.append(nnet.to_t(s.pose_R))
        rows_t0.append(nnet.to_t(s.pose_t))
        rows_xi.append(nnet.to_t(np.repeat(s.xi[None], k, axis=0)))
        rows_sample.extend([b_idx] * k)

    B = len(batch)
    out = torch.full((B,), EMPTY_LOGIT, dtype=nnet.DTYPE)
    if not rows_p1:
        return out, torch.zeros(B, dtype=torch.bool)

    p1 = torch.cat(rows_p1)
    z1 = torch.cat(rows_z1)
    pj = torch.cat(rows_pj)
    zj = torch.cat(rows_zj)
    R0 = torch.cat(rows_R0)
    t0 = torch.cat(rows_t0)
    xi = torch.cat(rows_xi)
    sample_idx = torch.as_tensor(rows_sample, dtype=torch.long)

    if delta is not None:
        d = delta[sample_idx]                       # (K, 6)
        Rd, td = nnet.pose_exp_t(d)
        R = R0 @ Rd
        t = (R0 @ td[..., None])[..., 0] + t0
        Rmi, tmi = nnet.pose_exp_t(-d)
        xi = (nnet.adjoint_t(Rmi, tmi) @ xi[..., None])[..., 0]
    else:
        R, t = R0, t0

    p2 = (R @ pj[..., None])[..., 0] + t
    z2 = nnet.rotate_latent_t(R, zj)
    feats = nnet.preprocess_phi_t(p1, z1, p2, z2, xi, R, t)
    logits = nnet.decoder_forward(tp.dec_W, tp.dec_b, feats)

    # Dense per-sample max-pool (differentiable scatter).
    kmax = int(np.bincount(sample_idx.numpy(), minlength=B).max())
    slot = np.zeros(len(sample_idx), dtype=np.int64)
    seen: dict[int, int] = {}
    for r, b_idx in enumerate(sample_idx.numpy()):
        slot[r] = seen.get(int(b_idx), 0)
        seen[int(b_idx)] = slot[r] + 1
    dense = torch.full((B, kmax), EMPTY_LOGIT, dtype=nnet.DTYPE)
    dense = dense.index_put((sample_idx, torch.as_tensor(slot)), logits)
    pooled = dense.max(dim=1).values
    nonempty = torch.zeros(B, dtype=torch.bool)
    nonempty[sample_idx] = True
    out = torch.where(nonempty, pooled, out)
    return out, nonempty


def loss_and_grads(tp: TorchParams, caches, batch, lam_reg: float):
    """Training loss and parameter gradients for one batch.

    Returns (loss value, bce, reg, grads dict name -> array).  The eikonal
    term takes the logit gradient with respect to the 6 relative-pose chart
    coordinates of the moving body (right perturbation), so it needs second
    derivatives; everything in the graph is smooth.
    """
    loss, bce, reg = _loss_graph(tp, caches, batch, lam_reg)
    params = [v for _, v in tp.all_named()]
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    out = {}
    for (name, p), g in zip(tp.all_named(), grads):
        out[name] = np.zeros(p.shape) if g is None else g.detach().numpy().copy()
    return float(loss), float(bce), float(reg), out


def _loss_graph(tp: TorchParams, caches, batch, lam_reg: float):
    B = len(batch)
    labels = torch.as_tensor([s.label for s in batch], dtype=nnet.DTYPE)
    need_reg = lam_reg > 0.0
    delta = torch.zeros((B, 6), dtype=nnet.DTYPE, requires_grad=need_reg)
    logits, nonempty = batch_logits(tp, caches, batch, delta if need_reg else None)
    mask = nonempty
    if mask.any():
        bce = torch.nn.functional.binary_cross_entropy_with_logits(
            logits[mask], labels[mask])
    else:
        bce = torch.zeros((), dtype=nnet.DTYPE)
    if need_reg and mask.any():
        g = torch.autograd.grad(logits.sum(), delta, create_graph=True)[0]
        gn = torch.sqrt((g * g).sum(dim=1) + 1e-12)
        reg = ((gn[mask] - 1.0) ** 2).mean()
    else:
        reg = torch.zeros((), dtype=nnet.DTYPE)
    loss = bce + lam_reg * reg
    if not torch.isfinite(loss):
        bad = [i for i in range(B) if not bool(torch.isfinite(logits[i]))]
        raise FloatingPointError(f"non-finite loss; offending samples {bad}")
    return loss, bce, reg


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_acc: float
    val_acc: float


class Adam:
    """Adaptive-moment gradient descent on the torch parameter tensors."""

    def __init__(self, params, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [torch.zeros_like(p) for p in params]
        self.v = [torch.zeros_like(p) for p in params]
        self.t = 0

    def step(self):
        self.t += 1
        with torch.no_grad():
            for p, m, v in zip(self.params, self.m, self.v):
                if p.grad is None:
                    continue
                g = p.grad
                m.mul_(self.b1).add_(g, alpha=1 - self.b1)
                v.mul_(self.b2).addcmul_(g, g, value=1 - self.b2)
                mh = m / (1 - self.b1 ** self.t)
                vh = v / (1 - self.b2 ** self.t)
                p.add_(-self.lr * mh / (vh.sqrt() + self.eps))

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def _accuracy(tp, caches, prepared, labels) -> float:
    correct = 0
    with torch.no_grad():
        for k in range(0, len(prepared), 256):
            chunk = prepared[k:k + 256]
            logits, _ = batch_logits(tp, caches, chunk)
            pred = (logits > 0.0).numpy()
            correct += int((pred == labels[k:k + 256]).sum())
    return correct / max(1, len(prepared))


def train(config: TrainConfig, pool, samples=None, log=None) -> tuple[Checkpoint, list[EpochStats]]:
    """Mini-batch Adam over the detector; returns the best-validation checkpoint.

    Aborts with diagnostics when the loss exceeds 10x its initial value for
    three consecutive epochs.
    """
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x7A)))
    if samples is None:
        samples = gen_dataset(pool, config.count, config.seed,
                              config.balance_tol, config.oracle_n_t)
    ckpt = init_checkpoint(config.n_reps, config.channels, config.alpha, config.seed)
    caches = {i: ShapeCache(s, config.n_reps, config.alpha, config.seed)
              for i, s in enumerate(pool)}
    prepared = prepare_samples(samples, caches, config.channels, config.top_m)

    n_val = max(1, int(len(prepared) * config.val_fraction))
    perm = rng.permutation(len(prepared))
    val_idx = perm[:n_val]
    train_idx = perm[n_val:]
    train_set = [prepared[i] for i in train_idx]
    val_set = [prepared[i] for i in val_idx]
    train_labels = np.array([s.label for s in train_set], dtype=bool)
    val_labels = np.array([s.label for s in val_set], dtype=bool)

    tp = TorchParams(ckpt)
    opt = Adam([v for _, v in tp.all_named()], lr=config.learning_rate)

    history: list[EpochStats] = []
    best_val = -1.0
    best_state = None
    initial_loss = None
    bad_epochs = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(train_set))
        total = 0.0
        nb = 0
        for k in range(0, len(order), config.batch_size):
            batch = [train_set[i] for i in order[k:k + config.batch_size]]
            loss, bce, reg = _loss_graph(tp, caches, batch, config.lam_reg)
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach())
            nb += 1
        mean_loss = total / max(1, nb)
        if initial_loss is None:
            initial_loss = mean_loss
        if mean_loss > 10.0 * initial_loss:
            bad_epochs += 1
            if bad_epochs >= 3:
                raise RuntimeError(
                    f"training diverged: loss {mean_loss:.3g} vs initial {initial_loss:.3g}")
        else:
            bad_epochs = 0
        tr_acc = _accuracy(tp, caches, train_set, train_labels)
        va_acc = _accuracy(tp, caches, val_set, val_labels)
        history.append(EpochStats(epoch, mean_loss, tr_acc, va_acc))
        if log:
            log(f"epoch {epoch:3d}  loss {mean_loss:.4f}  train {tr_acc:.3f}  val {va_acc:.3f}")
        if va_acc > best_val:
            best_val = va_acc
            best_state = {name: t.detach().clone() for name, t in tp.all_named()}

    if best_state is not None:
        with torch.no_grad():
            for name, t in tp.all_named():
                t.copy_(best_state[name])
    tp.write_back()
    ckpt.extra["val_accuracy"] = best_val
    ckpt.extra["epochs"] = config.epochs
    return ckpt, history
