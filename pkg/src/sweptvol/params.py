"""Learned-parameter containers and the binary checkpoint format.

Checkpoint layout: length-prefixed JSON header (magic, version, rep count,
channel count, alpha, seed, layer shapes) followed by all parameters as one
little-endian float32 blob in header order.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SVCHKPT1"
VERSION = 1

ENCODER_KEYS = ("w1", "a1", "b1", "w2", "a2", "b2", "w3", "a3", "b3")


@dataclass
class EncoderParams:
    channels: int
    seed: int
    layers: dict[str, np.ndarray]

    def blocks(self):
        return [(f"enc.{k}", self.layers[k]) for k in ENCODER_KEYS]


@dataclass
class DecoderParams:
    widths: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def in_width(self) -> int:
        return self.widths[0]

    def blocks(self):
        out = []
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            out.append((f"dec.W{i}", W))
            out.append((f"dec.b{i}", b))
        return out


@dataclass
class Checkpoint:
    encoder: EncoderParams
    decoder: DecoderParams
    n_reps: int
    alpha: float
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def channels(self) -> int:
        return self.encoder.channels

    def blocks(self):
        return self.encoder.blocks() + self.decoder.blocks()


def init_encoder_params(channels: int, seed: int, input_scale: float = 10.0) -> EncoderParams:
    """Random vector-feature encoder weights.

    input_scale pre-scales the lift so that desk-scale relative coordinates
    (a few centimeters) land in the responsive range of the norm gates.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xE)))
    c = channels
    layers = {
        "w1": rng.normal(size=c) * input_scale,
        "a1": np.ones(c),
        "b1": np.zeros(c),
        "w2": rng.normal(size=(c, c)) / np.sqrt(c),
        "a2": np.ones(c),
        "b2": np.zeros(c),
        "w3": rng.normal(size=(c, c)) / np.sqrt(c),
        "a3": np.ones(c),
        "b3": np.zeros(c),
    }
    return EncoderParams(channels=c, seed=seed, layers=layers)


def init_decoder_params(in_width: int, hidden: tuple[int, ...] = (256, 256, 256, 256),
                        seed: int = 0) -> DecoderParams:
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD)))
    widths = [in_width, *hidden, 1]
    weights = []
    biases = []
    for a, b in zip(widths[:-1], widths[1:]):
        weights.append(rng.normal(size=(b, a)) * np.sqrt(2.0 / a))
        biases.append(np.zeros(b))
    # Small head keeps initial logits (and their pose gradients) near zero so
    # the slope regularizer starts tame.
    weights[-1] *= 0.1
    return DecoderParams(widths=widths, weights=weights, biases=biases)


def init_checkpoint(n_reps: int, channels: int, alpha: float, seed: int,
                    hidden: tuple[int, ...] = (256, 256, 256, 256)) -> Checkpoint:
    from .nnet import phi_feature_width

    enc = init_encoder_params(channels, seed)
    dec = init_decoder_params(phi_feature_width(channels), hidden, seed)
    return Checkpoint(encoder=enc, decoder=dec, n_reps=n_reps, alpha=alpha, seed=seed)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    blocks = ckpt.blocks()
    header = {
        "version": VERSION,
        "n_reps": int(ckpt.n_reps),
        "channels": int(ckpt.channels),
        "alpha": float(ckpt.alpha),
        "seed": int(ckpt.seed),
        "decoder_widths": [int(w) for w in ckpt.decoder.widths],
        "shapes": [[name, list(arr.shape)] for name, arr in blocks],
        "extra": ckpt.extra,
    }
    raw = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = np.concatenate([np.asarray(arr, dtype=np.float64).reshape(-1) for _, arr in blocks])
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(raw)))
        fh.write(raw)
        fh.write(blob.astype("<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {header['version']}")
        blob = np.frombuffer(fh.read(), dtype="<f4").astype(np.float64)
    shapes = header["shapes"]
    total = sum(int(np.prod(s)) for _, s in shapes)
    if len(blob) != total:
        raise ValueError(f"{path}: parameter blob length {len(blob)} != header total {total}")
    arrays = {}
    pos = 0
    for name, shp in shapes:
        size = int(np.prod(shp))
        arrays[name] = blob[pos:pos + size].reshape(shp).copy()
        pos += size
    channels = header["channels"]
    enc_layers = {k: arrays[f"enc.{k}"] for k in ENCODER_KEYS}
    enc = EncoderParams(channels=channels, seed=header["seed"], layers=enc_layers)
    widths = header["decoder_widths"]
    weights = [arrays[f"dec.W{i}"] for i in range(len(widths) - 1)]
    biases = [arrays[f"dec.b{i}"] for i in range(len(widths) - 1)]
    dec = DecoderParams(widths=widths, weights=weights, biases=biases)
    return Checkpoint(encoder=enc, decoder=dec, n_reps=header["n_reps"],
                      alpha=header["alpha"], seed=header["seed"],
                      extra=header.get("extra", {}))
