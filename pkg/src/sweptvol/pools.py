"""Shape pools for training and evaluation.

In-domain pools draw from the generator kinds used in training; out-of-domain
pools use the held-out kinds (plus any OBJ imports supplied by the caller).
"""
from __future__ import annotations

import numpy as np

from .shapes import (IN_DOMAIN_KINDS, OUT_OF_DOMAIN_KINDS, _DEFAULTS,
                     generate_shape)

# Per-kind parameter jitter fractions; thin dimensions move less so shapes
# stay valid and desk-plausible.
_JITTER = 0.35
_MIN_DIM = 0.012


def _vary_params(kind: str, rng: np.random.Generator) -> dict:
    out = {}
    for key, val in _DEFAULTS[kind].items():
        if key == "n_slots":
            out[key] = int(rng.integers(2, 5))
            continue
        f = 1.0 + rng.uniform(-_JITTER, _JITTER)
        out[key] = max(_MIN_DIM, val * f)
    return out


def make_pool(kinds, variants: int, seed: int,
              surface_density: float = 4096.0):
    """variants shapes per kind, deterministic in seed."""
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x9001)))
    pool = []
    for kind in kinds:
        for v in range(variants):
            params = _vary_params(kind, rng)
            shape_seed = int(rng.integers(2 ** 31))
            pool.append(generate_shape(kind, params, seed=shape_seed,
                                       surface_density=surface_density))
    return pool


def training_pool(seed: int = 0, variants: int = 4):
    return make_pool(IN_DOMAIN_KINDS, variants, seed)


def in_domain_pool(seed: int = 1000, variants: int = 3):
    """Fresh in-domain shapes (same kinds as training, unseen parameters)."""
    return make_pool(IN_DOMAIN_KINDS, variants, seed)


def out_of_domain_pool(seed: int = 2000, variants: int = 4):
    return make_pool(OUT_OF_DOMAIN_KINDS, variants, seed)
