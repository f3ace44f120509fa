"""Benchmark harness: problem generation, detector registry, sweeps, timing.

Problems pair a static shape (posed) with a moving shape and a trajectory,
labeled by the dense oracle before any detector sees them.  Near-contact
generation translates the obstacle along the trajectory's closest-approach
vector plus Gaussian noise, so labels concentrate at the decision boundary.
"""
from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .baselines import convexcell, sphere_mesh
from .latent import encode
from .oracle import NEAR_CONTACT_N_T, closest_approach_vector, oracle_dense
from .params import Checkpoint
from .se3 import Pose, Twist
from .shapes import ShapeModel, generate_shape, load_obj, sphere_approximation
from .svcd import svcd, svcd_discrete
from .traj import LinearTwistSegment, deserialize, serialize
from .train import random_start_pose, random_twist

PROBLEM_MAGIC = b"SVCPROB1"

IN_DOMAIN = "in_domain"
OUT_OF_DOMAIN = "out_of_domain"


@dataclass
class BenchmarkProblem:
    static_id: int
    moving_id: int
    pa: Pose
    traj: object
    label: bool
    max_pen: float
    domain: str

    def key(self):
        return (self.static_id, self.moving_id)


# ---------------------------------------------------------------------------
# Pool files: rebuildable shape lists.
# ---------------------------------------------------------------------------

def save_pool_spec(entries: list[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump({"shapes": entries}, fh, indent=1, sort_keys=True)


def load_pool_spec(path) -> tuple[list[ShapeModel], list[dict]]:
    with open(path) as fh:
        spec = json.load(fh)
    shapes = []
    for e in spec["shapes"]:
        if "obj" in e:
            shapes.append(load_obj(e["obj"], seed=e.get("seed", 0),
                                   scale=e.get("scale", 1.0)))
        else:
            shapes.append(generate_shape(e["kind"], e.get("params"),
                                         seed=e.get("seed", 0),
                                         surface_density=e.get("surface_density", 4096.0)))
    return shapes, spec["shapes"]


# ---------------------------------------------------------------------------
# Problem generation.
# ---------------------------------------------------------------------------

def gen_problems(pool, count: int, seed: int, near_contact: bool = True,
                 domain: str = IN_DOMAIN, balance: bool = True,
                 eps_std: float = 0.03, label_n_t: int = NEAR_CONTACT_N_T,
                 moving_pool=None) -> list[BenchmarkProblem]:
    """Labeled benchmark problems over a shape pool.

    near_contact: translate the static obstacle by the closest-approach vector
    of the sweep plus N(0, (eps_std * scale)^2) noise, then re-label; with
    balance the two label buckets fill to an exact half split.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xBEAC)))
    statics = pool
    movers = moving_pool if moving_pool is not None else pool
    want_pos = count // 2
    want_neg = count - want_pos
    n_pos = n_neg = 0
    out: list[BenchmarkProblem] = []
    attempts = 0
    while len(out) < count:
        attempts += 1
        if attempts > 200 * count:
            raise RuntimeError("problem generation could not balance labels")
        si = int(rng.integers(len(statics)))
        mi = int(rng.integers(len(movers)))
        a, b = statics[si], movers[mi]
        start = random_start_pose(rng, a, b)
        xi = random_twist(rng, 0.5 * (a.scale_hint + b.scale_hint))
        traj = LinearTwistSegment(start, xi)
        pa = Pose.identity()
        if near_contact:
            _, _, delta = closest_approach_vector(a, pa, b, traj)
            eps = rng.normal(size=3) * (eps_std * a.scale_hint)
            pa = Pose(pa.rotation, pa.translation + delta + eps)
        res = oracle_dense(a, pa, b, traj, n_t=label_n_t)
        if balance:
            if res.label and n_pos >= want_pos:
                continue
            if not res.label and n_neg >= want_neg:
                continue
        if res.label:
            n_pos += 1
        else:
            n_neg += 1
        out.append(BenchmarkProblem(si, mi, pa, traj, res.label, res.max_pen, domain))
    return out


def gen_tunneling_problems(pool_walls, pool_movers, count: int, seed: int,
                           domain: str = IN_DOMAIN,
                           label_n_t: int = NEAR_CONTACT_N_T) -> list[BenchmarkProblem]:
    """Thin-wall crossing problems that defeat sparse waypoint checks.

    Trajectories are straight stabs through a wall, offset so the low
    waypoint counts (2..4) all sample free space; roughly half are nudged
    sideways to miss, keeping labels balanced.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x7C4)))
    out = []
    k = 0
    while len(out) < count:
        k += 1
        si = int(rng.integers(len(pool_walls)))
        mi = int(rng.integers(len(pool_movers)))
        a, b = pool_walls[si], pool_movers[mi]
        axis = rng.integers(3)
        d = np.zeros(3)
        d[axis] = 1.0
        lo_a, hi_a = a.aabb()
        half_wall = 0.5 * (hi_a[axis] - lo_a[axis])
        rb = b.bounding_radius()
        # Start and length chosen so waypoints at t in {0, 1/3, 1/2, 2/3, 1}
        # are clear of the wall slab.
        margin = half_wall + rb + 0.02
        x0 = -(margin + rng.uniform(0.05, 0.25) * a.scale_hint)
        length = -2.4 * x0
        miss = len(out) % 2 == 1
        lateral = np.zeros(3)
        if miss:
            other = [ax for ax in range(3) if ax != axis]
            off_axis = other[int(rng.integers(2))]
            lo, hi = lo_a[off_axis], hi_a[off_axis]
            lateral[off_axis] = hi + rb + 0.05 * a.scale_hint
        start = Pose(np.eye(3), d * x0 + lateral)
        xi = Twist(d * length, np.zeros(3))
        traj = LinearTwistSegment(start, xi)
        res = oracle_dense(a, Pose.identity(), b, traj, n_t=label_n_t)
        if res.label == miss:
            continue  # construction failed for this geometry; redraw
        out.append(BenchmarkProblem(si, mi, Pose.identity(), traj,
                                    res.label, res.max_pen, domain))
        if k > 200 * count:
            raise RuntimeError("tunneling construction kept failing")
    return out


def save_problems(problems, path, meta: dict | None = None) -> None:
    header = json.dumps({"count": len(problems), "meta": meta or {}},
                        sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(PROBLEM_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for p in problems:
            rec = serialize(p.traj)
            fh.write(struct.pack("<II", p.static_id, p.moving_id))
            fh.write(p.pa.flat().astype("<f8").tobytes())
            fh.write(struct.pack("<I", len(rec)))
            fh.write(rec.astype("<f8").tobytes())
            fh.write(struct.pack("<Bd", 1 if p.label else 0, p.max_pen))
            fh.write(struct.pack("<B", 1 if p.domain == OUT_OF_DOMAIN else 0))


def load_problems(path) -> list[BenchmarkProblem]:
    with open(path, "rb") as fh:
        if fh.read(len(PROBLEM_MAGIC)) != PROBLEM_MAGIC:
            raise ValueError(f"{path}: not a problem file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        out = []
        for _ in range(header["count"]):
            si, mi = struct.unpack("<II", fh.read(8))
            pa = Pose.from_flat(np.frombuffer(fh.read(96), dtype="<f8"))
            (rlen,) = struct.unpack("<I", fh.read(4))
            traj = deserialize(np.frombuffer(fh.read(8 * rlen), dtype="<f8"))
            lab, pen = struct.unpack("<Bd", fh.read(9))
            (dom,) = struct.unpack("<B", fh.read(1))
            out.append(BenchmarkProblem(si, mi, pa, traj, bool(lab), pen,
                                        OUT_OF_DOMAIN if dom else IN_DOMAIN))
    return out


# ---------------------------------------------------------------------------
# Detector registry.
# ---------------------------------------------------------------------------

class Method:
    """A detector draw: per-shape preparation plus a per-problem query."""

    name = "abstract"

    def prepare(self, pool):
        return 0.0

    def query(self, problem, pool) -> bool:
        raise NotImplementedError


class OracleMethod(Method):
    name = "oracle-dense"

    def __init__(self, n_t: int = 257):
        self.n_t = int(n_t)

    def query(self, problem, pool):
        a = pool[problem.static_id]
        b = pool[problem.moving_id]
        return oracle_dense(a, problem.pa, b, problem.traj, n_t=self.n_t).label


class ConvexCellMethod(Method):
    def __init__(self, n_seg: int, activation: float, mode: str):
        self.n_seg = int(n_seg)
        self.activation = float(activation)
        self.mode = mode
        self.name = f"convexcell-{mode}"

    def query(self, problem, pool):
        a = pool[problem.static_id]
        b = pool[problem.moving_id]
        return convexcell(a, problem.pa, b, problem.traj, self.n_seg,
                          self.activation, self.mode).label


class SphereMeshMethod(Method):
    def __init__(self, n_interp: int, activation: float, voxel: float,
                 n_surface: int, mode: str):
        self.n_interp = int(n_interp)
        self.activation = float(activation)
        self.voxel = float(voxel)
        self.n_surface = int(n_surface)
        self.mode = mode
        self.name = f"spheremesh-{mode}"
        self._spheres = {}
        self._prep_time = {}

    def prepare(self, pool):
        import warnings

        total = 0.0
        for i, shape in enumerate(pool):
            t0 = time.perf_counter()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                self._spheres[i] = sphere_approximation(shape, self.voxel,
                                                        self.n_surface, seed=i)
            self._prep_time[i] = time.perf_counter() - t0
            total += self._prep_time[i]
        return total

    def prep_time(self, problem):
        return self._prep_time.get(problem.moving_id, 0.0)

    def query(self, problem, pool):
        a = pool[problem.static_id]
        spheres = self._spheres[problem.moving_id]
        if len(spheres.centers) == 0:
            return False
        return sphere_mesh(a, problem.pa, spheres, problem.traj,
                           self.n_interp, self.activation, self.mode).label


class NeuralMethod(Method):
    def __init__(self, ckpt: Checkpoint, mode: str = "continuous",
                 top_m: int = 32, n_waypoints: int = 8, n_reps: int | None = None):
        self.ckpt = ckpt
        self.mode = mode
        self.top_m = int(top_m)
        self.n_waypoints = int(n_waypoints)
        self.n_reps = int(n_reps) if n_reps else ckpt.n_reps
        suffix = {"continuous": "continuous", "discrete": "discrete",
                  "global": "global"}[mode]
        self.name = f"neural-{suffix}"
        self._reprs = {}
        self._static = {}
        self._prep_time = {}

    def prepare(self, pool):
        total = 0.0
        n = 1 if self.mode == "global" else self.n_reps
        for i, shape in enumerate(pool):
            t0 = time.perf_counter()
            self._reprs[i] = encode(shape, n, self.ckpt.alpha, self.ckpt.encoder)
            self._prep_time[i] = time.perf_counter() - t0
            total += self._prep_time[i]
        return total

    def prep_time(self, problem):
        return (self._prep_time.get(problem.static_id, 0.0)
                + self._prep_time.get(problem.moving_id, 0.0))

    def _posed_static(self, problem):
        key = (problem.static_id, problem.pa.flat().tobytes())
        if key not in self._static:
            from .latent import transform_repr

            self._static[key] = transform_repr(problem.pa, self._reprs[problem.static_id])
        return self._static[key]

    def query(self, problem, pool):
        zs = self._posed_static(problem)
        zm = self._reprs[problem.moving_id]
        if self.mode == "discrete":
            res = svcd_discrete(zs, zm, problem.traj, self.n_waypoints,
                                self.ckpt, top_m=self.top_m)
        else:
            res = svcd(zs, zm, problem.traj, self.top_m, self.ckpt)
        return res.probability > 0.5


def build_method(name: str, params: dict, ckpt: Checkpoint | None = None) -> Method:
    if name == "oracle-dense":
        return OracleMethod(**params)
    if name in ("convexcell-continuous", "convexcell-discrete"):
        return ConvexCellMethod(params["n_seg"], params["activation"],
                                name.split("-")[1])
    if name in ("spheremesh-continuous", "spheremesh-discrete"):
        return SphereMeshMethod(params["n_interp"], params["activation"],
                                params["voxel"], params["n_surface"],
                                name.split("-")[1])
    if name in ("neural-continuous", "neural-discrete", "neural-global"):
        if ckpt is None:
            raise ValueError(f"{name} needs a checkpoint")
        mode = name.split("-")[1]
        return NeuralMethod(ckpt, mode, top_m=params.get("top_m", 32),
                            n_waypoints=params.get("n_waypoints", 8))
    known = ("oracle-dense", "convexcell-continuous", "convexcell-discrete",
             "spheremesh-continuous", "spheremesh-discrete",
             "neural-continuous", "neural-discrete", "neural-global")
    raise ValueError(f"unknown method {name!r}; registered: {known}")


# Table-sourced hyperparameter sampling ranges per method family.
SWEEP_RANGES = {
    "convexcell-continuous": {"n_seg": ("int", 2, 256),
                              "activation": ("real", -0.01, 0.01)},
    "convexcell-discrete": {"n_seg": ("int", 2, 256),
                            "activation": ("real", -0.01, 0.01)},
    "spheremesh-continuous": {"n_interp": ("int", 2, 64),
                              "activation": ("real", -0.01, 0.01),
                              "voxel": ("real", 0.01, 1.0),
                              "n_surface": ("int", 0, 100)},
    "spheremesh-discrete": {"n_interp": ("int", 2, 64),
                            "activation": ("real", -0.01, 0.01),
                            "voxel": ("real", 0.01, 1.0),
                            "n_surface": ("int", 0, 100)},
    "neural-continuous": {"top_m": ("int", 2, 256)},
    "neural-discrete": {"n_waypoints": ("int", 2, 100),
                        "top_m": ("int", 2, 256)},
}


def sample_sweep(method: str, draws: int, seed: int,
                 ranges: dict | None = None) -> list[dict]:
    import zlib

    spec = ranges if ranges is not None else SWEEP_RANGES[method]
    rng = np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(method.encode()))))
    out = []
    for _ in range(draws):
        draw = {}
        for key, (kind, lo, hi) in spec.items():
            if kind == "int":
                draw[key] = int(rng.integers(lo, hi + 1))
            else:
                draw[key] = float(rng.uniform(lo, hi))
        out.append(draw)
    return out


@dataclass
class BenchRow:
    method: str
    draw: int
    params: dict
    domain: str
    accuracy: float
    n_problems: int
    time_amortized: float
    time_end_to_end: float


def run_method(method: Method, problems, pool, reps: int = 3) -> list[BenchRow]:
    """Evaluate one detector draw: accuracy per domain plus per-query times.

    Timing: reps full passes over the problem list; amortized excludes
    per-shape preparation (encoding, sphere fitting), end-to-end adds each
    problem's share of it.
    """
    method.prepare(pool)
    preds = [method.query(p, pool) for p in problems]

    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        for p in problems:
            method.query(p, pool)
        times.append((time.perf_counter() - t0) / len(problems))
    amortized = float(np.median(times))
    prep = 0.0
    if hasattr(method, "prep_time"):
        prep = float(np.mean([method.prep_time(p) for p in problems]))

    rows = []
    for domain in (IN_DOMAIN, OUT_OF_DOMAIN):
        sel = [k for k, p in enumerate(problems) if p.domain == domain]
        if not sel:
            continue
        acc = float(np.mean([preds[k] == problems[k].label for k in sel]))
        rows.append(BenchRow(method.name, -1, {}, domain, acc, len(sel),
                             amortized, amortized + prep))
    return rows
