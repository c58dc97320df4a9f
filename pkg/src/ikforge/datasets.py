"""Experiment datasets: uniform, singular, nonsingular, unreachable, trajectory.

A :class:`Dataset` stores joint configurations (``NaN`` rows for pose-only
samples) next to the poses, as arrays, so that batched consumers never loop
over Python objects.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from ikforge import __version__
from ikforge import quaternion as quat
from ikforge.chain import ChainSpec, Pose, fk_batch, min_singular_value, random_config

KINDS = ("uniform", "singular", "nonsingular", "unreachable", "trajectory")

NEAR_SINGULAR = 0.01
NONSINGULAR = 0.1
EXACT_SINGULAR = 1e-6

# radius ranges (multiples of total length) giving mean target norms of
# 3.25 m, 1.95 m and 5.28 m on the builtin chains
UNREACHABLE_RANGES = {
    "planar3": (1.5, 3.5),
    "arm6": (1.25, 2.232142857142857),
    "chain15": (1.5, 3.0714285714285716),
}


@dataclass
class PoseSample:
    pose: Pose
    config: np.ndarray | None = None


@dataclass
class Dataset:
    chain_name: str
    kind: str
    configs: np.ndarray  # (N, n), NaN rows for pose-only samples
    positions: np.ndarray  # (N, 3)
    orientations: np.ndarray  # (N, 4), w >= 0
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        self.configs = np.asarray(self.configs, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float)
        self.orientations = quat.canonical(np.asarray(self.orientations, dtype=float))
        if not (len(self.configs) == len(self.positions) == len(self.orientations)):
            raise ValueError("configs, positions and orientations differ in length")

    def __len__(self):
        return len(self.positions)

    def __getitem__(self, i) -> PoseSample:
        c = self.configs[i]
        return PoseSample(Pose(self.positions[i], self.orientations[i]),
                          None if np.isnan(c).all() else c.copy())

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def has_configs(self):
        return ~np.isnan(self.configs).all(axis=1)

    def poses(self):
        return [Pose(p, q) for p, q in zip(self.positions, self.orientations)]

    def subset(self, index, kind=None):
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.intp)
        return Dataset(self.chain_name, kind or self.kind, self.configs[index],
                       self.positions[index], self.orientations[index], self.seed, dict(self.meta))

    @classmethod
    def from_configs(cls, chain: ChainSpec, kind, configs, seed=None, **meta):
        configs = np.atleast_2d(np.asarray(configs, dtype=float))
        p, q = fk_batch(chain, configs)
        return cls(chain.name, kind, configs, p, q, seed, meta)


def sample_uniform(chain: ChainSpec, count: int, seed: int) -> Dataset:
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    return Dataset.from_configs(chain, "uniform", random_config(chain, rng, count), seed)


def _in_limits(chain, index, value):
    return chain.lower[index] <= value <= chain.upper[index]


def make_singular_set(chain: ChainSpec, count: int, seed: int, max_draws: int | None = None) -> Dataset:
    """Configurations on (or, for chain15, near) singular manifolds.

    planar3: elbow angle 0 (or pi when inside the limits). arm6: alternating
    elbow-stretch (joint 3 = 0) and wrist-aligned (joint 5 = 0) samples.
    chain15: pitch and roll joints drawn close to zero around the stretched
    posture, accepted when the smallest singular value is below 0.01.
    Every sample is re-checked against its singular-value bound.
    """
    rng = np.random.default_rng(seed)
    if chain.name == "planar3":
        choices = [v for v in (0.0, math.pi) if _in_limits(chain, 1, v)]
        configs = random_config(chain, rng, count)
        configs[:, 1] = rng.choice(choices, size=count)
        bound = EXACT_SINGULAR
    elif chain.name == "arm6":
        configs = random_config(chain, rng, count)
        elbow = np.arange(count) % 2 == 0
        configs[elbow, 2] = 0.0
        configs[~elbow, 4] = 0.0
        bound = EXACT_SINGULAR
    elif chain.name == "chain15":
        max_draws = max_draws or 200 * count
        bent = np.array([not np.allclose(j.axis, [0.0, 0.0, 1.0]) for j in chain.joints])
        accepted = []
        draws = 0
        while len(accepted) < count:
            if draws >= max_draws:
                raise RuntimeError(f"rejection budget exceeded after {draws} draws")
            cand = random_config(chain, rng, 256)
            cand[:, bent] = rng.normal(0.0, 0.05, size=(256, int(bent.sum())))
            cand = np.clip(cand, chain.lower, chain.upper)
            draws += len(cand)
            keep = cand[min_singular_value(chain, cand) < NEAR_SINGULAR]
            accepted.extend(keep[: count - len(accepted)])
        configs = np.array(accepted)
        bound = NEAR_SINGULAR
    else:
        raise ValueError(f"no singular manifold known for chain {chain.name!r}")
    sigma = min_singular_value(chain, configs)
    if np.any(sigma >= bound):
        raise RuntimeError("generated configuration failed the singularity check")
    return Dataset.from_configs(chain, "singular", configs, seed)


def filter_nonsingular(chain: ChainSpec, dataset: Dataset, sigma_threshold: float = NONSINGULAR) -> Dataset:
    if not dataset.has_configs.all():
        raise ValueError("filter_nonsingular needs configurations for every sample")
    sigma = min_singular_value(chain, dataset.configs) if len(dataset) else np.zeros(0)
    keep = np.flatnonzero(sigma > sigma_threshold)
    out = dataset.subset(keep, kind="nonsingular")
    out.meta["sigma_threshold"] = sigma_threshold
    return out


def make_nonsingular_set(chain: ChainSpec, count: int, seed: int,
                         sigma_threshold: float = NONSINGULAR) -> Dataset:
    """Uniform draws with near-singular configurations removed, topped up to ``count``."""
    rng = np.random.default_rng(seed)
    chunks = []
    have = 0
    while have < count:
        cand = random_config(chain, rng, max(count, 256))
        cand = cand[min_singular_value(chain, cand) > sigma_threshold]
        chunks.append(cand)
        have += len(cand)
    out = Dataset.from_configs(chain, "nonsingular", np.concatenate(chunks)[:count], seed)
    out.meta["sigma_threshold"] = sigma_threshold
    return out


def random_quaternions(rng, count):
    """Uniformly distributed unit quaternions (Shoemake's method)."""
    u1, u2, u3 = rng.random((3, count))
    a, b = np.sqrt(1.0 - u1), np.sqrt(u1)
    q = np.stack([a * np.sin(2 * np.pi * u2), a * np.cos(2 * np.pi * u2),
                  b * np.sin(2 * np.pi * u3), b * np.cos(2 * np.pi * u3)], axis=1)
    return quat.canonical(q)


def make_unreachable_set(chain: ChainSpec, count: int, radius_range=None, seed: int = 0) -> Dataset:
    """Pose-only targets outside the reach sphere.

    Radii are uniform in ``radius_range`` times the chain's total length.
    Planar chains get in-plane directions and yaw-only orientations.
    """
    if radius_range is None:
        radius_range = UNREACHABLE_RANGES.get(chain.name, (1.5, 3.5))
    r_lo, r_hi = radius_range
    if not r_lo > 1.0 or r_hi < r_lo:
        raise ValueError("radius range must satisfy 1 < r_lo <= r_hi")
    rng = np.random.default_rng(seed)
    radius = rng.uniform(r_lo, r_hi, count) * chain.total_length
    if chain.is_planar:
        ang = rng.uniform(-np.pi, np.pi, count)
        direction = np.stack([np.cos(ang), np.sin(ang), np.zeros(count)], axis=1)
        yaw = rng.uniform(-np.pi, np.pi, count)
        q = quat.from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    else:
        direction = rng.normal(size=(count, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        q = random_quaternions(rng, count)
    configs = np.full((count, chain.dof), np.nan)
    out = Dataset(chain.name, "unreachable", configs, direction * radius[:, None], q, seed)
    out.meta["radius_range"] = tuple(radius_range)
    return out


def make_line_trajectory(chain: ChainSpec, start: Pose, end: Pose, waypoint_count: int) -> Dataset:
    """Straight line in position, constant-speed slerp in orientation."""
    if waypoint_count < 2:
        raise ValueError("a trajectory needs at least two waypoints")
    t = np.linspace(0.0, 1.0, waypoint_count)
    pos = (1.0 - t)[:, None] * start.position + t[:, None] * end.position
    pos[0], pos[-1] = start.position, end.position
    q = quat.slerp(start.orientation, end.orientation, t)
    q[0], q[-1] = start.orientation, end.orientation
    configs = np.full((waypoint_count, chain.dof), np.nan)
    return Dataset(chain.name, "trajectory", configs, pos, q)


def swap_in_unreachable(dataset: Dataset, unreachable: Dataset, seed: int) -> Dataset:
    """Replace uniformly chosen samples of ``dataset`` by the unreachable poses."""
    if len(unreachable) > len(dataset):
        raise ValueError("more unreachable samples than dataset entries")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(dataset), size=len(unreachable), replace=False)
    out = dataset.subset(np.arange(len(dataset)))
    out.configs[idx] = np.nan
    out.positions[idx] = unreachable.positions
    out.orientations[idx] = unreachable.orientations
    out.meta["unreachable_swapped"] = len(unreachable)
    return out


# -- CSV ----------------------------------------------------------------------

def _header(dof):
    return [f"q{i + 1}" for i in range(dof)] + ["px", "py", "pz", "qw", "qx", "qy", "qz"]


def write_csv(dataset: Dataset, destination=None, **meta):
    """Write ``q1..qn,px,py,pz,qw,qx,qy,qz`` rows behind a ``#`` metadata line.

    ``destination`` may be a path or a text stream; with ``None`` the text is
    returned.
    """
    buf = io.StringIO()
    info = {"chain": dataset.chain_name, "kind": dataset.kind, "seed": dataset.seed,
            "version": __version__, **dataset.meta, **meta}
    buf.write("# ikforge-dataset " + " ".join(f"{k}={v}" for k, v in info.items()).replace("\n", " ") + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_header(dataset.configs.shape[1]))
    for c, p, q in zip(dataset.configs, dataset.positions, dataset.orientations):
        cells = ["" if np.isnan(v) else repr(float(v)) for v in c]
        w.writerow(cells + [repr(float(v)) for v in p] + [repr(float(v)) for v in q])
    text = buf.getvalue()
    if destination is None:
        return text
    if hasattr(destination, "write"):
        destination.write(text)
    else:
        with open(destination, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return None


def _parse_meta(line):
    meta = {}
    for tok in line.lstrip("#").split()[1:]:
        if "=" in tok:
            k, v = tok.split("=", 1)
            meta[k] = v
    return meta


def read_csv(source, chain: ChainSpec) -> Dataset:
    """Read a dataset file written by :func:`write_csv` for ``chain``."""
    if hasattr(source, "read"):
        text = source.read()
    elif isinstance(source, str) and "\n" in source:
        text = source
    else:
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            meta.update(_parse_meta(line))
        elif line.strip():
            body.append(line)
    if not body:
        raise ValueError("dataset file has no header row")
    rows = list(csv.reader(body))
    header = rows[0]
    if header != _header(chain.dof):
        raise ValueError(f"column mismatch: expected {len(_header(chain.dof))} columns for "
                         f"chain {chain.name!r} with {chain.dof} joints, got {len(header)}")
    n = chain.dof
    configs = np.full((len(rows) - 1, n), np.nan)
    data = np.empty((len(rows) - 1, 7))
    for i, row in enumerate(rows[1:]):
        if len(row) != n + 7:
            raise ValueError(f"row {i + 2}: expected {n + 7} cells, got {len(row)}")
        try:
            qs = [float(v) if v.strip() else np.nan for v in row[:n]]
            data[i] = [float(v) for v in row[n:]]
        except ValueError as err:
            raise ValueError(f"row {i + 2}: non-numeric cell ({err})") from None
        if any(np.isnan(qs)) and not all(np.isnan(qs)):
            raise ValueError(f"row {i + 2}: partially empty configuration")
        configs[i] = qs
    kind = meta.get("kind", "uniform")
    seed = meta.get("seed")
    seed = int(seed) if seed not in (None, "None") else None
    if meta.get("chain", chain.name) != chain.name:
        raise ValueError(f"dataset is for chain {meta['chain']!r}, not {chain.name!r}")
    return Dataset(chain.name, kind if kind in KINDS else "uniform", configs,
                   data[:, :3], data[:, 3:], seed)
