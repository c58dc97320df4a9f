"""Evaluation harness: solve rates, infeasible-prediction rate, timing, continuity.

Every solver is wrapped as a callable ``pose -> config``. The harness times
only that call, then recomputes the pose errors with its own forward
kinematics; whatever the solver reports about itself is ignored.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import asdict, dataclass

import numpy as np

from ikforge import analytical, numerical
from ikforge import quaternion as quat
from ikforge.chain import ChainSpec, Pose, fk_batch, is_feasible
from ikforge.distal import TrainedModel, predict, predict_batch

WARMUP = 10
JUMP_THRESHOLD = 0.5

CSV_COLUMNS = ("solver", "dataset", "n_queries", "solve_rate", "eta", "eps_pos_mean", "eps_pos_std",
               "eps_ori_mean", "eps_ori_std", "mean_target_norm", "time_ms_mean", "time_ms_std",
               "discontinuities")


@dataclass(frozen=True)
class Thresholds:
    pos: float = 0.01
    ori: float = 0.03

    def __post_init__(self):
        if not (self.pos > 0 and self.ori > 0):
            raise ValueError("thresholds must be > 0")


@dataclass
class Report:
    solver: str
    dataset: str
    n_queries: int
    solve_rate: float
    eta: float
    eps_pos_mean: float
    eps_pos_std: float
    eps_ori_mean: float
    eps_ori_std: float
    mean_target_norm: float
    time_ms_mean: float
    time_ms_std: float
    discontinuities: int | None = None


class ChainMismatchError(ValueError):
    pass


# -- solver adapters ----------------------------------------------------------

class Solver:
    """A named ``pose -> config`` callable bound to one chain.

    ``seeded`` solvers accept the previous configuration as a starting
    point (used for trajectories); ``batch`` solvers also expose
    ``solve_batch(positions, orientations)``.
    """

    name = "solver"
    seeded = False
    batch = False

    def __init__(self, chain: ChainSpec):
        self.chain = chain

    def __call__(self, pose: Pose, seed_config=None):
        raise NotImplementedError


class AnalyticalSolver(Solver):
    """Closed-form solver; returns the first in-limit branch, else the first branch.

    Unreachable targets yield the zero configuration.
    """

    name = "analytical"

    def __call__(self, pose, seed_config=None):
        branches = analytical.solve(self.chain, pose).solutions
        for c in branches:
            if is_feasible(self.chain, c):
                return c
        return branches[0] if branches else np.zeros(self.chain.dof)


class NumericalSolver(Solver):
    name = "numerical"
    seeded = True

    def __init__(self, chain, opts: numerical.NumericalOptions | None = None):
        super().__init__(chain)
        self.opts = opts or numerical.NumericalOptions()
        self.name = f"numerical-{self.opts.strategy}"

    def __call__(self, pose, seed_config=None):
        return numerical.solve(self.chain, pose, self.opts, seed_config=seed_config).config


class DistalSolver(Solver):
    name = "distal"
    batch = True

    def __init__(self, chain, model: TrainedModel):
        if model.chain_name != chain.name or model.dof != chain.dof:
            raise ChainMismatchError(f"model is for {model.chain_name!r}, chain is {chain.name!r}")
        super().__init__(chain)
        self.model = model

    def __call__(self, pose, seed_config=None):
        return predict(self.model, pose)

    def solve_batch(self, positions, orientations):
        return predict_batch(self.model, positions, orientations)


def make_solver(chain: ChainSpec, method: str, model: TrainedModel | None = None, **kw) -> Solver:
    if method == "analytical":
        return AnalyticalSolver(chain)
    if method in ("numerical", "pinv", "sqp", "combined"):
        strategy = "combined" if method == "numerical" else method
        return NumericalSolver(chain, numerical.NumericalOptions(strategy=strategy, **kw))
    if method in ("distal", "dt"):
        if model is None:
            raise ValueError("the distal solver needs a trained model")
        return DistalSolver(chain, model)
    raise ValueError(f"unknown method {method!r}")


# -- metrics ------------------------------------------------------------------

def pose_errors(chain: ChainSpec, configs, positions, orientations):
    """Position and orientation errors of ``configs`` recomputed from scratch."""
    p, q = fk_batch(chain, np.asarray(configs, dtype=float))
    return (np.linalg.norm(p - positions, axis=-1),
            quat.angle_between(q, quat.normalize(orientations)))


def infeasible_mask(chain: ChainSpec, configs):
    configs = np.asarray(configs, dtype=float)
    return np.any((configs < chain.lower) | (configs > chain.upper), axis=-1)


def count_discontinuities(configs, threshold: float = JUMP_THRESHOLD) -> int:
    """Consecutive pairs whose max-norm joint jump exceeds ``threshold``."""
    configs = [np.asarray(c, dtype=float) for c in configs]
    if len(configs) < 2:
        raise ValueError("need at least two configurations")
    if len({c.shape for c in configs}) != 1:
        raise ValueError("configurations differ in length")
    arr = np.stack(configs)
    return int(np.sum(np.max(np.abs(np.diff(arr, axis=0)), axis=1) > threshold))


def _check_chain(solver, dataset):
    if solver.chain.name != dataset.chain_name:
        raise ChainMismatchError(f"solver chain {solver.chain.name!r} does not match "
                                 f"dataset chain {dataset.chain_name!r}")


def _summarize(solver, dataset, configs, times, thresholds, discontinuities=None, name=None):
    chain = solver.chain
    configs = np.asarray(configs, dtype=float)
    eps_pos, eps_ori = pose_errors(chain, configs, dataset.positions, dataset.orientations)
    solved = (eps_pos < thresholds.pos) & (eps_ori < thresholds.ori)
    times_ms = np.asarray(times, dtype=float) * 1e3
    return Report(
        solver=name or solver.name,
        dataset=dataset_label(dataset),
        n_queries=len(configs),
        solve_rate=float(np.mean(solved)),
        eta=float(np.mean(infeasible_mask(chain, configs))),
        eps_pos_mean=float(np.mean(eps_pos)), eps_pos_std=float(np.std(eps_pos)),
        eps_ori_mean=float(np.mean(eps_ori)), eps_ori_std=float(np.std(eps_ori)),
        mean_target_norm=float(np.mean(np.linalg.norm(dataset.positions, axis=1))),
        time_ms_mean=float(np.mean(times_ms)), time_ms_std=float(np.std(times_ms)),
        discontinuities=discontinuities,
    )


def dataset_label(dataset):
    return dataset.meta.get("label") or f"{dataset.chain_name}-{dataset.kind}"


def _warm_up(solver, dataset):
    for i in range(min(WARMUP, len(dataset))):
        solver(Pose(dataset.positions[i], dataset.orientations[i]))


def run_queries(solver: Solver, dataset, warmup=True):
    """Solve every pose sequentially; returns ``(configs, per-query seconds)``."""
    _check_chain(solver, dataset)
    poses = dataset.poses()
    if warmup:
        _warm_up(solver, dataset)
    configs = np.empty((len(poses), solver.chain.dof))
    times = np.empty(len(poses))
    clock = time.perf_counter
    for i, pose in enumerate(poses):
        t0 = clock()
        c = solver(pose)
        times[i] = clock() - t0
        configs[i] = c
    return configs, times


def run_batched(solver: Solver, dataset, batch_size=32, warmup=True):
    """Solve in batches; each query is charged its batch's time divided by its size."""
    _check_chain(solver, dataset)
    if not solver.batch:
        raise ValueError(f"solver {solver.name!r} has no batched mode")
    pos, ori = dataset.positions, dataset.orientations
    if warmup:
        for _ in range(WARMUP):
            solver.solve_batch(pos[:batch_size], ori[:batch_size])
    configs = np.empty((len(pos), solver.chain.dof))
    times = np.empty(len(pos))
    clock = time.perf_counter
    for start in range(0, len(pos), batch_size):
        sl = slice(start, start + batch_size)
        t0 = clock()
        out = solver.solve_batch(pos[sl], ori[sl])
        dt = clock() - t0
        configs[sl] = out
        times[sl] = dt / len(out)
    return configs, times


def evaluate(solver: Solver, dataset, thresholds: Thresholds = Thresholds(), batch_size=None,
             warmup=True) -> Report:
    """Solve every query and score it with an independent FK recheck."""
    if batch_size:
        configs, times = run_batched(solver, dataset, batch_size, warmup)
        name = f"{solver.name}-batch{batch_size}"
    else:
        configs, times = run_queries(solver, dataset, warmup)
        name = None
    return _summarize(solver, dataset, configs, times, thresholds, name=name)


def evaluate_trajectory(solver: Solver, dataset, thresholds: Thresholds = Thresholds(),
                        jump_threshold: float = JUMP_THRESHOLD, warmup=True):
    """Solve the waypoints in order and count solution switches.

    Seeded solvers start each waypoint from the previous solution.
    Returns ``(report, configs)``.
    """
    _check_chain(solver, dataset)
    if warmup:
        _warm_up(solver, dataset)
    poses = dataset.poses()
    configs = np.empty((len(poses), solver.chain.dof))
    times = np.empty(len(poses))
    prev = None
    clock = time.perf_counter
    for i, pose in enumerate(poses):
        t0 = clock()
        c = solver(pose, seed_config=prev) if solver.seeded else solver(pose)
        times[i] = clock() - t0
        configs[i] = c
        prev = configs[i]
    jumps = count_discontinuities(configs, jump_threshold)
    return _summarize(solver, dataset, configs, times, thresholds, jumps), configs


# -- report output ------------------------------------------------------------

def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if math.isnan(v):
        return "nan"
    return f"{v:.6g}"


def _cells(report: Report):
    d = asdict(report)
    return [_fmt(d[k]) for k in CSV_COLUMNS]


def emit_report(reports, fmt: str = "csv") -> str:
    """Render one report or a list of reports as CSV or a markdown table."""
    if isinstance(reports, Report):
        reports = [reports]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in reports:
            w.writerow(_cells(r))
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(CSV_COLUMNS) + " |",
                 "|" + "|".join("---" for _ in CSV_COLUMNS) + "|"]
        lines += ["| " + " | ".join(_cells(r)) + " |" for r in reports]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def _from_cells(cells):
    if len(cells) != len(CSV_COLUMNS):
        raise ValueError(f"expected {len(CSV_COLUMNS)} columns, got {len(cells)}")
    d = dict(zip(CSV_COLUMNS, cells))
    out = {"solver": d["solver"], "dataset": d["dataset"], "n_queries": int(d["n_queries"]),
           "discontinuities": int(d["discontinuities"]) if d["discontinuities"] else None}
    for k in CSV_COLUMNS[3:-1]:
        out[k] = float(d[k])
    return Report(**out)


def parse_report(text: str):
    """Read reports back from :func:`emit_report` output (CSV or markdown)."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if lines and lines[0].startswith("|"):
        rows = [[c.strip() for c in ln.strip().strip("|").split("|")] for ln in lines
                if not set(ln.replace("|", "").strip()) <= {"-"}]
    else:
        rows = list(csv.reader(lines))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("report header does not match the schema")
    return [_from_cells(r) for r in rows[1:]]
