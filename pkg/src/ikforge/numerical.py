"""Iterative IK: local least-squares solvers with random restarts.

Two local solvers share the same restart/timeout contract:

* ``solve_pinv``: damped least-squares steps on the Jacobian pseudo-inverse,
* ``solve_sqp``: projected damped Gauss-Newton on ``phi = e^T e`` inside the
  joint box, with an adaptive damping factor.

``solve`` runs the first with half the time budget and, if that fails, the
second with the remainder. Iterates are clamped to the joint limits at
every step, so any returned configuration is feasible.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from ikforge._kernels import chain_tables, lm_chunk, pinv_chunk, rotation_log
from ikforge.chain import ChainSpec, Pose, check_config, pose_and_jacobian, random_config
from ikforge.metrics import LossWeights, combined_loss

STEP_CAP = 0.5
STALL_WINDOW = 5
STALL_GAIN = 1e-12
MU_INIT = 1e-3
MU_MIN = 1e-12
MU_MAX = 1e8
CHUNK = 16
W_POS = LossWeights().w

STRATEGIES = ("pinv", "sqp", "combined")


class Status(str, Enum):
    SOLVED = "solved"
    NOT_SOLVED = "not_solved"
    UNREACHABLE_BUDGET = "unreachable_budget"


@dataclass(frozen=True)
class NumericalOptions:
    """Solver settings.

    ``max_restarts`` caps random restarts on top of the wall-clock budget;
    with a cap and a generous ``max_time`` the solver is fully deterministic.
    """

    max_time: float = 0.005
    max_iterations: int = 100
    pos_tolerance: float = 1e-4
    ori_tolerance: float = 1e-4
    damping: float = 0.03
    restart_seed: int = 0
    strategy: str = "combined"
    max_restarts: int | None = None

    def validate(self):
        if not self.max_time > 0:
            raise ValueError("max_time must be > 0")
        if not (self.pos_tolerance > 0 and self.ori_tolerance > 0):
            raise ValueError("tolerances must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.damping < 0:
            raise ValueError("damping must be >= 0")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.max_restarts is not None and self.max_restarts < 0:
            raise ValueError("max_restarts must be >= 0")
        return self


@dataclass
class IkResult:
    status: Status
    config: np.ndarray
    eps_pos: float
    eps_ori: float
    iterations: int = 0
    restarts: int = 0
    wall_time: float = 0.0

    @property
    def solved(self) -> bool:
        return self.status is Status.SOLVED

    def loss(self, weights=LossWeights()):
        return combined_loss(self.eps_pos, self.eps_ori, weights)


def _twist(p, r, target_p, target_r):
    return np.concatenate([target_p - p, rotation_log(target_r @ r.T)])


def pose_twist_error(current: Pose, target: Pose):
    """6-vector ``(p* - p, log(R* R^T))``; the rotation part is in the world frame."""
    return _twist(current.position, current.rotation_matrix(),
                  target.position, target.rotation_matrix())


def _dls(jac, err, damping):
    if damping == 0.0:
        return np.linalg.pinv(jac) @ err
    m, n = jac.shape
    if n < m:
        # same step, solved in the smaller joint space
        return np.linalg.solve(jac.T @ jac + damping * damping * np.eye(n), jac.T @ err)
    return jac.T @ np.linalg.solve(jac @ jac.T + damping * damping * np.eye(m), err)


def pinv_step(chain: ChainSpec, config, target: Pose, damping=1e-3):
    """Damped least-squares step ``J^T (J J^T + d^2 I)^-1 e``."""
    config = check_config(chain, config)
    p, r, jac = pose_and_jacobian(chain, config)
    return _dls(jac, _twist(p, r, target.position, target.rotation_matrix()), damping)


class _Search:
    """Shared bookkeeping: clock, restarts, best-so-far.

    The local runs execute inside compiled kernels in chunks of ``CHUNK``
    steps; the clock is checked between chunks.
    """

    def __init__(self, chain, target, seed, opts, budget, rng):
        self.chain = chain
        self.tp = np.array(target.position, dtype=float)
        self.tr = np.ascontiguousarray(target.rotation_matrix(), dtype=float)
        self.tables = chain_tables(chain)
        self.lo = np.array(chain.lower, dtype=float)
        self.hi = np.array(chain.upper, dtype=float)
        self.opts = opts
        self.rng = rng
        self.start = time.perf_counter()
        self.deadline = self.start + budget
        self.iterations = 0
        self.restarts = 0
        self.exhausted = False
        # [loss, eps_pos, eps_ori, *theta]
        self.best = np.full(3 + chain.dof, np.inf)
        self.hist = np.empty(opts.max_iterations + 1)
        if seed is None:
            seed = random_config(chain, rng)
        self.theta = np.clip(check_config(chain, seed).astype(float), self.lo, self.hi)

    @property
    def kernel_args(self):
        return (*self.tables, self.tp, self.tr, self.lo, self.hi, self.theta, self.hist)

    def out_of_time(self):
        return time.perf_counter() >= self.deadline

    def restart(self):
        """Jump to a fresh uniform configuration; False when the restart cap is hit."""
        cap = self.opts.max_restarts
        if cap is not None and self.restarts >= cap:
            self.exhausted = True
            return False
        self.restarts += 1
        self.theta = random_config(self.chain, self.rng)
        return True

    def result(self, solved):
        loss, ep, eo = self.best[:3]
        if solved:
            status = Status.SOLVED
        elif self.exhausted:
            status = Status.UNREACHABLE_BUDGET
        else:
            status = Status.NOT_SOLVED
        return IkResult(status, self.best[3:].copy(), float(ep), float(eo), self.iterations, self.restarts,
                        time.perf_counter() - self.start)


def _run_pinv(chain, target, seed, opts, budget, rng):
    s = _Search(chain, target, seed, opts, budget, rng)
    while True:
        state = np.zeros(2, dtype=np.int64)
        while True:
            code = pinv_chunk(*s.kernel_args, state, CHUNK, opts.max_iterations, opts.damping, STEP_CAP,
                              opts.pos_tolerance, opts.ori_tolerance, STALL_WINDOW, STALL_GAIN, W_POS, s.best)
            s.iterations += int(state[1])
            state[1] = 0
            if code == 1:
                return s.result(True)
            if s.out_of_time():
                return s.result(False)
            if code == 2:
                break
        if not s.restart():
            return s.result(False)


def _run_sqp(chain, target, seed, opts, budget, rng, trace=None):
    s = _Search(chain, target, seed, opts, budget, rng)
    while True:
        state = np.zeros(3, dtype=np.int64)
        mu = np.full(1, MU_INIT)
        while True:
            code = lm_chunk(*s.kernel_args, state, mu, CHUNK, opts.max_iterations, MU_MIN, MU_MAX, STEP_CAP,
                            opts.pos_tolerance, opts.ori_tolerance, STALL_WINDOW, STALL_GAIN, W_POS, s.best)
            s.iterations += int(state[2])
            state[2] = 0
            if code or s.out_of_time():
                break
        if trace is not None:
            accepted = int(state[1])
            trace.append(("start", float(s.hist[0])))
            trace.extend(("accept", float(v)) for v in s.hist[1:accepted])
        if code == 1:
            return s.result(True)
        if code == 0 or not s.restart():
            return s.result(False)


def _prepare(opts, seed_config, chain):
    opts = (opts or NumericalOptions()).validate()
    if seed_config is not None:
        seed_config = check_config(chain, seed_config)
    return opts, np.random.default_rng(opts.restart_seed)


def solve_pinv(chain: ChainSpec, target: Pose, seed_config=None, opts: NumericalOptions | None = None) -> IkResult:
    opts, rng = _prepare(opts, seed_config, chain)
    return _run_pinv(chain, target, seed_config, opts, opts.max_time, rng)


def solve_sqp(chain: ChainSpec, target: Pose, seed_config=None, opts: NumericalOptions | None = None,
              trace=None) -> IkResult:
    """Box-constrained least squares with random restarts.

    If ``trace`` is a list, ``("start", phi)`` and ``("accept", phi)`` events
    are appended for every restart and accepted step.
    """
    opts, rng = _prepare(opts, seed_config, chain)
    return _run_sqp(chain, target, seed_config, opts, opts.max_time, rng, trace)


def _better(a: IkResult, b: IkResult) -> IkResult:
    if a.solved != b.solved:
        return a if a.solved else b
    return a if a.loss() <= b.loss() else b


def solve(chain: ChainSpec, target: Pose, opts: NumericalOptions | None = None, seed_config=None) -> IkResult:
    """Run the configured strategy (``combined`` by default)."""
    opts, rng = _prepare(opts, seed_config, chain)
    if opts.strategy == "pinv":
        return _run_pinv(chain, target, seed_config, opts, opts.max_time, rng)
    if opts.strategy == "sqp":
        return _run_sqp(chain, target, seed_config, opts, opts.max_time, rng)

    start = time.perf_counter()
    first = _run_pinv(chain, target, seed_config, opts, 0.5 * opts.max_time, rng)
    if first.solved:
        return first
    remaining = max(opts.max_time - (time.perf_counter() - start), 1e-9)
    second = _run_sqp(chain, target, first.config, opts, remaining, rng)
    best = replace(_better(first, second))
    best.iterations = first.iterations + second.iterations
    best.restarts = first.restarts + second.restarts
    best.wall_time = time.perf_counter() - start
    return best
