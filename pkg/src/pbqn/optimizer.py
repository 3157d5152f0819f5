"""Progressive batching L-BFGS driver and the SG / SVRG baselines.

Caching discipline for the multi-batch curvature vector: at the end of
iteration k the next sample S_{k+1} is drawn so that it shares O_k with
S_k, and g^{O_k}(x_k) is taken as a sub-average of the component gradients
already held for S_k. The pair (s_k, y_k) is completed and offered to the
memory at the start of iteration k+1, right after S_{k+1} is evaluated at
x_{k+1}, so no component gradient is evaluated twice.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .batching import (
    BatchControllerConfig,
    BatchSample,
    GradientWindow,
    TestResult,
    augment_sample,
    choose_variance_subset,
    ipqn_test,
    ipqn_variance,
    make_overlap_sample,
    next_batch_size,
    uniform_sample,
)
from .lbfgs import CurvatureMemory
from .linesearch import LineSearchConfig, armijo_backtrack, initial_steplength
from .problems import EvalCounter, FiniteSumProblem

__all__ = [
    "CurvatureMode",
    "StopConfig",
    "PbqnConfig",
    "SgConfig",
    "SvrgConfig",
    "IterationRecord",
    "Trajectory",
    "PbqnSolver",
    "run_pbqn",
    "run_sg",
    "run_svrg",
    "default_alpha_grid",
    "TuningError",
    "TuneResult",
    "tune_baseline",
]

Observer = Callable[[np.ndarray], dict]


class CurvatureMode(str, enum.Enum):
    FULL_OVERLAP = "fo"
    MULTI_BATCH = "mb"


@dataclass(frozen=True)
class StopConfig:
    max_fge: float = 100.0
    gradient_tolerance: float | None = None
    max_iterations: int = 100_000


@dataclass(frozen=True)
class PbqnConfig:
    controller: BatchControllerConfig = field(default_factory=BatchControllerConfig)
    linesearch: LineSearchConfig = field(default_factory=LineSearchConfig)
    memory_size: int = 10
    curvature_eps: float = 1e-2
    mode: CurvatureMode = CurvatureMode.MULTI_BATCH
    overlap_fraction: float = 0.25
    stop: StopConfig = field(default_factory=StopConfig)
    track_loss: bool = True

    def __post_init__(self):
        if self.memory_size < 1:
            raise ValueError("memory size must be at least 1")
        if not self.curvature_eps > 0:
            raise ValueError("curvature eps must be positive")
        if not 0 < self.overlap_fraction < 1:
            raise ValueError("overlap fraction must lie in (0, 1)")
        object.__setattr__(self, "mode", CurvatureMode(self.mode))


@dataclass(frozen=True)
class SgConfig:
    alpha: float
    batch_size: int = 1
    max_fge: float = 100.0
    log_every_fge: float = 0.1
    track_loss: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch size must be at least 1")


@dataclass(frozen=True)
class SvrgConfig:
    alpha: float
    inner_length: int | None = None
    max_fge: float = 100.0
    log_every_fge: float = 0.1
    track_loss: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")


@dataclass
class IterationRecord:
    """State after iteration ``k`` (``k = 0`` is the starting point).

    Evaluation counters are cumulative over the run.
    """

    k: int
    batch_size: int
    alpha: float
    halvings: int
    pair_admitted: bool
    component_grad_evals: int
    component_value_evals: int
    train_loss: float
    grad_norm: float
    alpha0: float = math.nan
    ls_satisfied: bool = True
    overlap_size: int = 0
    zero_step: bool = False
    grew: bool = False
    windowed: bool = False
    extras: dict = field(default_factory=dict)


@dataclass
class Trajectory:
    records: list[IterationRecord]
    x: np.ndarray
    status: str
    counter: EvalCounter
    n: int

    def batch_sizes(self) -> list[int]:
        return [r.batch_size for r in self.records]

    def fge(self) -> np.ndarray:
        return np.array([r.component_grad_evals for r in self.records]) / self.n


@dataclass
class _PendingPair:
    s: np.ndarray
    g_overlap: np.ndarray
    overlap: np.ndarray


class PbqnSolver:
    """Progressive batching L-BFGS, one :meth:`step` per outer iteration."""

    def __init__(self, problem: FiniteSumProblem, config: PbqnConfig, x0,
                 rng: np.random.Generator | None = None, observer: Observer | None = None):
        self.problem = problem
        self.config = config
        self.rng = rng if rng is not None else np.random.default_rng(config.controller.rng_seed)
        self.observer = observer
        self.x = np.array(x0, dtype=float)
        if not np.all(np.isfinite(self.x)):
            raise ValueError("x0 must be finite")
        self.memory = CurvatureMemory(config.memory_size)
        self.counter = EvalCounter()
        self.window = GradientWindow(config.controller.window_length)
        self.k = 0
        self.size = min(config.controller.initial_size, problem.n)
        self.sample: BatchSample = uniform_sample(problem.n, self.size, self.rng)
        self.converged = False
        self._pending: _PendingPair | None = None
        self.records: list[IterationRecord] = []

    def _record(self, **kw) -> IterationRecord:
        loss = self.problem.full_value(self.x) if self.config.track_loss else math.nan
        extras = self.observer(self.x) if self.observer is not None else {}
        return IterationRecord(
            k=self.k,
            component_grad_evals=self.counter.grad_evals,
            component_value_evals=self.counter.value_evals,
            train_loss=loss,
            extras=extras,
            **kw,
        )

    def initial_record(self) -> IterationRecord:
        return self._record(batch_size=len(self.sample), alpha=0.0, halvings=0,
                            pair_admitted=False, grad_norm=math.nan)

    def _ipqn(self, ev, sample, g, hg):
        """Run the batch-size test on the current sample.

        Returns (result, variance, norm of H g used on the right-hand side,
        whether the moving window supplied that norm, sample with its
        variance subset).
        """
        ctrl = self.config.controller
        n = self.problem.n
        windowed_g = self.window.push(g)
        hg_norm = math.sqrt(hg @ hg)
        if hg_norm == 0.0:
            return TestResult.CONVERGED, 0.0, 0.0, False, sample
        use_window = len(sample) / n < ctrl.window_trigger
        test_norm = hg_norm
        if use_window:
            hw = self.memory.apply(windowed_g)
            test_norm = math.sqrt(hw @ hw)
            if test_norm == 0.0:
                test_norm = hg_norm
        if len(sample) >= n:
            return TestResult.PASSED, 0.0, test_norm, use_window, sample
        sample = choose_variance_subset(sample, ctrl.variance_subset_cap, self.rng)
        pos = ev.positions_of(sample.variance_subset)
        if len(pos) < 2:
            return TestResult.PASSED, 0.0, test_norm, use_window, sample
        u = self.memory.apply(hg)
        variance = ipqn_variance(ev.inner_products(u, pos), hg @ hg)
        result = ipqn_test(variance, len(sample), test_norm, ctrl.theta)
        return result, variance, test_norm, use_window, sample

    def step(self) -> IterationRecord:
        cfg = self.config
        problem, rng, n = self.problem, self.rng, self.problem.n
        mode = cfg.mode

        if mode is CurvatureMode.FULL_OVERLAP and self.k > 0:
            self.sample = uniform_sample(n, self.size, rng)
        sample = self.sample
        ev = problem.evaluate_batch(sample.indices, self.x, self.counter)

        admitted = zero_step = False
        overlap_size = 0
        if self._pending is not None:
            pend, self._pending = self._pending, None
            overlap_size = len(pend.overlap)
            y = ev.sub_mean(ev.positions_of(pend.overlap)) - pend.g_overlap
            zero_step = not np.any(pend.s)
            admitted = self.memory.try_admit(pend.s, y, cfg.curvature_eps)

        g = ev.mean()
        hg = self.memory.apply(g)
        result, variance, test_norm, windowed, sample = self._ipqn(ev, sample, g, hg)
        if result is TestResult.CONVERGED:
            self.converged = True
            return self._record(batch_size=len(sample), alpha=0.0, halvings=0,
                                pair_admitted=admitted, grad_norm=0.0,
                                overlap_size=overlap_size, zero_step=zero_step)

        grew = False
        if result is TestResult.FAILED:
            target = next_batch_size(variance, test_norm, cfg.controller.theta, len(sample), n)
            sample, added = augment_sample(sample, target, n, rng)
            if added.size:
                ev = ev.merge(problem.evaluate_batch(added, self.x, self.counter))
                g = ev.mean()
                hg = self.memory.apply(g)
                grew = True

        p = -hg
        g_norm_sq = float(g @ g)
        if g_norm_sq == 0.0:
            self.converged = True
            return self._record(batch_size=len(sample), alpha=0.0, halvings=0,
                                pair_admitted=admitted, grad_norm=0.0,
                                overlap_size=overlap_size, zero_step=zero_step, grew=grew)

        if len(sample) >= n:
            # exact gradient: the variance of the batch mean is zero
            alpha0 = 1.0
        else:
            if sample.variance_subset is None:
                sample = choose_variance_subset(sample, cfg.controller.variance_subset_cap, rng)
            pos = ev.positions_of(sample.variance_subset)
            grad_var = float(ev.sq_deviations(g, pos).sum() / (len(pos) - 1))
            alpha0 = initial_steplength(grad_var, len(sample), g_norm_sq)
        alpha0 = min(alpha0, cfg.linesearch.alpha_cap)

        ls = armijo_backtrack(problem, sample.indices, self.x, p, g, alpha0,
                              cfg.linesearch, self.counter)
        x_new = self.x + ls.alpha * p
        s = x_new - self.x

        if mode is CurvatureMode.FULL_OVERLAP:
            g_new = problem.batch_gradient(sample.indices, x_new, self.counter)
            zero_step = not np.any(s)
            admitted = self.memory.try_admit(s, g_new - g, cfg.curvature_eps)
            overlap_size = len(sample)
        else:
            prev, self.sample = make_overlap_sample(sample, len(sample), cfg.overlap_fraction, n, rng)
            g_overlap = ev.sub_mean(ev.positions_of(prev.overlap))
            self._pending = _PendingPair(s, g_overlap, prev.overlap)

        self.size = len(sample)
        self.x = x_new
        self.k += 1
        return self._record(batch_size=len(sample), alpha=ls.alpha, halvings=ls.halvings,
                            pair_admitted=admitted, grad_norm=math.sqrt(g_norm_sq),
                            alpha0=alpha0, ls_satisfied=ls.satisfied,
                            overlap_size=overlap_size, zero_step=zero_step,
                            grew=grew, windowed=windowed)

    def _gradient_small(self) -> bool:
        tol = self.config.stop.gradient_tolerance
        if tol is None:
            return False
        return float(np.max(np.abs(self.problem.full_gradient(self.x)))) <= tol

    def run(self) -> Trajectory:
        stop = self.config.stop
        # kept on the instance so a caller can recover a partial run
        self.records = records = [self.initial_record()]
        status = "max_iterations"
        if self._gradient_small():
            return Trajectory(records, self.x.copy(), "converged", self.counter, self.problem.n)
        for _ in range(stop.max_iterations):
            if self.counter.fge(self.problem.n) >= stop.max_fge:
                status = "budget"
                break
            records.append(self.step())
            if self.converged or self._gradient_small():
                status = "converged"
                break
        return Trajectory(records, self.x.copy(), status, self.counter, self.problem.n)


def run_pbqn(problem: FiniteSumProblem, config: PbqnConfig, x0, rng=None,
             observer: Observer | None = None) -> Trajectory:
    return PbqnSolver(problem, config, x0, rng, observer).run()


class _FgeLogger:
    """Appends a record every time the run crosses a multiple of
    ``every`` full-gradient equivalents."""

    def __init__(self, problem, counter, every, track_loss, observer, batch_size, alpha):
        self.problem, self.counter = problem, counter
        self.every, self.track_loss, self.observer = every, track_loss, observer
        self.batch_size, self.alpha = batch_size, alpha
        self.records: list[IterationRecord] = []
        self.next_mark = 0.0

    def log(self, k, x, force=False):
        fge = self.counter.fge(self.problem.n)
        if not force and fge < self.next_mark:
            return
        if self.every > 0:
            self.next_mark = (math.floor(fge / self.every + 1e-9) + 1) * self.every
        loss = self.problem.full_value(x) if self.track_loss else math.nan
        self.records.append(IterationRecord(
            k=k, batch_size=self.batch_size, alpha=self.alpha, halvings=0,
            pair_admitted=False, component_grad_evals=self.counter.grad_evals,
            component_value_evals=self.counter.value_evals, train_loss=loss,
            grad_norm=math.nan, extras=self.observer(x) if self.observer else {},
        ))


def run_sg(problem: FiniteSumProblem, config: SgConfig, x0, rng=None,
           observer: Observer | None = None) -> Trajectory:
    """Constant-step minibatch SG; records at every ``log_every_fge``."""
    rng = rng if rng is not None else np.random.default_rng(0)
    n = problem.n
    x = np.array(x0, dtype=float)
    counter = EvalCounter()
    logger = _FgeLogger(problem, counter, config.log_every_fge, config.track_loss,
                        observer, config.batch_size, config.alpha)
    logger.log(0, x, force=True)
    budget = config.max_fge * n
    k = 0
    status = "budget"
    while counter.grad_evals < budget:
        if config.batch_size == 1:
            g = problem.component_gradient(int(rng.integers(n)), x)
            counter.grad_evals += 1
        else:
            idx = rng.choice(n, size=min(config.batch_size, n), replace=False)
            g = problem.batch_gradient(idx, x, counter)
        x -= config.alpha * g
        k += 1
        if not np.all(np.isfinite(x)):
            status = "diverged"
            break
        logger.log(k, x)
    if logger.records[-1].k != k:
        logger.log(k, x, force=True)
    return Trajectory(logger.records, x, status, counter, n)


def run_svrg(problem: FiniteSumProblem, config: SvrgConfig, x0, rng=None,
             observer: Observer | None = None) -> Trajectory:
    """SVRG with the last inner iterate as the next anchor.

    Each anchor costs N component gradients, each inner step two.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    n = problem.n
    m = config.inner_length or n
    x = np.array(x0, dtype=float)
    counter = EvalCounter()
    logger = _FgeLogger(problem, counter, config.log_every_fge, config.track_loss,
                        observer, 1, config.alpha)
    logger.log(0, x, force=True)
    budget = config.max_fge * n
    k = 0
    status = "budget"
    while counter.grad_evals < budget and status == "budget":
        anchor = x.copy()
        mu = problem.full_gradient(anchor, counter)
        for _ in range(m):
            if counter.grad_evals >= budget:
                break
            i = int(rng.integers(n))
            v = problem.component_gradient(i, x) - problem.component_gradient(i, anchor) + mu
            counter.grad_evals += 2
            x -= config.alpha * v
            k += 1
            if not np.all(np.isfinite(x)):
                status = "diverged"
                break
            logger.log(k, x)
    if logger.records[-1].k != k:
        logger.log(k, x, force=True)
    return Trajectory(logger.records, x, status, counter, n)


def default_alpha_grid() -> list[float]:
    """2^j for j = -10..10."""
    return [2.0**j for j in range(-10, 11)]


class TuningError(RuntimeError):
    pass


@dataclass
class TuneResult:
    best_alpha: float
    scores: dict[float, float]


def tune_baseline(problem: FiniteSumProblem, runner: Callable[[float, np.random.Generator], Trajectory],
                  grid=None, seeds=(0,)) -> TuneResult:
    """Pick the step from ``grid`` with the lowest mean final training
    objective over ``seeds``; ties go to the smaller step.

    ``runner(alpha, rng)`` performs one run with a fixed budget.
    """
    grid = sorted(default_alpha_grid() if grid is None else grid)
    if not grid:
        raise ValueError("empty step grid")
    scores = {}
    for alpha in grid:
        vals = []
        for seed in seeds:
            # large steps on the grid are expected to blow up
            with np.errstate(all="ignore"):
                traj = runner(alpha, np.random.default_rng(seed))
            if traj.status == "diverged" or not np.all(np.isfinite(traj.x)):
                vals.append(math.inf)
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                v = problem.full_value(traj.x)
            vals.append(v if math.isfinite(v) else math.inf)
        scores[alpha] = float(np.mean(vals))
    best = min(grid, key=lambda a: (scores[a], a))
    if not math.isfinite(scores[best]):
        raise TuningError("every step size in the grid diverged")
    return TuneResult(best, scores)
