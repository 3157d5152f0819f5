"""Experiment plumbing: reference optimum R*, metric rows, CSV output and
the parallel performance model."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .lbfgs import CurvatureMemory
from .linesearch import LineSearchConfig, armijo_backtrack
from .optimizer import Trajectory
from .problems import FiniteSumProblem, LogisticProblem, QuadraticProblem

__all__ = [
    "RstarError",
    "problem_hash",
    "compute_rstar",
    "MetricsRow",
    "CSV_COLUMNS",
    "evaluate_metrics",
    "metrics_rows",
    "write_metrics_csv",
    "PerfModelInput",
    "perf_model_threshold",
    "pbqn_predicted_faster",
]

CSV_COLUMNS = ("k", "fge", "train_error", "test_loss", "test_acc", "batch_size",
               "alpha", "halvings", "pair_admitted", "value_fge")


class RstarError(RuntimeError):
    def __init__(self, message, best_value):
        super().__init__(f"{message} (best value {best_value!r})")
        self.best_value = best_value


def problem_hash(problem: FiniteSumProblem) -> str:
    """Content hash of the data defining ``problem``."""
    h = hashlib.sha256(type(problem).__name__.encode())
    if isinstance(problem, LogisticProblem):
        arrays = (problem.X.data, problem.X.indices, problem.X.indptr, problem.z,
                  np.array([problem.lam, *problem.X.shape], dtype=float))
    elif isinstance(problem, QuadraticProblem):
        arrays = (problem.hess, problem.b)
    else:
        arrays = tuple(np.asarray(v) for k, v in sorted(vars(problem).items())
                       if isinstance(v, (np.ndarray, float, int)))
    for arr in arrays:
        arr = np.ascontiguousarray(arr)
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


_RSTAR_CACHE: dict[str, float] = {}


def _rstar_key(problem, tol):
    return f"{problem_hash(problem)}:{tol!r}"


def compute_rstar(problem: FiniteSumProblem, tol: float = 1e-8, max_iter: int = 10_000,
                  memory_size: int = 10, cache_file=None) -> float:
    """R(x) at a point where full-batch L-BFGS reaches ||grad R||_inf <= tol.

    Results are cached in memory and, when ``cache_file`` is given, in a JSON
    file keyed by the problem content hash.
    """
    key = _rstar_key(problem, tol)
    if key in _RSTAR_CACHE:
        return _RSTAR_CACHE[key]
    if cache_file is not None and Path(cache_file).exists():
        stored = json.loads(Path(cache_file).read_text())
        if key in stored:
            _RSTAR_CACHE[key] = float(stored[key])
            return _RSTAR_CACHE[key]

    everything = np.arange(problem.n)
    ls_config = LineSearchConfig(max_halvings=60)
    memory = CurvatureMemory(memory_size)
    x = np.zeros(problem.d)
    f = problem.full_value(x)
    g = problem.full_gradient(x)
    for _ in range(max_iter):
        if np.max(np.abs(g)) <= tol:
            break
        p = -memory.apply(g)
        if g @ p >= 0:
            memory.clear()
            p = -g
        ls = armijo_backtrack(problem, everything, x, p, g, 1.0, ls_config, f0=f)
        if ls.satisfied:
            x_new = x + ls.alpha * p
        else:
            # sufficient decrease is below rounding near the optimum; a unit
            # step is kept only if it shrinks the gradient
            x_new = x + p
        g_new = problem.full_gradient(x_new)
        if not ls.satisfied and np.max(np.abs(g_new)) >= np.max(np.abs(g)):
            raise RstarError("line search stalled before reaching tolerance", f)
        memory.try_admit(x_new - x, g_new - g, eps=1e-12)
        x, g = x_new, g_new
        f = problem.full_value(x)
    else:
        if np.max(np.abs(g)) > tol:
            raise RstarError(f"no convergence in {max_iter} iterations", f)

    _RSTAR_CACHE[key] = f
    if cache_file is not None:
        path = Path(cache_file)
        stored = json.loads(path.read_text()) if path.exists() else {}
        stored[key] = f
        path.write_text(json.dumps(stored, indent=2, sort_keys=True))
    return f


@dataclass
class MetricsRow:
    k: int
    fge: float
    train_error: float
    test_loss: float
    test_acc: float
    batch_size: int
    alpha: float
    halvings: int
    pair_admitted: bool
    value_fge: float


def evaluate_metrics(train: FiniteSumProblem, test: LogisticProblem | None, x, rstar: float) -> dict:
    """Training error R(x) - R*, plus unregularized test loss and accuracy
    when a logistic test set is given."""
    out = {"train_error": train.full_value(x) - rstar}
    if test is not None:
        out["test_loss"] = test.data_loss(x)
        out["test_acc"] = test.accuracy(x)
    else:
        out["test_loss"] = math.nan
        out["test_acc"] = math.nan
    return out


def metrics_rows(traj: Trajectory, rstar: float) -> list[MetricsRow]:
    """One row per trajectory record. Test metrics are read from the record
    extras filled by the run's observer."""
    rows = []
    for r in traj.records:
        rows.append(MetricsRow(
            k=r.k,
            fge=r.component_grad_evals / traj.n,
            train_error=r.train_loss - rstar,
            test_loss=r.extras.get("test_loss", math.nan),
            test_acc=r.extras.get("test_acc", math.nan),
            batch_size=r.batch_size,
            alpha=r.alpha,
            halvings=r.halvings,
            pair_admitted=r.pair_admitted,
            value_fge=r.component_value_evals / traj.n,
        ))
    return rows


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_metrics_csv(rows: list[MetricsRow], path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for row in rows:
            d = asdict(row)
            writer.writerow([_fmt(d[c]) for c in CSV_COLUMNS])


@dataclass(frozen=True)
class PerfModelInput:
    """Costs per iteration (C_L for PBQN, C_S for SG), effective batch sizes
    (B_L, B_S), SG parallel efficiency on the target node count, and
    optionally the iteration counts each method needs."""

    cost_large: float
    cost_small: float
    batch_large: float
    batch_small: float
    parallel_efficiency: float
    iters_large: float | None = None
    iters_small: float | None = None
    nodes: int | None = None

    def __post_init__(self):
        for name in ("cost_large", "cost_small", "batch_large", "batch_small"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.parallel_efficiency <= 1:
            raise ValueError("parallel efficiency must lie in (0, 1]")


def perf_model_threshold(inp: PerfModelInput):
    """(C_S / C_L) (B_S / B_L) / P_e: PBQN wins when I_L / I_S is below it."""
    return (inp.cost_small / inp.cost_large) * (inp.batch_small / inp.batch_large) / inp.parallel_efficiency


def pbqn_predicted_faster(inp: PerfModelInput) -> bool:
    """Compare training times I_L C_L B_L / N against I_S C_S B_S / (N P_e)."""
    if inp.iters_large is None or inp.iters_small is None:
        raise ValueError("iteration counts are required")
    nodes = inp.nodes or 1
    t_large = inp.iters_large * inp.cost_large * inp.batch_large / nodes
    t_small = inp.iters_small * inp.cost_small * inp.batch_small / (nodes * inp.parallel_efficiency)
    return t_large < t_small
