"""Variance-informed initial steplength and stochastic Armijo backtracking."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .problems import EvalCounter, FiniteSumProblem

__all__ = [
    "LineSearchConfig",
    "LineSearchOutcome",
    "initial_steplength",
    "gradient_variance",
    "armijo_backtrack",
]


@dataclass(frozen=True)
class LineSearchConfig:
    c1: float = 1e-4
    max_halvings: int = 30
    alpha_cap: float = 1.0

    def __post_init__(self):
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if self.max_halvings < 1:
            raise ValueError("max_halvings must be at least 1")
        if not self.alpha_cap > 0:
            raise ValueError("alpha_cap must be positive")


@dataclass(frozen=True)
class LineSearchOutcome:
    alpha: float
    halvings: int
    value_evals: int
    satisfied: bool
    value: float


def initial_steplength(grad_variance: float, batch_size: int, grad_norm_sq: float) -> float:
    """(1 + Var / (|S| ||g||^2))^-1, always in (0, 1]."""
    if not grad_norm_sq > 0:
        raise ValueError("gradient norm must be positive; handle convergence first")
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if grad_variance < 0:
        raise ValueError("variance must be non-negative")
    return 1.0 / (1.0 + grad_variance / (batch_size * grad_norm_sq))


def gradient_variance(per_sample_gradients, batch_gradient) -> float:
    """(1 / (|S^v| - 1)) sum ||g_i - g^S||^2 over the rows of
    ``per_sample_gradients``."""
    G = np.atleast_2d(np.asarray(per_sample_gradients, dtype=float))
    if G.shape[0] < 2:
        raise ValueError("variance needs at least two gradients")
    diff = G - np.asarray(batch_gradient, dtype=float)
    return float(np.einsum("ij,ij->", diff, diff) / (G.shape[0] - 1))


def armijo_backtrack(problem: FiniteSumProblem, indices, x, p, g, alpha0: float,
                     config: LineSearchConfig = LineSearchConfig(),
                     counter: EvalCounter | None = None,
                     f0: float | None = None) -> LineSearchOutcome:
    """Halve alpha from ``alpha0`` until

        F_S(x + alpha p) <= F_S(x) - c1 alpha g^T H g,

    using g^T H g = -g^T p. After ``max_halvings`` failed halvings the last
    trial is returned with ``satisfied=False``. A non-finite trial value
    counts as a failed trial. ``f0`` skips the evaluation of F_S(x).
    """
    if not 0 < alpha0 <= config.alpha_cap:
        raise ValueError(f"alpha0={alpha0} outside (0, {config.alpha_cap}]")
    value_evals = 0
    if f0 is None:
        f0 = problem.batch_value(indices, x, counter)
        value_evals += 1
    decrease = -(np.asarray(g) @ np.asarray(p))
    alpha = alpha0
    value = math.nan
    for halvings in range(config.max_halvings + 1):
        if halvings:
            alpha = alpha0 * 0.5**halvings
        value = problem.batch_value(indices, x + alpha * p, counter)
        value_evals += 1
        if math.isfinite(value) and value <= f0 - config.c1 * alpha * decrease:
            return LineSearchOutcome(alpha, halvings, value_evals, True, value)
    return LineSearchOutcome(alpha, config.max_halvings, value_evals, False, value)
