"""Sample management and the progressive batch-size controller.

All random draws go through the single ``numpy.random.Generator`` a run is
given. Within one optimizer iteration the draw order is: fresh sample
(full-overlap mode only), variance subset, augmentation, variance subset of
the augmented sample, next overlapping sample (multi-batch mode only).
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "BatchSample",
    "BatchControllerConfig",
    "TestResult",
    "ipqn_variance",
    "ipqn_test",
    "next_batch_size",
    "uniform_sample",
    "choose_variance_subset",
    "augment_sample",
    "make_overlap_sample",
    "GradientWindow",
    "windowed_gradient",
]


@dataclass(frozen=True, eq=False)
class BatchSample:
    """Index set S_k (kept sorted), its variance subset S_k^v, and O_k, the
    part of S_k carried into the next sample (``None`` until known)."""

    indices: np.ndarray
    variance_subset: np.ndarray | None = None
    overlap: np.ndarray | None = None

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class BatchControllerConfig:
    theta: float = 0.9
    initial_size: int = 512
    variance_subset_cap: int = 1024
    window_length: int = 10
    window_trigger: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if not self.theta > 0:
            raise ValueError("theta must be positive")
        if self.initial_size < 2:
            raise ValueError("initial sample size must be at least 2")
        if self.variance_subset_cap < 2:
            raise ValueError("variance subset cap must be at least 2")
        if self.window_length < 1:
            raise ValueError("window length must be at least 1")


class TestResult(enum.Enum):
    __test__ = False
    PASSED = "passed"
    FAILED = "failed"
    CONVERGED = "converged"

    def __bool__(self):
        return self is not TestResult.FAILED


def ipqn_variance(per_sample_scalars, batch_norm_sq: float) -> float:
    """Sample variance of t_i = (g_i)^T H^2 g^S about ||H g^S||^2,
    divisor |S^v| - 1."""
    t = np.asarray(per_sample_scalars, dtype=float)
    if t.size < 2:
        raise ValueError("variance needs at least two per-sample values")
    dev = t - batch_norm_sq
    return float(dev @ dev / (t.size - 1))


def ipqn_test(variance: float, batch_size: int, hg_norm: float, theta: float) -> TestResult:
    """Practical inner-product quasi-Newton test:
    variance / |S| <= theta^2 ||H g||^4."""
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if hg_norm < 0:
        raise ValueError("hg_norm must be non-negative")
    if hg_norm == 0.0:
        return TestResult.CONVERGED
    rhs = theta**2 * (hg_norm * hg_norm) ** 2
    return TestResult.PASSED if variance / batch_size <= rhs else TestResult.FAILED


def next_batch_size(variance: float, hg_norm: float, theta: float, current: int, n: int) -> int:
    """ceil(variance / (theta^2 ||H g||^4)) clamped to [current + 1, n]."""
    if not hg_norm > 0:
        raise ValueError("hg_norm must be positive; handle convergence first")
    if current >= n:
        return n
    rhs = theta**2 * (hg_norm * hg_norm) ** 2
    ratio = variance / rhs
    if not math.isfinite(ratio):
        return n
    b = max(1, math.ceil(ratio))
    # ceil of a rounded quotient can land one short of satisfying the test
    while b < n and not ipqn_test(variance, b, hg_norm, theta):
        b += 1
    return min(max(b, current + 1), n)


def uniform_sample(n: int, size: int, rng: np.random.Generator) -> BatchSample:
    size = min(size, n)
    idx = np.sort(rng.choice(n, size=size, replace=False))
    return BatchSample(idx)


def choose_variance_subset(sample: BatchSample, cap: int, rng: np.random.Generator) -> BatchSample:
    """S^v = S when |S| <= cap, else a uniform subset of size cap."""
    if len(sample) <= cap:
        sub = sample.indices
    else:
        sub = np.sort(rng.choice(sample.indices, size=cap, replace=False))
    return replace(sample, variance_subset=sub)


def _complement(indices: np.ndarray, n: int) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[indices] = False
    return np.flatnonzero(mask)


def augment_sample(sample: BatchSample, target_size: int, n: int, rng: np.random.Generator) -> tuple[BatchSample, np.ndarray]:
    """Grow S_k to ``target_size`` with indices drawn uniformly without
    replacement from its complement.

    Returns the grown sample and the added indices S+.
    """
    target_size = min(target_size, n)
    extra = target_size - len(sample)
    if extra <= 0:
        return sample, np.empty(0, dtype=np.int64)
    added = np.sort(rng.choice(_complement(sample.indices, n), size=extra, replace=False))
    merged = np.sort(np.concatenate([sample.indices, added]))
    return BatchSample(merged), added


def make_overlap_sample(prev: BatchSample, new_size: int, overlap_fraction: float, n: int,
                        rng: np.random.Generator) -> tuple[BatchSample, BatchSample]:
    """Build S_{k+1} sharing round(overlap_fraction * new_size) indices with
    S_k; the remainder comes from outside S_k.

    Returns ``(prev, new)``: a copy of ``prev`` with ``overlap`` set to
    O_k = S_k ∩ S_{k+1}, and the new sample. The overlap is grown when the
    complement of S_k is too small to fill the rest, and clipped to |S_k|.
    """
    if not 0 < overlap_fraction < 1:
        raise ValueError("overlap fraction must lie in (0, 1)")
    new_size = min(new_size, n)
    n_prev = len(prev)
    n_overlap = int(round(overlap_fraction * new_size))
    n_overlap = max(n_overlap, new_size - (n - n_prev))
    n_overlap = min(n_overlap, n_prev, new_size)
    overlap = np.sort(rng.choice(prev.indices, size=n_overlap, replace=False))
    fresh = rng.choice(_complement(prev.indices, n), size=new_size - n_overlap, replace=False)
    new = BatchSample(np.sort(np.concatenate([overlap, fresh])))
    return replace(prev, overlap=overlap), new


class GradientWindow:
    """Ring of the most recent batch gradients."""

    def __init__(self, length: int):
        if length < 1:
            raise ValueError("window length must be at least 1")
        self.history: deque[np.ndarray] = deque(maxlen=length)

    def push(self, g) -> np.ndarray:
        """Add ``g`` and return the window average including it."""
        self.history.append(np.asarray(g, dtype=float).copy())
        return windowed_gradient(self.history)


def windowed_gradient(history) -> np.ndarray:
    """Arithmetic mean of the gradients in ``history``."""
    if len(history) == 0:
        raise ValueError("empty gradient window")
    return np.mean(np.stack(list(history)), axis=0)
