"""Finite-sum objectives R(x) = (1/N) sum_i F_i(x).

Optimizers never touch data directly. They ask a problem for a
:class:`BatchEvaluation` over an index set, which holds enough per-component
state to produce the batch gradient, sub-averages over any subset of the
batch (used for the overlap curvature vector), and the per-sample
statistics needed by the batch-size test and the initial steplength, all
without further component gradient evaluations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

__all__ = [
    "EvalCounter",
    "BatchEvaluation",
    "DenseBatchEvaluation",
    "LogisticBatchEvaluation",
    "FiniteSumProblem",
    "LogisticProblem",
    "QuadraticProblem",
    "SigmoidSumProblem",
    "make_diagonal_quadratic",
    "make_synthetic_logistic",
    "make_sigmoid_sum",
    "make_categorical_logistic",
    "MUSHROOM_LIKE_GROUPS",
]


@dataclass
class EvalCounter:
    """Per-run accounting of component evaluations."""

    grad_evals: int = 0
    value_evals: int = 0

    def fge(self, n: int) -> float:
        """Full-gradient equivalents spent so far."""
        return self.grad_evals / n


def _as_index_array(indices) -> np.ndarray:
    return np.asarray(indices, dtype=np.int64).reshape(-1)


class BatchEvaluation:
    """Component gradients of a batch at one point, in a reusable form.

    ``positions`` arguments index into ``self.indices`` (not into the data
    set), so callers can refer to a subset of the batch.
    """

    indices: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)

    def mean(self) -> np.ndarray:
        raise NotImplementedError

    def sub_mean(self, positions) -> np.ndarray:
        raise NotImplementedError

    def inner_products(self, u, positions=None) -> np.ndarray:
        raise NotImplementedError

    def sq_deviations(self, center, positions=None) -> np.ndarray:
        raise NotImplementedError

    def gradients(self, positions=None) -> np.ndarray:
        raise NotImplementedError

    def merge(self, other: "BatchEvaluation") -> "BatchEvaluation":
        raise NotImplementedError

    def positions_of(self, subset) -> np.ndarray:
        """Positions of the data indices ``subset`` within this batch."""
        subset = _as_index_array(subset)
        order = np.argsort(self.indices, kind="stable")
        where = np.searchsorted(self.indices, subset, sorter=order)
        pos = order[np.minimum(where, len(order) - 1)]
        if not np.array_equal(self.indices[pos], subset):
            raise ValueError("subset is not contained in the batch")
        return pos


class DenseBatchEvaluation(BatchEvaluation):
    """Stores the component gradients as rows of a dense matrix."""

    def __init__(self, indices, grads):
        self.indices = _as_index_array(indices)
        self.grads = np.asarray(grads, dtype=float)

    def _rows(self, positions):
        return self.grads if positions is None else self.grads[positions]

    def mean(self):
        return self.grads.mean(axis=0)

    def sub_mean(self, positions):
        return self.grads[positions].mean(axis=0)

    def inner_products(self, u, positions=None):
        return self._rows(positions) @ u

    def sq_deviations(self, center, positions=None):
        diff = self._rows(positions) - center
        return np.einsum("ij,ij->i", diff, diff)

    def gradients(self, positions=None):
        return self._rows(positions).copy()

    def merge(self, other):
        idx = np.concatenate([self.indices, other.indices])
        grads = np.vstack([self.grads, other.grads])
        order = np.argsort(idx, kind="stable")
        return DenseBatchEvaluation(idx[order], grads[order])


class LogisticBatchEvaluation(BatchEvaluation):
    """Logistic gradients g_i = c_i y_i + lam x kept as (rows, c_i, lam x)."""

    def __init__(self, indices, rows: sp.csr_matrix, coef, reg):
        self.indices = _as_index_array(indices)
        self.rows = rows
        self.coef = np.asarray(coef, dtype=float)
        self.reg = reg

    def mean(self):
        return self.rows.T @ self.coef / len(self.coef) + self.reg

    def sub_mean(self, positions):
        positions = np.asarray(positions)
        return self.rows[positions].T @ self.coef[positions] / len(positions) + self.reg

    def inner_products(self, u, positions=None):
        rows, coef = self.rows, self.coef
        if positions is not None:
            rows, coef = rows[positions], coef[positions]
        return coef * (rows @ u) + self.reg @ u

    def sq_deviations(self, center, positions=None):
        rows, coef = self.rows, self.coef
        if positions is not None:
            rows, coef = rows[positions], coef[positions]
        shift = self.reg - center
        row_sq = np.asarray(rows.multiply(rows).sum(axis=1)).ravel()
        return coef**2 * row_sq + 2.0 * coef * (rows @ shift) + shift @ shift

    def gradients(self, positions=None):
        rows, coef = self.rows, self.coef
        if positions is not None:
            rows, coef = rows[positions], coef[positions]
        return rows.multiply(coef[:, None]).toarray() + self.reg

    def merge(self, other):
        idx = np.concatenate([self.indices, other.indices])
        order = np.argsort(idx, kind="stable")
        rows = sp.vstack([self.rows, other.rows], format="csr")[order]
        coef = np.concatenate([self.coef, other.coef])[order]
        return LogisticBatchEvaluation(idx[order], rows, coef, self.reg)


class FiniteSumProblem:
    """Base class: subclasses set ``n`` and ``d`` and implement
    ``_values`` and ``_evaluate``.

    Instances are treated as immutable once built.
    """

    n: int
    d: int

    def _values(self, idx: np.ndarray, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _evaluate(self, idx: np.ndarray, x: np.ndarray) -> BatchEvaluation:
        raise NotImplementedError

    def _check_index(self, i):
        if not 0 <= i < self.n:
            raise IndexError(f"component index {i} out of range [0, {self.n})")

    def _check_batch(self, indices) -> np.ndarray:
        idx = _as_index_array(indices)
        if idx.size == 0:
            raise ValueError("batch index set is empty")
        if idx.min() < 0 or idx.max() >= self.n:
            raise IndexError(f"batch indices out of range [0, {self.n})")
        if np.unique(idx).size != idx.size:
            raise ValueError("batch indices must be distinct")
        return idx

    def component_value(self, i: int, x) -> float:
        self._check_index(i)
        return float(self._values(np.array([i]), np.asarray(x, dtype=float))[0])

    def component_gradient(self, i: int, x) -> np.ndarray:
        self._check_index(i)
        ev = self._evaluate(np.array([i]), np.asarray(x, dtype=float))
        return ev.gradients()[0]

    def component_values(self, indices, x) -> np.ndarray:
        return self._values(self._check_batch(indices), np.asarray(x, dtype=float))

    def component_gradients(self, indices, x) -> np.ndarray:
        """Dense (|S|, d) matrix of component gradients; not counted."""
        return self._evaluate(self._check_batch(indices), np.asarray(x, dtype=float)).gradients()

    def evaluate_batch(self, indices, x, counter: EvalCounter | None = None) -> BatchEvaluation:
        idx = self._check_batch(indices)
        if counter is not None:
            counter.grad_evals += idx.size
        return self._evaluate(idx, np.asarray(x, dtype=float))

    def batch_gradient(self, indices, x, counter: EvalCounter | None = None) -> np.ndarray:
        return self.evaluate_batch(indices, x, counter).mean()

    def batch_value(self, indices, x, counter: EvalCounter | None = None) -> float:
        idx = self._check_batch(indices)
        if counter is not None:
            counter.value_evals += idx.size
        return float(self._values(idx, np.asarray(x, dtype=float)).mean())

    def full_gradient(self, x, counter: EvalCounter | None = None) -> np.ndarray:
        return self.batch_gradient(np.arange(self.n), x, counter)

    def full_value(self, x, counter: EvalCounter | None = None) -> float:
        return self.batch_value(np.arange(self.n), x, counter)


class LogisticProblem(FiniteSumProblem):
    """l2-regularized logistic loss over sparse rows.

    F_i(x) = log(1 + exp(-z_i x.y_i)) + (lam/2)||x||^2, lam = 1/N by default.
    """

    def __init__(self, features, labels, lam: float | None = None):
        self.X = sp.csr_matrix(features, dtype=float)
        self.X.sort_indices()
        self.z = np.asarray(labels, dtype=float).reshape(-1)
        if self.X.shape[0] != self.z.size:
            raise ValueError("feature rows and labels differ in length")
        if self.z.size == 0:
            raise ValueError("logistic problem needs at least one data point")
        if not np.all(np.isin(self.z, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.n, self.d = self.X.shape
        self.lam = 1.0 / self.n if lam is None else float(lam)

    @classmethod
    def from_dataset(cls, dataset, lam=None, n_features=None):
        X = dataset.X
        if n_features is not None and n_features > X.shape[1]:
            X = sp.csr_matrix((X.data, X.indices, X.indptr), shape=(X.shape[0], n_features))
        return cls(X, dataset.labels, lam)

    def margins(self, x, idx=None) -> np.ndarray:
        X = self.X if idx is None else self.X[idx]
        z = self.z if idx is None else self.z[idx]
        return z * (X @ x)

    def _values(self, idx, x):
        return np.logaddexp(0.0, -self.margins(x, idx)) + 0.5 * self.lam * (x @ x)

    def _evaluate(self, idx, x):
        rows = self.X[idx]
        z = self.z[idx]
        coef = -expit(-z * (rows @ x)) * z
        return LogisticBatchEvaluation(idx, rows, coef, self.lam * x)

    def component_gradient(self, i, x):
        self._check_index(i)
        x = np.asarray(x, dtype=float)
        lo, hi = self.X.indptr[i], self.X.indptr[i + 1]
        cols, vals = self.X.indices[lo:hi], self.X.data[lo:hi]
        zi = self.z[i]
        c = -expit(-zi * (vals @ x[cols])) * zi
        g = self.lam * x
        g[cols] += c * vals
        return g

    def data_loss(self, x) -> float:
        """Mean logistic loss without the l2 term."""
        return float(np.logaddexp(0.0, -self.margins(np.asarray(x, dtype=float))).mean())

    def accuracy(self, x) -> float:
        """Fraction of points with sign(x.y_i) == z_i; a zero score counts as wrong."""
        return float(np.mean(self.margins(np.asarray(x, dtype=float)) > 0.0))


class QuadraticProblem(FiniteSumProblem):
    """F_i(x) = 0.5 x^T A_i x - b_i^T x with A_i diagonal (``hess`` of shape
    (N, d)) or dense (shape (N, d, d)).
    """

    def __init__(self, hess, b):
        self.hess = np.asarray(hess, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.diagonal = self.hess.ndim == 2
        self.n, self.d = self.b.shape
        if self.hess.shape[:2] != (self.n, self.d):
            raise ValueError("hess and b shapes disagree")
        mean_hess = self.hess.mean(axis=0)
        self.hessian = np.diag(mean_hess) if self.diagonal else mean_hess
        eigs = np.linalg.eigvalsh(self.hessian)
        self.mu = float(eigs[0])
        self.L = float(eigs[-1])
        if self.mu <= 0:
            raise ValueError("mean Hessian must be positive definite")
        b_mean = self.b.mean(axis=0)
        self.x_star = np.linalg.solve(self.hessian, b_mean)
        self.f_star = float(-0.5 * b_mean @ self.x_star)

    def _values(self, idx, x):
        if self.diagonal:
            quad = self.hess[idx] @ (x * x)
        else:
            quad = np.einsum("j,ijk,k->i", x, self.hess[idx], x)
        return 0.5 * quad - self.b[idx] @ x

    def _evaluate(self, idx, x):
        if self.diagonal:
            grads = self.hess[idx] * x - self.b[idx]
        else:
            grads = self.hess[idx] @ x - self.b[idx]
        return DenseBatchEvaluation(idx, grads)


class SigmoidSumProblem(FiniteSumProblem):
    """Nonconvex, bounded below by zero:
    F_i(x) = sigmoid(a_i^T x + c_i) + (lam/2)||x||^2.
    """

    # max over t of |sigmoid''(t)|
    _SIGMOID_CURV = 1.0 / (6.0 * np.sqrt(3.0))

    def __init__(self, a, c, lam: float = 0.0):
        self.a = np.asarray(a, dtype=float)
        self.c = np.asarray(c, dtype=float)
        self.lam = float(lam)
        self.n, self.d = self.a.shape
        gram = self.a.T @ self.a / self.n
        self.L = float(self._SIGMOID_CURV * np.linalg.eigvalsh(gram)[-1] + self.lam)
        self.f_lower = 0.0

    def _values(self, idx, x):
        return expit(self.a[idx] @ x + self.c[idx]) + 0.5 * self.lam * (x @ x)

    def _evaluate(self, idx, x):
        s = expit(self.a[idx] @ x + self.c[idx])
        grads = (s * (1.0 - s))[:, None] * self.a[idx] + self.lam * x
        return DenseBatchEvaluation(idx, grads)


def make_diagonal_quadratic(n, d, mu, L, rng, spread=0.5, scale=1.0) -> QuadraticProblem:
    """Diagonal finite-sum quadratic whose mean Hessian has spectrum
    linspace(mu, L, d) up to rounding.

    Each component Hessian is the mean spectrum times a positive weight with
    sample mean one, so components differ in curvature as well as in their
    linear terms.
    """
    spectrum = np.linspace(mu, L, d)
    w = 1.0 + spread * rng.uniform(-1.0, 1.0, size=(n, d))
    w /= w.mean(axis=0)
    b = scale * rng.standard_normal((n, d))
    return QuadraticProblem(spectrum * w, b)


def make_synthetic_logistic(n, d, rng, density=0.2, separable=True, flip=0.0, lam=None) -> LogisticProblem:
    """Sparse synthetic binary classification data.

    Labels come from a random hyperplane; with ``separable=False`` a
    fraction ``flip`` of them is inverted.
    """
    X = sp.random(n, d, density=density, format="csr", random_state=rng,
                  data_rvs=lambda k: rng.uniform(0.0, 1.0, size=k))
    w = rng.standard_normal(d)
    scores = X @ w - np.median(X @ w)
    z = np.where(scores > 0, 1.0, -1.0)
    if not separable and flip > 0:
        flips = rng.random(n) < flip
        z[flips] *= -1.0
    return LogisticProblem(X, z, lam)


# one-hot group sizes summing to 112 features, 22 active per row
MUSHROOM_LIKE_GROUPS = (6, 4, 8, 2, 9, 2, 2, 2, 9, 2, 5, 4, 4, 9, 9, 1, 4, 3, 5, 9, 6, 7)


def make_categorical_logistic(n, rng, groups=MUSHROOM_LIKE_GROUPS, lam=None) -> LogisticProblem:
    """Binary one-hot features (one active column per group) with labels
    from a random hyperplane, so the data are linearly separable."""
    offsets = np.concatenate([[0], np.cumsum(groups)[:-1]])
    cols = np.stack([off + rng.integers(size, size=n) for off, size in zip(offsets, groups)], axis=1)
    d = int(sum(groups))
    X = sp.csr_matrix((np.ones(cols.size), cols.ravel(), np.arange(0, cols.size + 1, len(groups))),
                      shape=(n, d))
    w = rng.standard_normal(d)
    scores = X @ w
    z = np.where(scores > np.median(scores), 1.0, -1.0)
    return LogisticProblem(X, z, lam)


def make_sigmoid_sum(n, d, rng, lam=0.01) -> SigmoidSumProblem:
    a = rng.standard_normal((n, d))
    c = rng.standard_normal(n)
    return SigmoidSumProblem(a, c, lam)
