"""Limited-memory BFGS inverse-Hessian with cautious pair admission."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

__all__ = ["CurvaturePair", "CurvatureMemory"]


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    y: np.ndarray
    rho: float


class CurvatureMemory:
    """FIFO of at most ``m`` curvature pairs defining H_k implicitly.

    The seed matrix of the recursion is ``gamma * I``; ``gamma`` is
    y^T s / y^T y of the newest admitted pair, and 1 while the memory is
    empty.
    """

    def __init__(self, m: int = 10):
        if m < 1:
            raise ValueError("memory size must be at least 1")
        self.m = m
        self.pairs: deque[CurvaturePair] = deque(maxlen=m)
        self.gamma = 1.0

    def __len__(self):
        return len(self.pairs)

    def try_admit(self, s, y, eps: float = 1e-2) -> bool:
        """Store (s, y) if y^T s > eps ||s||^2; return whether it was stored.

        Ties and a zero step are rejected.
        """
        s = np.asarray(s, dtype=float)
        y = np.asarray(y, dtype=float)
        ss = s @ s
        if ss == 0.0:
            return False
        ys = y @ s
        if not (ys > eps * ss):
            return False
        self.pairs.append(CurvaturePair(s.copy(), y.copy(), 1.0 / ys))
        self.gamma = ys / (y @ y)
        return True

    def apply(self, g) -> np.ndarray:
        """H g by the two-loop recursion."""
        q = np.array(g, dtype=float)
        alphas = []
        for pair in reversed(self.pairs):
            a = pair.rho * (pair.s @ q)
            q -= a * pair.y
            alphas.append(a)
        r = self.gamma * q
        for pair, a in zip(self.pairs, reversed(alphas)):
            beta = pair.rho * (pair.y @ r)
            r += (a - beta) * pair.s
        return r

    def apply_squared(self, g) -> np.ndarray:
        """H (H g)."""
        return self.apply(self.apply(g))

    def dense(self, d: int) -> np.ndarray:
        """H as a dense d x d matrix, built column by column from ``apply``."""
        H = np.column_stack([self.apply(e) for e in np.eye(d)])
        return 0.5 * (H + H.T)

    def clear(self):
        self.pairs.clear()
        self.gamma = 1.0
