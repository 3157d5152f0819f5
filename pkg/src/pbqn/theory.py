"""Brute-force checks of the convergence theory on small finite sums.

Everything here enumerates all N components, so it is meant for N of a few
dozen. The iteration analysed is x <- x - alpha H g^S with a fixed step and
a fixed matrix H; the sample size at each point is the smallest one that
satisfies the exact-variance inner-product test and the orthogonality
condition for the configured ``nu``. Expectation inequalities are checked
with a three-standard-error allowance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lbfgs import CurvatureMemory
from .problems import FiniteSumProblem, QuadraticProblem

__all__ = [
    "TheoryConfig",
    "Report",
    "hessian_matrix",
    "exact_ipqn_lhs",
    "orthogonality_lhs",
    "exact_initial_steplength",
    "population_initial_steplength",
    "exact_batch_size",
    "check_descent_lemma",
    "check_linear_rate",
    "check_sublinear_rate",
]

MAX_ENUMERATION = 64


@dataclass(frozen=True)
class TheoryConfig:
    theta: float = 0.9
    nu: float = 5.0
    alpha: float | None = None
    trials: int = 500
    iterations: int = 50
    seed: int = 0
    min_trials: int = 30

    def max_alpha(self, L: float, lambda2: float) -> float:
        """Largest fixed step covered by the descent lemma."""
        return 1.0 / ((1.0 + self.theta**2 + self.nu**2) * L * lambda2)

    def step(self, L: float, lambda2: float) -> float:
        bound = self.max_alpha(L, lambda2)
        if self.alpha is None:
            return bound
        if self.alpha > bound * (1 + 1e-12):
            raise ValueError(f"alpha={self.alpha} exceeds the admissible {bound}")
        return self.alpha


@dataclass
class Report:
    name: str
    status: str
    values: dict = field(default_factory=dict)
    # per-iteration arrays, kept out of the text form
    curves: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "pass"

    def to_text(self) -> str:
        lines = [f"check={self.name}", f"status={self.status}"]
        for key, val in self.values.items():
            if isinstance(val, float):
                val = repr(val)
            lines.append(f"{key}={val}")
        return "\n".join(lines)


def hessian_matrix(H, d: int) -> np.ndarray:
    """Dense inverse-Hessian approximation from a memory, a matrix, or None
    (identity)."""
    if H is None:
        return np.eye(d)
    if isinstance(H, CurvatureMemory):
        return H.dense(d)
    H = np.asarray(H, dtype=float)
    if H.shape != (d, d):
        raise ValueError("H has the wrong shape")
    return H


def _population(problem: FiniteSumProblem, H: np.ndarray, x):
    if problem.n > MAX_ENUMERATION:
        raise ValueError(f"enumeration needs N <= {MAX_ENUMERATION}")
    G = problem.component_gradients(np.arange(problem.n), x)
    grad = G.mean(axis=0)
    return G, G @ H, H @ grad, grad


def _moments(HG: np.ndarray, v: np.ndarray):
    """Population second moments about H grad F: inner-product variance and
    orthogonal-component energy (both per component, not yet divided by
    the batch size)."""
    vv = v @ v
    t = HG @ v
    ip = float(np.mean((t - vv) ** 2))
    if vv == 0.0:
        return ip, float(np.mean(np.einsum("ij,ij->i", HG, HG))), vv
    resid = HG - np.outer(t / vv, v)
    orth = float(np.mean(np.einsum("ij,ij->i", resid, resid)))
    return ip, orth, vv


def exact_ipqn_lhs(problem, H, x, batch_size: int) -> float:
    """E[((H grad F)^T (H g_i) - ||H grad F||^2)^2] / |S| over all N components."""
    Hm = hessian_matrix(H, problem.d)
    _, HG, v, _ = _population(problem, Hm, np.asarray(x, dtype=float))
    return _moments(HG, v)[0] / batch_size


def orthogonality_lhs(problem, H, x, batch_size: int) -> float:
    """E||H g_i - proj_{H grad F}(H g_i)||^2 / |S| over all N components."""
    Hm = hessian_matrix(H, problem.d)
    _, HG, v, _ = _population(problem, Hm, np.asarray(x, dtype=float))
    return _moments(HG, v)[1] / batch_size


def exact_initial_steplength(problem, H, x, batch_size: int) -> float:
    """(1 + Var{H g_i} / (|S| ||H grad F||^2))^-1 with population variance."""
    Hm = hessian_matrix(H, problem.d)
    _, HG, v, _ = _population(problem, Hm, np.asarray(x, dtype=float))
    dev = HG - v
    var = float(np.mean(np.einsum("ij,ij->i", dev, dev)))
    if var == 0.0:
        return 1.0
    vv = v @ v
    if vv == 0.0:
        raise ValueError("true gradient is zero")
    return 1.0 / (1.0 + var / (batch_size * vv))


def population_initial_steplength(problem, x, batch_size: int) -> float:
    """(1 + Var{g_i} / (|S| ||grad F||^2))^-1, the H-free approximation."""
    return exact_initial_steplength(problem, None, x, batch_size)


def _smallest_size(moment: float, rhs: float, n: int) -> int:
    if moment <= 0.0:
        return 1
    if rhs <= 0.0:
        return n
    b = max(1, math.ceil(moment / rhs))
    while b < n and moment / b > rhs:
        b += 1
    return min(b, n)


def exact_batch_size(HG, v, theta: float, nu: float | None, n: int) -> int:
    """Smallest |S| meeting the exact inner-product test and, if ``nu`` is
    given, the orthogonality condition."""
    ip, orth, vv = _moments(HG, v)
    if vv == 0.0:
        return n
    b = _smallest_size(ip, theta**2 * vv**2, n)
    if nu is not None:
        b = max(b, _smallest_size(orth, nu**2 * vv, n))
    return b


def _random_subsets(rng, n, size, count):
    """``count`` uniform size-``size`` subsets of range(n), one per row."""
    keys = rng.random((count, n))
    return np.argpartition(keys, size - 1, axis=1)[:, :size] if size < n else np.tile(np.arange(n), (count, 1))


def _spectrum(Hm):
    eig = np.linalg.eigvalsh(Hm)
    if eig[0] <= 0:
        raise ValueError("H must be positive definite")
    return float(eig[0]), float(eig[-1])


def _status(ok: bool, trials: int, cfg: TheoryConfig) -> str:
    if trials < cfg.min_trials:
        return "inconclusive"
    return "pass" if ok else "fail"


def _run_fixed_step(problem, Hm, alpha, cfg, x0, iterations, rng):
    """One trajectory. Returns F values, squared true-gradient norms, batch
    sizes and the largest measured nu."""
    n = problem.n
    x = np.array(x0, dtype=float)
    values = np.empty(iterations + 1)
    grad_sq = np.empty(iterations + 1)
    sizes = np.empty(iterations, dtype=int)
    nu_seen = 0.0
    for k in range(iterations + 1):
        G, HG, v, grad = _population(problem, Hm, x)
        values[k] = problem.full_value(x)
        grad_sq[k] = grad @ grad
        if k == iterations:
            break
        b = exact_batch_size(HG, v, cfg.theta, cfg.nu, n)
        _, orth, vv = _moments(HG, v)
        if vv > 0:
            nu_seen = max(nu_seen, math.sqrt(orth / (b * vv)))
        sizes[k] = b
        S = rng.choice(n, size=b, replace=False)
        x = x - alpha * (Hm @ G[S].mean(axis=0))
    return values, grad_sq, sizes, nu_seen


def _default_start(problem, rng):
    return rng.standard_normal(problem.d) * 2.0


def check_descent_lemma(problem: QuadraticProblem, config: TheoryConfig = TheoryConfig(trials=1000, iterations=20),
                        H=None, x0=None) -> Report:
    """At each of ``iterations + 1`` points along one trajectory, estimate
    E_k F(x_{k+1}) and E_k ||H g^S||^2 from ``trials`` conditional draws and
    compare with

        F(x_k) - (alpha/2) grad^T H grad   and   (1 + theta^2 + nu^2) ||H grad||^2.
    """
    Hm = hessian_matrix(H, problem.d)
    lam1, lam2 = _spectrum(Hm)
    alpha = config.step(problem.L, lam2)
    rng = np.random.default_rng(config.seed)
    x = np.array(_default_start(problem, rng) if x0 is None else x0, dtype=float)
    factor = 1.0 + config.theta**2 + config.nu**2
    worst_descent = -math.inf
    worst_norm = -math.inf
    ok = True
    nu_seen = 0.0
    for _ in range(config.iterations + 1):
        G, HG, v, grad = _population(problem, Hm, x)
        b = exact_batch_size(HG, v, config.theta, config.nu, problem.n)
        _, orth, vv = _moments(HG, v)
        if vv > 0:
            nu_seen = max(nu_seen, math.sqrt(orth / (b * vv)))
        subsets = _random_subsets(rng, problem.n, b, config.trials)
        dirs = HG[subsets].mean(axis=1)
        x_next = x - alpha * dirs
        f_next = np.array([problem.full_value(z) for z in x_next])
        norms = np.einsum("ij,ij->i", dirs, dirs)
        descent_bound = problem.full_value(x) - 0.5 * alpha * (grad @ Hm @ grad)
        norm_bound = factor * vv
        se_f = f_next.std(ddof=1) / math.sqrt(config.trials) if config.trials > 1 else 0.0
        se_n = norms.std(ddof=1) / math.sqrt(config.trials) if config.trials > 1 else 0.0
        gap_f = f_next.mean() - descent_bound - 3 * se_f
        gap_n = norms.mean() - norm_bound - 3 * se_n
        scale_f = max(abs(descent_bound), 1e-300)
        ok &= gap_f <= 1e-12 * scale_f and gap_n <= 1e-12 * max(norm_bound, 1e-300)
        worst_descent = max(worst_descent, gap_f)
        worst_norm = max(worst_norm, gap_n)
        x = x_next[0]
    return Report("descent_lemma", _status(ok, config.trials, config), {
        "alpha": alpha, "lambda1": lam1, "lambda2": lam2, "trials": config.trials,
        "points": config.iterations + 1, "nu": config.nu, "nu_measured": nu_seen,
        "worst_descent_gap": float(worst_descent), "worst_norm_gap": float(worst_norm),
    })


def check_linear_rate(problem: QuadraticProblem, config: TheoryConfig = TheoryConfig(),
                      H=None, x0=None) -> Report:
    """Mean over trials of F(x_k) - F* against rho^k (F(x_0) - F*),
    rho = 1 - mu Lambda_1 alpha, for k = 0..iterations."""
    Hm = hessian_matrix(H, problem.d)
    lam1, lam2 = _spectrum(Hm)
    alpha = config.step(problem.L, lam2)
    rho = 1.0 - problem.mu * lam1 * alpha
    seeds = np.random.SeedSequence(config.seed).spawn(config.trials + 1)
    start_rng = np.random.default_rng(seeds[0])
    x0 = np.array(_default_start(problem, start_rng) if x0 is None else x0, dtype=float)
    gaps = np.empty((config.trials, config.iterations + 1))
    nu_seen = 0.0
    for j in range(config.trials):
        vals, _, _, nu_j = _run_fixed_step(problem, Hm, alpha, config, x0, config.iterations,
                                           np.random.default_rng(seeds[j + 1]))
        gaps[j] = vals - problem.f_star
        nu_seen = max(nu_seen, nu_j)
    mean = gaps.mean(axis=0)
    se = gaps.std(axis=0, ddof=1) / math.sqrt(config.trials) if config.trials > 1 else np.zeros_like(mean)
    k = np.arange(config.iterations + 1)
    bound = rho**k * (problem.full_value(x0) - problem.f_star)
    slack = mean - (bound + 3 * se)
    ok = bool(np.all(slack <= 1e-12 * bound[0]))
    return Report("linear_rate", _status(ok, config.trials, config), {
        "alpha": alpha, "rho": rho, "mu": problem.mu, "L": problem.L,
        "lambda1": lam1, "lambda2": lam2, "trials": config.trials,
        "iterations": config.iterations, "nu": config.nu, "nu_measured": nu_seen,
        "initial_gap": float(bound[0]), "final_mean_gap": float(mean[-1]),
        "final_bound": float(bound[-1]), "worst_slack": float(slack.max()),
    }, {"mean_gap": mean, "se": se, "bound": bound})


def check_sublinear_rate(problem: FiniteSumProblem, config: TheoryConfig = TheoryConfig(trials=200),
                         horizons=(10, 50), H=None, x0=None) -> Report:
    """min_{k<T} E||grad F(x_k)||^2 against 2 (F(x_0) - F_min) / (alpha T Lambda_1).

    F_min is the smallest objective value observed in any trial up to T,
    which is at most E F(x_T), so the comparison is no looser than the
    bound with the true infimum.
    """
    Hm = hessian_matrix(H, problem.d)
    lam1, lam2 = _spectrum(Hm)
    alpha = config.step(problem.L, lam2)
    horizon = max(horizons)
    seeds = np.random.SeedSequence(config.seed).spawn(config.trials + 1)
    start_rng = np.random.default_rng(seeds[0])
    x0 = np.array(_default_start(problem, start_rng) if x0 is None else x0, dtype=float)
    values = np.empty((config.trials, horizon + 1))
    grad_sq = np.empty((config.trials, horizon + 1))
    nu_seen = 0.0
    for j in range(config.trials):
        vals, gsq, _, nu_j = _run_fixed_step(problem, Hm, alpha, config, x0, horizon,
                                             np.random.default_rng(seeds[j + 1]))
        values[j], grad_sq[j] = vals, gsq
        nu_seen = max(nu_seen, nu_j)
    ok = True
    out = {"alpha": alpha, "L": problem.L, "lambda1": lam1, "lambda2": lam2,
           "trials": config.trials, "nu": config.nu, "nu_measured": nu_seen}
    f0 = problem.full_value(x0)
    for T in horizons:
        mean_g = grad_sq[:, :T].mean(axis=0)
        kmin = int(np.argmin(mean_g))
        se = grad_sq[:, kmin].std(ddof=1) / math.sqrt(config.trials) if config.trials > 1 else 0.0
        f_min = float(values[:, : T + 1].min())
        bound = 2.0 / (alpha * T * lam1) * (f0 - f_min)
        # F values carry rounding error relative to their magnitude
        rounding = 2.0 / (alpha * T * lam1) * 1e-12 * max(abs(f0), abs(f_min), 1e-300)
        holds = mean_g[kmin] <= bound + 3 * se + rounding
        ok &= bool(holds)
        out[f"T{T}_min_mean_grad_sq"] = float(mean_g[kmin])
        out[f"T{T}_bound"] = float(bound)
        out[f"T{T}_f_min_observed"] = f_min
    return Report("sublinear_rate", _status(ok, config.trials, config), out)
