import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pbqn.linesearch import LineSearchConfig, armijo_backtrack, gradient_variance, initial_steplength
from pbqn.problems import EvalCounter, QuadraticProblem, make_diagonal_quadratic


def _scalar_quadratic(a):
    """F(x) = a x^2 / 2 as a one-component finite sum."""
    return QuadraticProblem(np.array([[a]]), np.array([[0.0]]))


class TestInitialSteplength:
    def test_zero_variance(self):
        assert initial_steplength(0.0, 10, 3.0) == 1.0

    def test_ratio_one(self):
        assert initial_steplength(8.0, 4, 2.0) == 0.5

    def test_arithmetic(self):
        assert initial_steplength(1.0, 2, 1.0) == pytest.approx(2 / 3, rel=1e-15)

    @pytest.mark.parametrize("args", [(1.0, 2, 0.0), (1.0, 0, 1.0), (-1.0, 2, 1.0)])
    def test_usage_errors(self, args):
        with pytest.raises(ValueError):
            initial_steplength(*args)

    @given(v=st.floats(0, 1e6), b=st.integers(1, 10**6), g=st.floats(1e-6, 1e6))
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_bounded(self, v, b, g):
        a = initial_steplength(v, b, g)
        assert 0 < a <= 1
        assert initial_steplength(v * 2 + 1, b, g) < a or a < 1e-12
        assert initial_steplength(v, b + 1, g) >= a


class TestGradientVariance:
    def test_identical(self):
        assert gradient_variance(np.ones((4, 3)), np.ones(3)) == 0.0

    def test_arithmetic(self):
        assert gradient_variance([[0.0, 0.0], [2.0, 0.0]], [1.0, 0.0]) == 2.0

    def test_two_pass_oracle(self, rng):
        G = rng.standard_normal((7, 3))
        gbar = G.mean(axis=0)
        expected = sum(float((row - gbar) @ (row - gbar)) for row in G) / 6
        assert gradient_variance(G, gbar) == pytest.approx(expected, rel=1e-13)

    def test_needs_two(self):
        with pytest.raises(ValueError):
            gradient_variance([[1.0, 2.0]], [1.0, 2.0])


class TestArmijo:
    def test_accepts_unit_step(self):
        prob = _scalar_quadratic(1.0)
        out = armijo_backtrack(prob, [0], np.array([1.0]), np.array([-1.0]), np.array([1.0]), 1.0)
        assert (out.alpha, out.halvings, out.satisfied) == (1.0, 0, True)
        assert out.value_evals == 2

    def test_halves_once(self):
        prob = _scalar_quadratic(2.0)
        out = armijo_backtrack(prob, [0], np.array([1.0]), np.array([-2.0]), np.array([2.0]), 1.0)
        assert (out.alpha, out.halvings, out.satisfied) == (0.5, 1, True)
        assert out.value == 0.0

    def test_fallback_after_max_halvings(self):
        prob = _scalar_quadratic(1.0)
        cfg = LineSearchConfig(max_halvings=3)
        # an ascent direction can never satisfy the condition
        out = armijo_backtrack(prob, [0], np.array([1.0]), np.array([1.0]), np.array([-1.0]), 1.0, cfg)
        assert not out.satisfied
        assert out.halvings == 3 and out.alpha == 1.0 / 8
        assert out.value_evals == 5

    def test_non_finite_trial_is_a_failure(self):
        class Exploding(QuadraticProblem):
            def _values(self, idx, x):
                v = super()._values(idx, x)
                return np.where(np.abs(x[0]) > 0.75, np.inf, v)

        prob = Exploding(np.array([[1.0]]), np.array([[0.0]]))
        out = armijo_backtrack(prob, [0], np.array([1.0]), np.array([-2.0]), np.array([1.0]), 1.0)
        assert out.satisfied and out.halvings == 1

    def test_counts_value_evaluations(self, small_quadratic):
        c = EvalCounter()
        x = np.ones(5)
        g = small_quadratic.batch_gradient([0, 1, 2], x)
        out = armijo_backtrack(small_quadratic, [0, 1, 2], x, -g, g, 1.0, counter=c)
        assert c.value_evals == 3 * out.value_evals
        assert c.grad_evals == 0

    def test_alpha0_validated(self):
        prob = _scalar_quadratic(1.0)
        with pytest.raises(ValueError):
            armijo_backtrack(prob, [0], np.ones(1), -np.ones(1), np.ones(1), 1.5)

    @pytest.mark.parametrize("kw", [{"c1": 0.0}, {"c1": 1.0}, {"max_halvings": 0}, {"alpha_cap": 0.0}])
    def test_config_validated(self, kw):
        with pytest.raises(ValueError):
            LineSearchConfig(**kw)

    @given(seed=st.integers(0, 2**32 - 1), alpha0=st.floats(1e-3, 1.0))
    @settings(max_examples=100, deadline=None)
    def test_accepted_step_satisfies_condition(self, seed, alpha0):
        rng = np.random.default_rng(seed)
        q = make_diagonal_quadratic(10, 4, 0.1, 5.0, rng)
        S = rng.choice(10, size=4, replace=False)
        x = rng.standard_normal(4) * 3
        g = q.batch_gradient(S, x)
        H = np.diag(rng.uniform(0.2, 2.0, 4))
        p = -H @ g
        cfg = LineSearchConfig()
        out = armijo_backtrack(q, S, x, p, g, alpha0, cfg)
        assert out.alpha == alpha0 * 0.5**out.halvings
        if out.satisfied:
            # independent recheck of the inequality
            f0 = q.batch_value(S, x)
            assert q.batch_value(S, x + out.alpha * p) <= f0 - cfg.c1 * out.alpha * (g @ H @ g)
            if out.halvings > 0:
                prev = 2 * out.alpha
                assert not q.batch_value(S, x + prev * p) <= f0 - cfg.c1 * prev * (g @ H @ g)
        # deterministic
        assert armijo_backtrack(q, S, x, p, g, alpha0, cfg) == out

    def test_f0_skips_evaluation(self):
        prob = _scalar_quadratic(1.0)
        out = armijo_backtrack(prob, [0], np.array([1.0]), np.array([-1.0]), np.array([1.0]), 1.0, f0=0.5)
        assert out.value_evals == 1
        assert math.isclose(out.value, 0.0)
