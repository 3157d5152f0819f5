import csv
import json
import math
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from pbqn.batching import BatchControllerConfig
from pbqn.bench import (
    CSV_COLUMNS,
    PerfModelInput,
    RstarError,
    compute_rstar,
    evaluate_metrics,
    metrics_rows,
    pbqn_predicted_faster,
    perf_model_threshold,
    problem_hash,
    write_metrics_csv,
)
from pbqn.optimizer import PbqnConfig, StopConfig, run_pbqn
from pbqn.problems import LogisticProblem, make_diagonal_quadratic, make_synthetic_logistic


class TestRstar:
    def test_quadratic_optimum(self):
        q = make_diagonal_quadratic(10, 4, 0.2, 3.0, np.random.default_rng(0))
        assert compute_rstar(q) == pytest.approx(q.f_star, abs=1e-12)

    def test_matches_gradient_descent_oracle(self):
        prob = make_synthetic_logistic(20, 4, np.random.default_rng(1), density=0.7)
        X = prob.X.toarray()
        L = np.max(np.sum(X**2, axis=1)) / 4 + prob.lam
        x = np.zeros(prob.d)
        for _ in range(200_000):
            g = prob.full_gradient(x)
            if np.max(np.abs(g)) < 1e-11:
                break
            x -= g / L
        assert compute_rstar(prob) == pytest.approx(prob.full_value(x), abs=1e-8)

    def test_cache(self, tmp_path):
        prob = make_synthetic_logistic(30, 5, np.random.default_rng(2))
        cache = tmp_path / "rstar.json"
        first = compute_rstar(prob, cache_file=cache)
        assert compute_rstar(prob, cache_file=cache) == first
        stored = json.loads(cache.read_text())
        assert list(stored.values()) == [first]
        assert next(iter(stored)).startswith(problem_hash(prob))

    def test_file_cache_is_read(self, tmp_path):
        prob = make_synthetic_logistic(25, 5, np.random.default_rng(12))
        cache = tmp_path / "c.json"
        key = f"{problem_hash(prob)}:{1e-8!r}"
        cache.write_text(json.dumps({key: 0.125}))
        assert compute_rstar(prob, cache_file=cache) == 0.125

    def test_iteration_cap(self):
        prob = make_synthetic_logistic(40, 6, np.random.default_rng(3))
        with pytest.raises(RstarError) as info:
            compute_rstar(prob, tol=1e-14, max_iter=2)
        assert math.isfinite(info.value.best_value)


class TestHash:
    def test_deterministic_and_sensitive(self):
        a = make_synthetic_logistic(10, 3, np.random.default_rng(0))
        b = make_synthetic_logistic(10, 3, np.random.default_rng(0))
        c = make_synthetic_logistic(10, 3, np.random.default_rng(1))
        assert problem_hash(a) == problem_hash(b) != problem_hash(c)
        q = make_diagonal_quadratic(4, 2, 0.5, 1.0, np.random.default_rng(0))
        assert len(problem_hash(q)) == 64


class TestMetrics:
    def test_zero_iterate(self):
        prob = make_synthetic_logistic(10, 3, np.random.default_rng(0))
        out = evaluate_metrics(prob, prob, np.zeros(3), 0.5)
        assert out["test_loss"] == pytest.approx(math.log(2), abs=1e-15)
        assert out["test_acc"] == 0.0
        assert out["train_error"] == pytest.approx(math.log(2) - 0.5, abs=1e-15)

    def test_perfect_separator(self):
        X = sp.csr_matrix(np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]]))
        test = LogisticProblem(X, [1, -1, 1, -1])
        assert evaluate_metrics(test, test, np.array([1.0, -1.0]), 0.0)["test_acc"] == 1.0

    def test_enumerated_accuracy(self):
        rng = np.random.default_rng(4)
        X = rng.standard_normal((10, 3))
        z = np.where(rng.random(10) < 0.5, -1, 1)
        test = LogisticProblem(sp.csr_matrix(X), z)
        x = rng.standard_normal(3)
        correct = sum(1 for row, label in zip(X, z) if np.sign(row @ x) == label)
        loss = sum(math.log1p(math.exp(-label * (row @ x))) for row, label in zip(X, z)) / 10
        out = evaluate_metrics(test, test, x, 0.0)
        assert out["test_acc"] == correct / 10
        assert out["test_loss"] == pytest.approx(loss, rel=1e-13)

    def test_no_test_set(self):
        q = make_diagonal_quadratic(4, 2, 0.5, 1.0, np.random.default_rng(0))
        out = evaluate_metrics(q, None, np.zeros(2), 0.0)
        assert math.isnan(out["test_loss"]) and math.isnan(out["test_acc"])


@pytest.fixture(scope="module")
def run():
    prob = make_synthetic_logistic(200, 6, np.random.default_rng(5))
    test = make_synthetic_logistic(50, 6, np.random.default_rng(6))
    rstar = compute_rstar(prob)
    cfg = PbqnConfig(controller=BatchControllerConfig(initial_size=32), stop=StopConfig(max_fge=10))
    obs = lambda x: {"test_loss": test.data_loss(x), "test_acc": test.accuracy(x)}
    traj = run_pbqn(prob, cfg, np.zeros(6), np.random.default_rng(0), observer=obs)
    return traj, rstar


class TestCsv:
    def test_rows(self, run):
        traj, rstar = run
        rows = metrics_rows(traj, rstar)
        assert len(rows) == len(traj.records)
        fge = [r.fge for r in rows]
        assert fge == sorted(fge)
        assert all(r.train_error >= -1e-9 for r in rows)
        assert all(0 <= r.test_acc <= 1 for r in rows)

    def test_round_trip(self, run, tmp_path):
        traj, rstar = run
        rows = metrics_rows(traj, rstar)
        path = tmp_path / "m.csv"
        write_metrics_csv(rows, path)
        with path.open() as fh:
            reader = csv.reader(fh)
            assert tuple(next(reader)) == CSV_COLUMNS
            back = list(reader)
        assert len(back) == len(rows)
        for text, row in zip(back, rows):
            assert int(text[0]) == row.k
            assert float(text[2]) == row.train_error
            assert float(text[6]) == row.alpha
            assert text[8] in ("0", "1")

    def test_header_prefix(self):
        assert CSV_COLUMNS[:9] == ("k", "fge", "train_error", "test_loss", "test_acc", "batch_size",
                                   "alpha", "halvings", "pair_admitted")


class TestPerfModel:
    def test_stated_constants_exact(self):
        inp = PerfModelInput(cost_large=Fraction(4, 3), cost_small=1, batch_large=4, batch_small=1,
                             parallel_efficiency=Fraction(1, 5))
        assert perf_model_threshold(inp) == Fraction(15, 16)
        floats = PerfModelInput(4 / 3, 1.0, 4.0, 1.0, 0.2)
        assert perf_model_threshold(floats) == pytest.approx(0.9375, abs=1e-15)

    def test_neutral(self):
        assert perf_model_threshold(PerfModelInput(2.0, 2.0, 8.0, 8.0, 1.0)) == 1.0

    def test_doubling_large_batch_halves(self):
        a = perf_model_threshold(PerfModelInput(1.5, 1.0, 4.0, 1.0, 0.5))
        b = perf_model_threshold(PerfModelInput(1.5, 1.0, 8.0, 1.0, 0.5))
        assert b == pytest.approx(a / 2, rel=1e-15)

    @pytest.mark.parametrize("ratio", [0.5, 0.9, 0.95, 2.0])
    def test_prediction_agrees_with_threshold(self, ratio):
        inp = PerfModelInput(Fraction(4, 3), 1, 4, 1, Fraction(1, 5), iters_large=ratio * 1000,
                             iters_small=1000, nodes=8)
        assert pbqn_predicted_faster(inp) == (ratio < 0.9375)

    def test_needs_iterations(self):
        with pytest.raises(ValueError):
            pbqn_predicted_faster(PerfModelInput(1.0, 1.0, 1.0, 1.0, 1.0))

    @pytest.mark.parametrize("args", [(0, 1, 1, 1, 0.5), (1, 1, -1, 1, 0.5), (1, 1, 1, 1, 0.0), (1, 1, 1, 1, 1.5)])
    def test_validation(self, args):
        with pytest.raises(ValueError):
            PerfModelInput(*args)
