"""Command line driver: ``pbqn run|tune|rstar|verify|perfmodel``."""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .batching import BatchControllerConfig
from .bench import (
    PerfModelInput,
    compute_rstar,
    metrics_rows,
    pbqn_predicted_faster,
    perf_model_threshold,
    problem_hash,
    write_metrics_csv,
)
from .data import SplitSpec, check_against_registry, parse_sparse_file, split
from .linesearch import LineSearchConfig
from .optimizer import (
    PbqnConfig,
    PbqnSolver,
    SgConfig,
    StopConfig,
    SvrgConfig,
    Trajectory,
    default_alpha_grid,
    run_sg,
    run_svrg,
    tune_baseline,
)
from .problems import (
    FiniteSumProblem,
    LogisticProblem,
    make_categorical_logistic,
    make_diagonal_quadratic,
    make_sigmoid_sum,
    make_synthetic_logistic,
)
from .theory import TheoryConfig, check_descent_lemma, check_linear_rate, check_sublinear_rate


@dataclass
class Setup:
    train: FiniteSumProblem
    test: LogisticProblem | None
    cache_file: Path | None
    description: dict


def _parse_synthetic(spec: str):
    kind, *fields = spec.split(":")
    try:
        if kind == "quad" and len(fields) == 4:
            d, mu, L, n = int(fields[0]), float(fields[1]), float(fields[2]), int(fields[3])
            if not 0 < mu <= L:
                raise ValueError
            return kind, (n, d, mu, L)
        if kind == "logistic" and len(fields) == 2:
            return kind, (int(fields[0]), int(fields[1]))
        if kind == "categorical" and len(fields) == 1:
            return kind, (int(fields[0]),)
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(
        f"bad synthetic spec {spec!r}; expected quad:<d>:<mu>:<L>:<N>, logistic:<n>:<d> or categorical:<n>")


def build_problem(args) -> Setup:
    """Training problem, optional logistic test problem, and R* cache path."""
    split_spec = SplitSpec(args.train_fraction, args.split_seed)
    if args.synthetic:
        try:
            kind, params = _parse_synthetic(args.synthetic)
        except argparse.ArgumentTypeError as exc:
            raise SystemExit(f"error: {exc}") from None
        # synthetic data are drawn from the split seed so --seed only moves the optimizer
        rng = np.random.default_rng(args.split_seed)
        desc = {"synthetic": args.synthetic}
        if kind == "quad":
            n, d, mu, L = params
            return Setup(make_diagonal_quadratic(n, d, mu, L, rng), None, None, desc)
        if kind == "logistic":
            full = make_synthetic_logistic(params[0], params[1], rng)
        else:
            full = make_categorical_logistic(params[0], rng)
        perm = rng.permutation(full.n)
        n_train = math.ceil(args.train_fraction * full.n)
        if not 0 < n_train < full.n:
            raise SystemExit("error: the split leaves one side empty")
        tr, te = perm[:n_train], perm[n_train:]
        train = LogisticProblem(full.X[tr], full.z[tr])
        test = LogisticProblem(full.X[te], full.z[te])
        return Setup(train, test, None, desc)

    path = Path(args.dataset)
    data = parse_sparse_file(path)
    desc = {"dataset": str(path)}
    if args.test_dataset:
        test_data = parse_sparse_file(args.test_dataset)
        check_against_registry(data, part="train")
        desc["test_dataset"] = str(args.test_dataset)
        train_data = data
    else:
        check_against_registry(data, part="total")
        train_data, test_data = split(data, split_spec)
    d = max(train_data.d, test_data.d)
    train = LogisticProblem.from_dataset(train_data, n_features=d)
    test = LogisticProblem.from_dataset(test_data, n_features=d)
    cache = path.with_name(path.name + ".rstar.json")
    return Setup(train, test, cache, desc)


def _observer(test: LogisticProblem | None):
    if test is None:
        return None

    def observe(x):
        return {"test_loss": test.data_loss(x), "test_acc": test.accuracy(x)}

    return observe


def _pbqn_config(args) -> PbqnConfig:
    return PbqnConfig(
        controller=BatchControllerConfig(theta=args.theta, initial_size=args.s0),
        linesearch=LineSearchConfig(c1=args.c1),
        memory_size=args.memory,
        curvature_eps=args.eps,
        mode=args.mode,
        overlap_fraction=args.overlap,
        stop=StopConfig(max_fge=args.budget_fge),
    )


def _baseline_runner(args, problem, budget, observer=None):
    x0 = np.zeros(problem.d)
    if args.optimizer == "sg":
        return lambda alpha, rng: run_sg(problem, SgConfig(alpha, args.batch_size, budget), x0, rng, observer)
    return lambda alpha, rng: run_svrg(problem, SvrgConfig(alpha, max_fge=budget), x0, rng, observer)


def _tune(args, problem) -> tuple[float, dict]:
    budget = args.tune_budget_fge if args.tune_budget_fge is not None else args.budget_fge
    runner = _baseline_runner(args, problem, budget)
    result = tune_baseline(problem, runner, default_alpha_grid(), seeds=range(args.tune_seeds))
    return result.best_alpha, {repr(a): s for a, s in result.scores.items()}


def _config_record(args) -> dict:
    keys = ("optimizer", "mode", "overlap", "theta", "s0", "c1", "memory", "eps", "alpha",
            "budget_fge", "seed", "split_seed", "train_fraction", "batch_size", "tune")
    return {k: getattr(args, k) for k in keys}


def _input_hash(problem, test, config) -> str:
    h = hashlib.sha256()
    h.update(problem_hash(problem).encode())
    if test is not None:
        h.update(problem_hash(test).encode())
    h.update(json.dumps(config, sort_keys=True).encode())
    return h.hexdigest()


def _write_outputs(out: Path, traj_like: Trajectory, rstar, manifest):
    out.mkdir(parents=True, exist_ok=True)
    rows = metrics_rows(traj_like, rstar)
    write_metrics_csv(rows, out / "metrics.csv")
    manifest["rows"] = len(rows)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_run(args) -> int:
    setup = build_problem(args)
    problem = setup.train
    rstar = compute_rstar(problem, cache_file=setup.cache_file)
    config = _config_record(args)
    manifest = {
        "version": __version__,
        "input": setup.description,
        "config": config,
        "seed": args.seed,
        "rstar": rstar,
    }
    if args.optimizer != "pbqn":
        if args.tune:
            args.alpha, scores = _tune(args, problem)
            config["alpha"] = args.alpha
            manifest["tune_scores"] = scores
        elif args.alpha is None:
            raise SystemExit(f"error: --optimizer {args.optimizer} needs --alpha or --tune")
    manifest["input_hash"] = _input_hash(problem, setup.test, config)
    out = Path(args.out)
    rng = np.random.default_rng(args.seed)
    observer = _observer(setup.test)
    x0 = np.zeros(problem.d)

    if args.optimizer == "pbqn":
        solver = PbqnSolver(problem, _pbqn_config(args), x0, rng, observer)
        try:
            traj = solver.run()
        except Exception:
            partial = Trajectory(solver.records, solver.x.copy(), "error", solver.counter, problem.n)
            manifest["status"] = "error"
            _write_outputs(out, partial, rstar, manifest)
            raise
    else:
        traj = _baseline_runner(args, problem, args.budget_fge, observer)(args.alpha, rng)
    manifest["status"] = traj.status
    _write_outputs(out, traj, rstar, manifest)
    last = traj.records[-1]
    print(f"status={traj.status} iterations={last.k} fge={last.component_grad_evals / problem.n:.4g} "
          f"train_error={last.train_loss - rstar:.6g}")
    return 0


def cmd_tune(args) -> int:
    if args.optimizer == "pbqn":
        raise SystemExit("error: tune applies to sg and svrg")
    setup = build_problem(args)
    best, scores = _tune(args, setup.train)
    for alpha, score in scores.items():
        print(f"alpha={alpha} score={score!r}")
    print(f"best_alpha={best!r}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = {"optimizer": args.optimizer, "best_alpha": best, "scores": scores,
                   "input": setup.description}
        (out / "tune.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_rstar(args) -> int:
    setup = build_problem(args)
    print(f"rstar={compute_rstar(setup.train, tol=args.tol, cache_file=setup.cache_file)!r}")
    return 0


def cmd_verify(args) -> int:
    rng = np.random.default_rng(args.seed)
    quad = make_diagonal_quadratic(32, 10, 0.1, 1.0, rng)
    sig = make_sigmoid_sum(32, 10, rng)
    reports = [
        check_linear_rate(quad, TheoryConfig(theta=args.theta, nu=args.nu, trials=args.trials,
                                             iterations=50, seed=args.seed)),
        check_descent_lemma(quad, TheoryConfig(theta=args.theta, nu=args.nu, trials=2 * args.trials,
                                               iterations=20, seed=args.seed)),
        check_sublinear_rate(sig, TheoryConfig(theta=args.theta, nu=args.nu, trials=args.trials,
                                               seed=args.seed)),
    ]
    print("\n\n".join(r.to_text() for r in reports))
    return 0 if all(r.status != "fail" for r in reports) else 1


def cmd_perfmodel(args) -> int:
    inp = PerfModelInput(
        cost_large=args.cost_ratio, cost_small=1.0,
        batch_large=args.batch_ratio, batch_small=1.0,
        parallel_efficiency=args.pe,
        iters_large=args.iters_large, iters_small=args.iters_small,
    )
    threshold = perf_model_threshold(inp)
    print(f"threshold={threshold!r}")
    if args.iters_large is not None and args.iters_small is not None:
        print(f"iteration_ratio={args.iters_large / args.iters_small!r}")
        print(f"pbqn_faster={pbqn_predicted_faster(inp)}")
    return 0


def _open_unit(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1)")
    return v


def _half_open_unit(text):
    v = float(text)
    if not 0 < v <= 1:
        raise argparse.ArgumentTypeError(f"{text} is not in (0, 1]")
    return v


def _add_problem_args(p):
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", help="LIBSVM-format file")
    src.add_argument("--synthetic", help="quad:<d>:<mu>:<L>:<N>, logistic:<n>:<d> or categorical:<n>")
    p.add_argument("--test-dataset", help="separate test file (otherwise the data are split)")
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--train-fraction", type=_open_unit, default=0.9)


def _add_optimizer_args(p):
    p.add_argument("--optimizer", choices=("pbqn", "sg", "svrg"), default="pbqn")
    p.add_argument("--mode", choices=("mb", "fo"), default="mb")
    p.add_argument("--overlap", type=_open_unit, default=0.25)
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--s0", type=int, default=512)
    p.add_argument("--c1", type=float, default=1e-4)
    p.add_argument("--memory", type=int, default=10)
    p.add_argument("--eps", type=float, default=1e-2)
    p.add_argument("--alpha", type=float)
    p.add_argument("--batch-size", type=int, default=1, help="SG minibatch size")
    p.add_argument("--budget-fge", type=float, default=100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tune-seeds", type=int, default=1)
    p.add_argument("--tune-budget-fge", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbqn", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one optimizer and write metrics.csv and manifest.json")
    _add_problem_args(p)
    _add_optimizer_args(p)
    p.add_argument("--tune", action="store_true", help="pick the SG/SVRG step from the 2^j grid first")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tune", help="sweep alpha = 2^j, j = -10..10, for sg or svrg")
    _add_problem_args(p)
    _add_optimizer_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_tune, optimizer="sg")

    p = sub.add_parser("rstar", help="reference optimal value of the training objective")
    _add_problem_args(p)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_rstar)

    p = sub.add_parser("verify", help="Monte Carlo checks of the convergence bounds")
    p.add_argument("--theta", type=float, default=0.9)
    p.add_argument("--nu", type=float, default=5.0)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("perfmodel", help="parallel speed-up criterion against SG")
    p.add_argument("--cost-ratio", type=float, default=4 / 3, help="C_L / C_S")
    p.add_argument("--batch-ratio", type=float, default=4.0, help="B_L / B_S")
    p.add_argument("--pe", type=_half_open_unit, default=0.2, help="SG parallel efficiency")
    p.add_argument("--iters-large", type=float)
    p.add_argument("--iters-small", type=float)
    p.set_defaults(func=cmd_perfmodel)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "run" and args.tune and args.optimizer == "pbqn":
        parser.error("--tune applies to sg and svrg")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
