"""Command-line entry point.

Subcommands: train, bound, verify, depth-sweep, histogram.  Exit codes:
2 usage, 3 io/training/model-load failure, 4 nonpositive margin,
5 verification failure.  All commands are deterministic under --seed.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .bounds import (
    BoundConfig,
    MarginError,
    generalization_bound,
    leading_term,
    measure,
    params_from_measurements,
    spectral_baseline,
)
from .linalg import spectral_norm_stack
from .modelio import load_dataset_csv, load_model, save_model
from .training import (
    DatasetSpec,
    TrainConfig,
    TrainingDiverged,
    make_dataset,
    train,
)
from .verify import (
    verify_finite_change,
    verify_jacobian_fd,
    verify_release_lipschitz,
    verify_telescoping,
    verify_upper_bound,
    write_reports,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_MARGIN = 4
EXIT_VERIFY = 5

SYNTHETIC = ("two_moons", "circles", "gaussian_blobs")


def _dataset_pairs(args, train_split_only=True):
    """Resolve --dataset: a synthetic name (regenerated from flags) or a CSV
    path.  Returns a list of (x, y) pairs."""
    name = args.dataset
    if name in SYNTHETIC:
        data = make_dataset(DatasetSpec(name, args.n, args.noise, args.seed))
        return data.train_pairs() if train_split_only else data.test_pairs()
    x, y = load_dataset_csv(name)
    return [(x[i], int(y[i])) for i in range(len(y))]


def _add_dataset_flags(p):
    p.add_argument("--dataset", required=True, help="synthetic name or CSV path")
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--noise", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)


def cmd_train(args) -> int:
    config = TrainConfig(
        lambda_=args.lambda_,
        sigma_threshold=args.sigma_threshold,
        epochs=args.epochs,
        learning_rate=args.lr,
        lr_decay=(args.decay_factor, tuple(args.decay_epochs)),
        batch_size=args.batch_size,
        seed=args.seed,
        dataset=DatasetSpec(args.dataset, args.n, args.noise, args.seed),
        depth=args.depth,
        width=args.width,
    )
    try:
        net, metrics = train(config)
    except TrainingDiverged as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_IO
    save_model(
        net,
        args.out_model,
        metadata={"seed": args.seed, "train_config_digest": config.digest()},
    )
    metrics.write(args.out_metrics)
    print(f"final test accuracy: {metrics.test_acc[-1]!r}")
    return EXIT_OK


def cmd_bound(args) -> int:
    net, _ = load_model(args.model)
    pairs = _dataset_pairs(args)
    ref_a = ref_b = None
    if args.ref_matrices == "self":
        ref_a = [w.copy() for w in net.weights]
        ref_b = [w.copy() for w in net.weights]
    config = BoundConfig(
        xi=args.xi,
        delta=args.delta,
        ref_a=ref_a,
        ref_b=ref_b,
        relu_variant=args.relu_variant,
    )
    report = generalization_bound(net, pairs, config)
    with open(args.out_report, "w") as f:
        f.write(report.to_json())
    print(f"beta_star: {report.beta_star!r}")
    print(f"leading_term: {report.leading_term!r}")
    print(f"spectral_baseline: {report.spectral_baseline!r}")
    print(f"log_factor: {report.log_factor!r}")
    return EXIT_OK


def cmd_verify(args) -> int:
    net, _ = load_model(args.model)
    pairs = _dataset_pairs(args)
    r = net.depth
    xi = args.xi if args.xi is not None else 1.0 / r**2
    m = measure(net, pairs, xi)
    gamma = args.gamma if args.gamma is not None else (m.gamma if m.gamma > 0 else 1.0)
    params = params_from_measurements(m)
    rng = np.random.default_rng(args.seed)

    reports = [
        verify_upper_bound(
            net, pairs, params, trials=args.probes, gamma=gamma, xi=xi, seed=args.seed
        ),
        verify_release_lipschitz(
            net, gamma, params, probes=args.probes, seed=args.seed, dataset=pairs
        ),
    ]
    x0 = np.asarray(pairs[0][0], dtype=np.float64)
    nu = 0.1 * rng.standard_normal(x0.shape)
    reports.append(verify_telescoping(net, x0, nu))
    reports.append(verify_finite_change(net, net.num_layers, x0, nu))
    reports.append(verify_jacobian_fd(net, x0, step=1e-4))

    all_passed = write_reports(reports, args.out_report)
    for rep in reports:
        status = "pass" if rep.passed else "FAIL"
        print(f"{rep.name}: {status} (worst_slack={rep.worst_slack!r})")
    return EXIT_OK if all_passed else EXIT_VERIFY


def cmd_depth_sweep(args) -> int:
    depths = [int(d) for d in args.depths.split(",") if d]
    if not depths:
        raise ValueError("--depths must list at least one depth")
    rows = []
    for depth in depths:
        config = TrainConfig(
            lambda_=0.0,
            epochs=args.epochs,
            learning_rate=args.lr,
            lr_decay=(0.2, (max(1, (3 * args.epochs) // 5),)),
            batch_size=args.batch_size,
            seed=args.seed + depth,
            dataset=DatasetSpec(args.dataset, args.n, args.noise, args.seed),
            depth=depth,
            width=args.width,
            # unit-gain init: the default bound starves very deep stacks
            init_gain=math.sqrt(3.0),
        )
        net, _ = train(config)
        pairs = make_dataset(config.dataset).train_pairs()
        xi = 1.0 / depth**2
        m = measure(net, pairs, xi)
        # submultiplicative domination must hold on every trained model
        prod = 1.0
        for w in net.weights:
            prod *= float(spectral_norm_stack(w[None])[0])
        sigma_full = m.sigma_at(1, m.q) - xi
        if sigma_full > prod * (1.0 + 1e-9):
            raise RuntimeError(
                f"submultiplicativity violated at depth {depth}: "
                f"{sigma_full} > {prod}"
            )
        lt = leading_term(net, pairs).aggregate
        if m.gamma > 0:
            sb = spectral_baseline(net, m.gamma)
            log_ratio = math.log(sb / lt) if lt > 0 else math.nan
        else:
            sb, log_ratio = math.nan, math.nan
        rows.append((depth, lt, sb, log_ratio))
    with open(args.out_csv, "w") as f:
        f.write("depth,leading_term,spectral_baseline,log_ratio\n")
        for depth, lt, sb, lr_ in rows:
            f.write(f"{depth},{lt!r},{sb!r},{lr_!r}\n")
    print(f"wrote {len(rows)} depths to {args.out_csv}")
    return EXIT_OK


def cmd_histogram(args) -> int:
    net, _ = load_model(args.model)
    pairs = _dataset_pairs(args)
    lt = leading_term(net, pairs)
    vals = np.sort(lt.per_example)[::-1][: args.top_k]
    with open(args.out_csv, "w") as f:
        f.write(f"# excluded_nonpositive_margin={lt.n_excluded}\n")
        f.write("leading_term\n")
        for v in vals:
            f.write(f"{float(v)!r}\n")
    print(f"wrote {len(vals)} values to {args.out_csv}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lipaug",
        description="Train small smooth nets, evaluate data-dependent "
        "generalization bounds, and verify the augmentation guarantees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model on a synthetic dataset")
    _add_dataset_flags(p)
    p.add_argument("--depth", type=int, default=4)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--lambda", dest="lambda_", type=float, default=0.0)
    p.add_argument("--sigma-threshold", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--decay-factor", type=float, default=0.2)
    p.add_argument("--decay-epochs", type=int, nargs="*", default=[60])
    p.add_argument("--out-model", required=True)
    p.add_argument("--out-metrics", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("bound", help="evaluate the generalization bound")
    p.add_argument("--model", required=True)
    _add_dataset_flags(p)
    p.add_argument("--delta", type=float, default=0.01)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--relu-variant", action="store_true")
    p.add_argument("--ref-matrices", choices=("zero", "self"), default="zero")
    p.add_argument("--out-report", required=True)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("verify", help="run the verification suite")
    p.add_argument("--model", required=True)
    _add_dataset_flags(p)
    p.add_argument("--probes", type=int, required=True)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--xi", type=float, default=None)
    p.add_argument("--out-report", required=True)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("depth-sweep", help="train one model per depth and "
                       "compare leading term vs spectral baseline")
    p.add_argument("--depths", required=True, help="comma-separated depths")
    _add_dataset_flags(p)
    p.add_argument("--width", type=int, default=32)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(fn=cmd_depth_sweep)

    p = sub.add_parser("histogram", help="top-k per-example leading terms")
    p.add_argument("--model", required=True)
    _add_dataset_flags(p)
    p.add_argument("--top-k", type=int, default=100)
    p.add_argument("--out-csv", required=True)
    p.set_defaults(fn=cmd_histogram)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else EXIT_USAGE
    if getattr(args, "probes", None) is not None and args.probes < 1:
        print("usage error: --probes must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.fn(args)
    except MarginError as exc:
        print(f"margin error: {exc}", file=sys.stderr)
        return EXIT_MARGIN
    except (OSError, ValueError, KeyError, TrainingDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
