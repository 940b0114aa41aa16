"""Command line front end.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures
(including failed invariance checks from ``kernelcheck``).  Values from a
``--config`` file override command line flags.
"""

from __future__ import annotations

import argparse
import sys

from .experiments import EXPERIMENT_DEFAULTS, ExperimentConfig, run_experiment

_ESTIMATORS = ["msc-cis", "msc-cis-prior", "msc-csmc", "snis", "subset-avg"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scoreclimb",
        description="Run the score-climbing experiment suite; see README for formats.")
    sub = parser.add_subparsers(dest="experiment", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--iters", type=int, default=None, help="optimization iterations")
    common.add_argument("--samples", type=int, default=None, help="particles per sweep (S)")
    common.add_argument("--estimator", choices=_ESTIMATORS, default=None)
    common.add_argument("--schedule", default=None,
                        help="step sizes, e.g. rm:a=0.5,b=10,gamma=0.7 or adam:lr=0.01")
    common.add_argument("--replications", type=int, default=None)
    common.add_argument("--dataset", default=None, help="CSV dataset path")
    common.add_argument("--out", default=None, help="output directory for traces + summary")
    common.add_argument("--config", default=None,
                        help="key = value file whose entries override flags")
    common.add_argument("--workers", type=int, default=1,
                        help="replication worker processes (default 1)")

    sub.add_parser("skewnormal", parents=[common],
                   help="toy skew-normal convergence study")
    sub.add_parser("probit", parents=[common],
                   help="Bayesian probit test error over train/test splits")
    sub.add_parser("stochvol", parents=[common],
                   help="stochastic volatility likelihood climbing on simulated data")
    p_sub = sub.add_parser("subsetavg", parents=[common],
                           help="powered-minibatch fixed point vs. exact perturbed posterior")
    p_sub.add_argument("--subset-size", type=int, default=2, dest="subset_size",
                       help="minibatch size m (default 2)")
    p_chk = sub.add_parser("kernelcheck", parents=[common],
                           help="kernel invariance suites against exact oracles")
    p_chk.add_argument("--target", choices=["conjugate", "lgssm"], default="conjugate")
    return parser


def _assemble_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = dict(
        estimator=args.estimator, samples=args.samples, iters=args.iters,
        schedule=args.schedule, replications=args.replications, seed=args.seed,
        dataset=args.dataset, out=args.out, workers=args.workers,
        subset_size=getattr(args, "subset_size", None),
        target=getattr(args, "target", None),
    )
    config = ExperimentConfig.for_experiment(args.experiment, **overrides)
    if args.config:
        config = config.updated_from_file(args.config)
    return config


def _print_summary(config: ExperimentConfig, summary: dict) -> None:
    exp = summary["experiment"]
    if exp == "skewnormal":
        oracle = summary["oracle"]
        print(f"oracle      mu* = {oracle['mu']:.4f}  sigma* = {oracle['sigma']:.4f}")
        print(f"{config.estimator:11s} mu  = {summary['mu_mean']:.4f} "
              f"+- {summary['mu_std']:.4f}  sigma = {summary['sigma_mean']:.4f} "
              f"+- {summary['sigma_std']:.4f}  ({len(summary['replications'])} seeds)")
    elif exp == "probit":
        print(f"test error = {summary['test_error_mean']:.3f} "
              f"+- {summary['test_error_std']:.3f} over {len(summary['splits'])} splits "
              f"(n = {summary['n_rows']}, d = {summary['n_features']})")
    elif exp == "stochvol":
        for rep in summary["replications"]:
            print(f"rep {rep['rep']}: log-marginal {rep['log_marginal_fit']['mean']:.2f} "
                  f"(start {rep['log_marginal_start']['mean']:.2f}, "
                  f"true {rep['log_marginal_true']['mean']:.2f}, "
                  f"improvement {rep['improvement_nats']:+.2f} nats)")
    elif exp == "subsetavg":
        pt = summary["perturbed_posterior"]
        p = summary["true_posterior"]
        print(f"perturbed posterior mean = {pt['mean']:.4f} sd = {pt['sd']:.4f}; "
              f"true mean = {p['mean']:.4f} sd = {p['sd']:.4f}")
        for rep in summary["replications"]:
            print(f"rep {rep['rep']}: mu = {rep['mu']:.4f} sigma = {rep['sigma']:.4f} "
                  f"(gap to perturbed {rep['gap_to_perturbed']:.4f}, "
                  f"to true {rep['gap_to_true']:.4f})")
    elif exp == "kernelcheck":
        width = max(len(c["name"]) for c in summary["checks"]) + 2
        for check in summary["checks"]:
            status = "PASS" if check["passed"] else "FAIL"
            print(f"{check['name']:<{width}} {status}  {check['detail']}")
        print("all checks passed" if summary["all_passed"] else "SOME CHECKS FAILED")


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors; map the latter to 1.
        return 0 if exc.code in (0, None) else 1

    try:
        config = _assemble_config(args)
        if config.experiment == "probit" and not config.dataset:
            print("error: probit requires --dataset (CSV path)", file=sys.stderr)
            return 1
        summary = run_experiment(config)
    except (ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2

    _print_summary(config, summary)
    if config.experiment == "kernelcheck" and not summary["all_passed"]:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
