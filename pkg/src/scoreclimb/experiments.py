"""Experiment orchestration: configs, dataset ingestion, replication fan-out.

Every experiment is a pure function of its config: replication r always
draws from the stream (seed, r), split shuffles from a dedicated stream
family, and summaries carry no timestamps, so reruns are byte-identical
and worker counts cannot change results.  Output contract per run: one
trace CSV per replication (header row, fixed column order) plus a single
``summary.json`` with stable key order.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .climb import msc_ml_run, msc_run, parse_schedule, smc_marginal_likelihood, \
    snis_sgd_run, subset_avg_run
from .diagnostics import run_check_suite
from .families import DiagGaussianParams, TwistingParams
from .gradients import perturbed_posterior_oracle
from .models.static import ProbitData, ProbitTarget, SkewNormalTarget, \
    conjugate_gaussian_target, probit_predict
from .models.ssm import SvParams, sv_simulate, sv_spec
from .numkit import RngStream

logger = logging.getLogger(__name__)

_VARIANCE_FLOOR = 1e-12

# Streams: replication r uses (seed, r); everything else gets a reserved band.
_SPLIT_STREAM_BASE = 1_000_000
_DATA_STREAM = 9_000
_INIT_STREAM = 9_001
_EVAL_STREAM_BASE = 9_100


class DatasetError(ValueError):
    """Malformed dataset file; carries the offending 1-based line when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "skewnormal": dict(estimator="msc-cis", samples=2, iters=100_000,
                       schedule="rm:a=0.5,b=10,gamma=0.7", replications=10),
    "probit": dict(estimator="msc-cis", samples=10, iters=2_000,
                   schedule="adam:lr=0.02", replications=100),
    "stochvol": dict(estimator="msc-csmc", samples=10, iters=4_000,
                     schedule="adam:lr=0.01", replications=1),
    "subsetavg": dict(estimator="subset-avg", samples=10, iters=20_000,
                      schedule="adam:lr=0.01", replications=1),
    "kernelcheck": dict(estimator="msc-cis", samples=2, iters=50_000,
                        schedule="rm", replications=1),
}

_INT_FIELDS = {"samples", "iters", "replications", "seed", "subset_size", "workers"}
_OPTIONAL_STR_FIELDS = {"dataset", "out"}


@dataclass
class ExperimentConfig:
    """Complete description of one experiment run; round-trips through files."""

    experiment: str
    estimator: str = "msc-cis"
    samples: int = 2
    schedule: str = "rm:a=0.5,b=10,gamma=0.7"
    iters: int = 10_000
    replications: int = 1
    seed: int = 0
    dataset: str | None = None
    out: str | None = None
    subset_size: int = 2
    target: str = "conjugate"
    workers: int = 1

    @classmethod
    def for_experiment(cls, experiment: str, **overrides) -> "ExperimentConfig":
        if experiment not in EXPERIMENT_DEFAULTS:
            raise ValueError(f"unknown experiment {experiment!r}")
        values = dict(EXPERIMENT_DEFAULTS[experiment])
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(experiment=experiment, **values)

    def as_dict(self) -> dict:
        return asdict(self)

    def to_file(self, path) -> None:
        lines = [f"{f.name} = {'' if getattr(self, f.name) is None else getattr(self, f.name)}"
                 for f in fields(self)]
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        values = parse_config_file(path)
        return cls(**values)

    def updated_from_file(self, path) -> "ExperimentConfig":
        """New config with any keys present in the file replacing current values."""
        values = self.as_dict()
        values.update(parse_config_file(path))
        return ExperimentConfig(**values)


def parse_config_file(path) -> dict:
    """Read ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    known = {f.name for f in fields(ExperimentConfig)}
    values: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep or not key:
            raise DatasetError(f"config line {lineno}: expected 'key = value'", line=lineno)
        if key not in known:
            raise DatasetError(f"config line {lineno}: unknown key {key!r}", line=lineno)
        if key in _OPTIONAL_STR_FIELDS:
            values[key] = value or None
        elif key in _INT_FIELDS:
            try:
                values[key] = int(value)
            except ValueError as err:
                raise DatasetError(f"config line {lineno}: {key} needs an integer",
                                   line=lineno) from err
        else:
            values[key] = value
    return values


# -- dataset handling --------------------------------------------------------


def standardize_columns(X: np.ndarray, means: np.ndarray, sds: np.ndarray) -> np.ndarray:
    return (X - means) / np.maximum(sds, _VARIANCE_FLOOR)


def build_probit_data(features: np.ndarray, labels: np.ndarray) -> ProbitData:
    """Standardize features (constant columns map to zeros) and append an intercept."""
    features = np.atleast_2d(np.asarray(features, dtype=float))
    means = features.mean(axis=0)
    sds = features.std(axis=0)
    if np.any(sds < _VARIANCE_FLOOR):
        warnings.warn("constant feature column standardized to zeros", stacklevel=2)
    standardized = standardize_columns(features, means, sds)
    X = np.hstack([standardized, np.ones((features.shape[0], 1))])
    return ProbitData(X=X, y=labels)


def load_csv_dataset(path) -> ProbitData:
    """Read a headerless numeric CSV whose final column is a 0/1 label."""
    rows: list[list[float]] = []
    labels: list[int] = []
    width: int | None = None
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            try:
                values = [float(v) for v in record]
            except ValueError as err:
                raise DatasetError(f"line {lineno}: non-numeric field", line=lineno) from err
            if width is None:
                width = len(values)
                if width < 2:
                    raise DatasetError(f"line {lineno}: need at least one feature and a label",
                                       line=lineno)
            elif len(values) != width:
                raise DatasetError(f"line {lineno}: expected {width} fields, got {len(values)}",
                                   line=lineno)
            label = values[-1]
            if label not in (0.0, 1.0):
                raise DatasetError(f"line {lineno}: label must be 0 or 1, got {label}",
                                   line=lineno)
            rows.append(values[:-1])
            labels.append(int(label))
    if not rows:
        raise DatasetError("dataset is empty")
    data = build_probit_data(np.array(rows), np.array(labels))
    logger.info("loaded %s: n = %d rows, d = %d (intercept included)", path, data.n, data.d)
    return data


@dataclass(frozen=True)
class SplitSpec:
    """Deterministic train/test split: a pure function of (master_seed, split_index)."""

    train_fraction: float = 0.9
    split_index: int = 0
    master_seed: int = 0


def split_train_test(data: ProbitData, spec: SplitSpec) -> tuple[ProbitData, ProbitData]:
    """Shuffle with a dedicated stream, split, re-standardize on train statistics.

    Expects loader-produced data (intercept last); the non-intercept
    columns are re-standardized with moments computed on the training
    rows only, which composes exactly with the loader's full-data pass.
    """
    if data.n < 10:
        raise ValueError(f"need at least 10 rows to split, got {data.n}")
    gen = RngStream(spec.master_seed, _SPLIT_STREAM_BASE + spec.split_index).generator()
    perm = gen.permutation(data.n)
    n_train = int(math.ceil(spec.train_fraction * data.n))
    train_idx, test_idx = perm[:n_train], perm[n_train:]

    feats = data.X[:, :-1]
    means = feats[train_idx].mean(axis=0)
    sds = feats[train_idx].std(axis=0)
    scaled = standardize_columns(feats, means, sds)
    X = np.hstack([scaled, data.X[:, -1:]])
    train = ProbitData(X=X[train_idx], y=data.y[train_idx])
    test = ProbitData(X=X[test_idx], y=data.y[test_idx])
    return train, test


# -- replication workers ------------------------------------------------------


def _trace_thin(iters: int) -> int:
    # 1-in-10 thinning on long runs keeps trace files bounded.
    return 1 if iters <= 10_000 else 10


def _static_trace_rows(records) -> list[list[float]]:
    return [[r.iteration, *r.lam.tolist(), r.grad_norm] for r in records]


def _skewnormal_replication(cfg: dict, rep: int) -> dict:
    target = SkewNormalTarget(0.5, 2.0, 5.0)
    lam0 = DiagGaussianParams(mu=[0.0], log_sigma=[0.0])
    schedule = parse_schedule(cfg["schedule"])
    rng = RngStream(cfg["seed"], rep)
    thin = _trace_thin(cfg["iters"])
    if cfg["estimator"] == "msc-cis":
        result = msc_run(target, lam0, schedule, n_iters=cfg["iters"], rng=rng,
                         n_samples=cfg["samples"], trace_every=thin)
    elif cfg["estimator"] == "snis":
        result = snis_sgd_run(target, lam0, schedule, n_iters=cfg["iters"], rng=rng,
                              n_samples=cfg["samples"], trace_every=thin)
    else:
        raise ValueError(f"estimator {cfg['estimator']!r} not valid for skewnormal")
    mu = float(result.params_avg.mu[0])
    sigma = float(np.exp(result.params_avg.log_sigma[0]))
    return {"rep": rep, "mu": mu, "sigma": sigma,
            "trace": _static_trace_rows(result.records)}


def _probit_replication(cfg: dict, split_index: int, X: np.ndarray, y: np.ndarray) -> dict:
    data = ProbitData(X=X, y=y)
    train, test = split_train_test(
        data, SplitSpec(split_index=split_index, master_seed=cfg["seed"]))
    target = ProbitTarget(train)
    lam0 = DiagGaussianParams(mu=np.zeros(train.d), log_sigma=np.zeros(train.d))
    schedule = parse_schedule(cfg["schedule"])
    rng = RngStream(cfg["seed"], split_index)
    thin = _trace_thin(cfg["iters"])
    if cfg["estimator"] == "msc-cis":
        result = msc_run(target, lam0, schedule, n_iters=cfg["iters"], rng=rng,
                         n_samples=cfg["samples"], trace_every=thin)
    elif cfg["estimator"] == "msc-cis-prior":
        result = msc_run(target, lam0, schedule, n_iters=cfg["iters"], rng=rng,
                         n_samples=cfg["samples"], proposal=lam0, trace_every=thin)
    elif cfg["estimator"] == "snis":
        result = snis_sgd_run(target, lam0, schedule, n_iters=cfg["iters"], rng=rng,
                              n_samples=cfg["samples"], trace_every=thin)
    else:
        raise ValueError(f"estimator {cfg['estimator']!r} not valid for probit")
    proba = np.atleast_1d(probit_predict(result.params_avg, test.X))
    predicted = (proba >= 0.5).astype(np.int64)
    error = float(np.mean(predicted != test.y))
    return {"rep": split_index, "test_error": error, "n_test": int(test.n),
            "trace": _static_trace_rows(result.records)}


def _fan_out(worker, cfg: dict, n_reps: int, workers: int, extra_args=()) -> list[dict]:
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(worker, cfg, rep, *extra_args) for rep in range(n_reps)]
            results = [f.result() for f in futures]
    else:
        results = [worker(cfg, rep, *extra_args) for rep in range(n_reps)]
    return sorted(results, key=lambda r: r["rep"])


# -- experiment drivers -------------------------------------------------------


def run_skewnormal(config: ExperimentConfig) -> tuple[dict, dict[int, list]]:
    cfg = config.as_dict()
    results = _fan_out(_skewnormal_replication, cfg, config.replications, config.workers)
    mu_star, sigma_star = SkewNormalTarget(0.5, 2.0, 5.0).moment_matched()
    mus = np.array([r["mu"] for r in results])
    sigmas = np.array([r["sigma"] for r in results])
    summary = {
        "experiment": "skewnormal",
        "config": cfg,
        "oracle": {"mu": mu_star, "sigma": sigma_star},
        "replications": [
            {"rep": r["rep"], "mu": r["mu"], "sigma": r["sigma"],
             "mu_gap": abs(r["mu"] - mu_star), "sigma_gap": abs(r["sigma"] - sigma_star)}
            for r in results
        ],
        "mu_mean": float(np.mean(mus)),
        "mu_std": float(np.std(mus, ddof=1)) if len(mus) > 1 else 0.0,
        "sigma_mean": float(np.mean(sigmas)),
        "sigma_std": float(np.std(sigmas, ddof=1)) if len(sigmas) > 1 else 0.0,
    }
    traces = {r["rep"]: r["trace"] for r in results}
    return summary, traces


def run_probit(config: ExperimentConfig) -> tuple[dict, dict[int, list]]:
    if not config.dataset:
        raise ValueError("probit requires --dataset")
    data = load_csv_dataset(config.dataset)
    cfg = config.as_dict()
    results = _fan_out(_probit_replication, cfg, config.replications, config.workers,
                       extra_args=(data.X, data.y))
    errors = np.array([r["test_error"] for r in results])
    summary = {
        "experiment": "probit",
        "config": cfg,
        "n_rows": int(data.n),
        "n_features": int(data.d),
        "splits": [{"rep": r["rep"], "test_error": r["test_error"], "n_test": r["n_test"]}
                   for r in results],
        "test_error_mean": float(np.mean(errors)),
        "test_error_std": float(np.std(errors, ddof=1)) if len(errors) > 1 else 0.0,
    }
    traces = {r["rep"]: r["trace"] for r in results}
    return summary, traces


# Simulation ground truth for the volatility experiment; documented, not fitted.
SV_TRUE_PARAMS = SvParams(sigma2=0.1, phi=0.9, mu=0.0, beta=0.7)
SV_DISPERSED_START = SvParams(sigma2=0.5, phi=0.5, mu=1.0, beta=0.2)
SV_SERIES_LENGTH = 200
SV_EVAL_SAMPLES = 10_000
SV_EVAL_REPEATS = 10


def _sv_params_dict(p: SvParams) -> dict:
    return {"sigma2": p.sigma2, "phi": p.phi, "mu": p.mu, "beta": p.beta}


def _sv_evaluate(x: np.ndarray, theta_u: np.ndarray, twist: TwistingParams, seed: int,
                 stream_offset: int) -> dict:
    ssm = sv_spec(SvParams.from_unconstrained(theta_u), x)
    values = [
        smc_marginal_likelihood(ssm, twist, SV_EVAL_SAMPLES,
                                RngStream(seed, _EVAL_STREAM_BASE + stream_offset + i))
        for i in range(SV_EVAL_REPEATS)
    ]
    values = np.array(values)
    return {"mean": float(values.mean()),
            "se": float(values.std(ddof=1) / np.sqrt(len(values))),
            "values": values.tolist()}


def run_stochvol(config: ExperimentConfig) -> tuple[dict, dict[int, list]]:
    if config.estimator != "msc-csmc":
        raise ValueError("stochvol supports only the msc-csmc estimator")
    cfg = config.as_dict()
    _, x = sv_simulate(SV_TRUE_PARAMS, SV_SERIES_LENGTH, RngStream(config.seed, _DATA_STREAM))

    def make_ssm(theta_u):
        return sv_spec(SvParams.from_unconstrained(theta_u), x)

    theta0 = SV_DISPERSED_START.to_unconstrained()
    thin = _trace_thin(config.iters)
    reps = []
    traces: dict[int, list] = {}
    for rep in range(config.replications):
        twist0 = TwistingParams.zeros(SV_SERIES_LENGTH)
        result = msc_ml_run(make_ssm, theta0, twist0,
                            parse_schedule(config.schedule), parse_schedule(config.schedule),
                            n_iters=config.iters, rng=RngStream(config.seed, rep),
                            n_samples=config.samples, trace_every=thin)
        offset = 100 * rep
        eval_start = _sv_evaluate(x, theta0, result.twist_avg, config.seed, offset)
        eval_fit = _sv_evaluate(x, result.theta_avg, result.twist_avg, config.seed, offset + 30)
        eval_true = _sv_evaluate(x, SV_TRUE_PARAMS.to_unconstrained(), result.twist_avg,
                                 config.seed, offset + 60)
        reps.append({
            "rep": rep,
            "theta_hat": _sv_params_dict(SvParams.from_unconstrained(result.theta_avg)),
            "log_marginal_start": eval_start,
            "log_marginal_fit": eval_fit,
            "log_marginal_true": eval_true,
            "improvement_nats": eval_fit["mean"] - eval_start["mean"],
        })
        traces[rep] = [[r.iteration, *r.theta.tolist(), r.grad_norm] for r in result.records]
    summary = {
        "experiment": "stochvol",
        "config": cfg,
        "theta_true": _sv_params_dict(SV_TRUE_PARAMS),
        "theta_start": _sv_params_dict(SV_DISPERSED_START),
        "series_length": SV_SERIES_LENGTH,
        "eval_samples": SV_EVAL_SAMPLES,
        "replications": reps,
    }
    return summary, traces


def run_subsetavg(config: ExperimentConfig) -> tuple[dict, dict[int, list]]:
    cfg = config.as_dict()
    gen = RngStream(config.seed, _DATA_STREAM).generator()
    z_true = gen.standard_normal()
    data = z_true + gen.standard_normal(10)
    target = conjugate_gaussian_target(1.0, 1.0, data)

    p_mean, p_var = target.posterior_mean_var()
    pt_mean, pt_var = perturbed_posterior_oracle(target, config.subset_size)
    thin = _trace_thin(config.iters)
    reps = []
    traces: dict[int, list] = {}
    lam0 = DiagGaussianParams(mu=[0.0], log_sigma=[0.0])
    for rep in range(config.replications):
        result = subset_avg_run(target, lam0, parse_schedule(config.schedule),
                                n_iters=config.iters, rng=RngStream(config.seed, rep),
                                n_samples=config.samples, m=config.subset_size,
                                trace_every=thin)
        mu = float(result.params_avg.mu[0])
        sigma = float(np.exp(result.params_avg.log_sigma[0]))
        reps.append({
            "rep": rep, "mu": mu, "sigma": sigma,
            "gap_to_perturbed": abs(mu - pt_mean),
            "gap_to_true": abs(mu - p_mean),
        })
        traces[rep] = _static_trace_rows(result.records)
    summary = {
        "experiment": "subsetavg",
        "config": cfg,
        "data": data.tolist(),
        "true_posterior": {"mean": p_mean, "sd": float(np.sqrt(p_var))},
        "perturbed_posterior": {"mean": pt_mean, "sd": float(np.sqrt(pt_var))},
        "replications": reps,
    }
    return summary, traces


def run_kernelcheck(config: ExperimentConfig) -> tuple[dict, dict[int, list]]:
    checks = run_check_suite(config.target, config.iters, config.seed)
    summary = {
        "experiment": "kernelcheck",
        "config": config.as_dict(),
        "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in checks],
        "all_passed": all(c.passed for c in checks),
    }
    return summary, {}


_DRIVERS = {
    "skewnormal": run_skewnormal,
    "probit": run_probit,
    "stochvol": run_stochvol,
    "subsetavg": run_subsetavg,
    "kernelcheck": run_kernelcheck,
}


def _trace_header(experiment: str, n_params: int) -> list[str]:
    if experiment == "stochvol":
        return ["iteration", "log_sigma2", "atanh_phi", "mu", "log_beta", "grad_norm"]
    d = (n_params - 2) // 2  # columns: iteration, mu_*, log_sigma_*, grad_norm
    return (["iteration"] + [f"mu_{i}" for i in range(d)]
            + [f"log_sigma_{i}" for i in range(d)] + ["grad_norm"])


def write_trace_csv(path, header: list[str], rows: list[list[float]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def read_trace_csv(path) -> tuple[list[str], list[list[float]]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    return header, rows


def run_experiment(config: ExperimentConfig) -> dict:
    """Execute a configured experiment, writing traces and summary when ``out`` is set."""
    if config.experiment not in _DRIVERS:
        raise ValueError(f"unknown experiment {config.experiment!r}")
    summary, traces = _DRIVERS[config.experiment](config)

    if config.out:
        out = Path(config.out)
        out.mkdir(parents=True, exist_ok=True)
        for rep, rows in sorted(traces.items()):
            if not rows:
                continue
            header = _trace_header(config.experiment, len(rows[0]))
            write_trace_csv(out / f"trace_rep{rep:03d}.csv", header, rows)
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, sort_keys=True, indent=2)
            fh.write("\n")
    return summary
