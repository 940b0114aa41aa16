"""Scikit-learn style front ends for the optimization loops.

The two approximator classes fit a diagonal Gaussian to any static
target; the classifier is a drop-in binary estimator that fits Bayesian
probit regression by score climbing and predicts through the closed-form
posterior predictive.  All of them follow the sklearn parameter
conventions, so ``get_params``/``set_params``, cloning, and model
selection utilities work unchanged.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .climb import msc_run, parse_schedule, snis_sgd_run
from .families import DiagGaussianParams
from .models.static import ProbitData, ProbitTarget, StaticTarget, probit_predict
from .numkit import RngStream


def _initial_params(target: StaticTarget, init) -> DiagGaussianParams:
    if init is not None:
        return init
    return DiagGaussianParams(mu=np.zeros(target.dim), log_sigma=np.zeros(target.dim))


class MarkovianScoreClimbing(BaseEstimator):
    """Fit a diagonal Gaussian to a static target with the conditional IS kernel.

    Parameters
    ----------
    n_samples : particles per kernel sweep (the pinned one included).
    n_iters : optimization iterations; the chain is never re-initialized.
    schedule : step-size spec, e.g. ``"rm:a=0.5,b=10,gamma=0.7"`` or
        ``"adam:lr=0.01"``.
    proposal : ``"adaptive"`` tracks the current approximation; a
        DiagGaussianParams pins the kernel proposal (e.g. the prior).
    score_estimator : ``"retained"`` uses the retained sample's score,
        ``"rao-blackwell"`` the weight-averaged score over the sweep.
    tail_fraction : trailing fraction of iterates averaged into the
        reported parameters.
    random_state : seed of the run's random stream.
    """

    def __init__(self, n_samples: int = 2, n_iters: int = 10_000,
                 schedule: str = "rm:a=0.5,b=10,gamma=0.7",
                 proposal="adaptive", score_estimator: str = "retained",
                 tail_fraction: float = 0.5, trace_every: int = 0,
                 random_state: int = 0):
        self.n_samples = n_samples
        self.n_iters = n_iters
        self.schedule = schedule
        self.proposal = proposal
        self.score_estimator = score_estimator
        self.tail_fraction = tail_fraction
        self.trace_every = trace_every
        self.random_state = random_state

    def fit(self, target: StaticTarget, init: DiagGaussianParams | None = None):
        proposal = None if (isinstance(self.proposal, str) and self.proposal == "adaptive") \
            else self.proposal
        result = msc_run(
            target, _initial_params(target, init), parse_schedule(self.schedule),
            n_iters=self.n_iters, rng=RngStream(self.random_state),
            n_samples=self.n_samples, proposal=proposal,
            estimator=self.score_estimator, tail_fraction=self.tail_fraction,
            trace_every=self.trace_every)
        self.posterior_ = result.params_avg
        self.posterior_last_ = result.params
        self.records_ = result.records
        return self


class SelfNormalizedClimbing(BaseEstimator):
    """Same surface as MarkovianScoreClimbing but driven by the SNIS gradient.

    Fresh proposal draws every iteration; consistent only as n_samples
    grows, and systematically biased for small n_samples.
    """

    def __init__(self, n_samples: int = 2, n_iters: int = 10_000,
                 schedule: str = "rm:a=0.5,b=10,gamma=0.7", tail_fraction: float = 0.5,
                 trace_every: int = 0, random_state: int = 0):
        self.n_samples = n_samples
        self.n_iters = n_iters
        self.schedule = schedule
        self.tail_fraction = tail_fraction
        self.trace_every = trace_every
        self.random_state = random_state

    def fit(self, target: StaticTarget, init: DiagGaussianParams | None = None):
        result = snis_sgd_run(
            target, _initial_params(target, init), parse_schedule(self.schedule),
            n_iters=self.n_iters, rng=RngStream(self.random_state),
            n_samples=self.n_samples, tail_fraction=self.tail_fraction,
            trace_every=self.trace_every)
        self.posterior_ = result.params_avg
        self.posterior_last_ = result.params
        self.records_ = result.records
        return self


class ProbitClassifier(ClassifierMixin, BaseEstimator):
    """Bayesian probit regression fit by score climbing.

    A standard-normal prior over the weights (intercept included) is
    approximated by a diagonal Gaussian; predictions integrate the probit
    link against that Gaussian in closed form.  ``method`` selects the
    conditional-kernel gradient or the self-normalized IS baseline.
    Features are used as given; scale them upstream if needed.
    """

    def __init__(self, method: str = "msc-cis", n_samples: int = 10, n_iters: int = 2_000,
                 schedule: str = "adam:lr=0.02", proposal: str = "adaptive",
                 score_estimator: str = "retained", tail_fraction: float = 0.5,
                 add_intercept: bool = True, random_state: int = 0):
        self.method = method
        self.n_samples = n_samples
        self.n_iters = n_iters
        self.schedule = schedule
        self.proposal = proposal
        self.score_estimator = score_estimator
        self.tail_fraction = tail_fraction
        self.add_intercept = add_intercept
        self.random_state = random_state

    def _design(self, X: np.ndarray) -> np.ndarray:
        if self.add_intercept:
            return np.hstack([X, np.ones((X.shape[0], 1))])
        return X

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if self.classes_.shape[0] != 2:
            raise ValueError("probit classification needs exactly two classes")
        self.n_features_in_ = X.shape[1]
        labels = (y == self.classes_[1]).astype(np.int64)
        data = ProbitData(X=self._design(X), y=labels)
        target = ProbitTarget(data)
        lam0 = DiagGaussianParams(mu=np.zeros(data.d), log_sigma=np.zeros(data.d))
        rng = RngStream(self.random_state)
        schedule = parse_schedule(self.schedule)

        if self.method == "msc-cis":
            proposal = None if self.proposal == "adaptive" else lam0
            result = msc_run(target, lam0, schedule, n_iters=self.n_iters, rng=rng,
                             n_samples=self.n_samples, proposal=proposal,
                             estimator=self.score_estimator,
                             tail_fraction=self.tail_fraction)
        elif self.method == "snis":
            result = snis_sgd_run(target, lam0, schedule, n_iters=self.n_iters, rng=rng,
                                  n_samples=self.n_samples,
                                  tail_fraction=self.tail_fraction)
        else:
            raise ValueError(f"unknown method {self.method!r}")
        self.posterior_ = result.params_avg
        self.posterior_last_ = result.params
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        X = check_array(X)
        p1 = np.atleast_1d(probit_predict(self.posterior_, self._design(X)))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X) -> np.ndarray:
        # Ties at probability exactly 0.5 go to the positive class.
        p1 = self.predict_proba(X)[:, 1]
        return self.classes_[(p1 >= 0.5).astype(int)]
