"""Inclusive-KL variational inference by score climbing on conditional MCMC kernels."""

from .climb import (
    Adam,
    MscMlResult,
    MscResult,
    NonFiniteGradientError,
    RobbinsMonro,
    RunRecord,
    Schedule,
    msc_ml_run,
    msc_run,
    parse_schedule,
    schedule_step,
    smc_marginal_likelihood,
    snis_sgd_run,
    subset_avg_run,
)
from .families import (
    DiagGaussianParams,
    TwistingParams,
    diag_gaussian_log_pdf,
    diag_gaussian_sample,
    diag_gaussian_score,
    twist_log_potential,
    twisted_gaussian_compose,
    twisted_score,
)
from .gradients import (
    GradEstimate,
    fisher_gradient,
    msc_score_gradient,
    perturbed_posterior_oracle,
    rao_blackwell_gradient,
    snis_gradient,
    subset_avg_gradient,
)
from .kernels import ParticleSystem, Trajectory, cis_step, csmc_step, multinomial_resample, \
    smc_sweep
from .numkit import (
    DegenerateWeightsError,
    RngStream,
    categorical_sample,
    log_sum_exp,
    normal_log_pdf,
    normalize_log_weights,
    skew_normal_log_pdf,
    std_normal_log_cdf,
)

from . import models

__version__ = "0.1.0"
