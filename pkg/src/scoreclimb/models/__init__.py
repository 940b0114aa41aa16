from .static import (
    ConjugateGaussianTarget,
    ProbitData,
    ProbitTarget,
    SkewNormalTarget,
    StaticTarget,
    conjugate_gaussian_target,
    probit_log_joint,
    probit_predict,
    skew_normal_target,
)
from .ssm import (
    GaussianSsm,
    LinearGaussianSsm,
    StochasticVolatilitySsm,
    SvParams,
    lgssm_simulate,
    lgssm_spec,
    sv_simulate,
    sv_spec,
)

__all__ = [
    "ConjugateGaussianTarget",
    "GaussianSsm",
    "LinearGaussianSsm",
    "ProbitData",
    "ProbitTarget",
    "SkewNormalTarget",
    "StaticTarget",
    "StochasticVolatilitySsm",
    "SvParams",
    "conjugate_gaussian_target",
    "lgssm_simulate",
    "lgssm_spec",
    "probit_log_joint",
    "probit_predict",
    "skew_normal_target",
    "sv_simulate",
    "sv_spec",
]
