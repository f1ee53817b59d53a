"""Tobit Kalman filtering for interval-censored (saturated) measurements."""

from .errors import *  # noqa: F401,F403
from .filters import (
    CensoredObservation,
    FilterStepReport,
    GaussianBelief,
    StateSpaceModel,
    TobitFilter,
    atkf_step,
    kf_step,
    predict,
    run_filter,
    savitzky_golay,
    tkf_baseline_update,
    tkfc_update,
)
from .moments import (
    CensorBounds,
    CensoredMoments,
    MvnSpec,
    censored_covariance,
    censored_mean,
    censored_moments,
    mc_censored_oracle,
)

__version__ = "0.1.0"
