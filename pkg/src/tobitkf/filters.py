"""Kalman-type filters for censored measurements and a Savitzky-Golay baseline.

All filters share the same two-stage recursion: :func:`predict` followed by an
update that returns a :class:`FilterStepReport`.  The updates differ only in how
the censored measurement statistics are formed:

* ``kf``    textbook Kalman update, ignores censoring.
* ``tkf``   baseline Tobit KF: limits standardized with the measurement
            noise variance ``r_ii``; measurement covariance
            ``D_un H P H' D_un + diag(truncated variances)``.
* ``tkfc``  corrected Tobit KF: limits standardized with the innovation
            variance ``s_ii``; exact censored mean and covariance.
* ``atkf``  ``tkfc`` with limits re-centered on the previous estimate at every
            step, ``H x_prev -+ c``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
from scipy.signal import savgol_filter

from .errors import InvalidWindow, SingularCensoredCovariance, SingularInnovation
from .gauss import std_pdf
from .moments import (
    CensorBounds,
    MvnSpec,
    RegionProbs,
    censored_moments,
    region_probs_from_limits,
    standardized_limits,
    truncated_normal_variance,
    _times_finite,
)

METHODS = ("kf", "tkf", "tkfc", "atkf")

_JITTER_START = 1e-12
_JITTER_CAP = 1e-6
_MAX_COND = 1e12


@dataclass(frozen=True)
class StateSpaceModel:
    """Linear-Gaussian state-space model ``x' = A x + w``, ``y* = H x + v``."""

    A: np.ndarray
    H: np.ndarray
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        A, H, Q, R = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (self.A, self.H, self.Q, self.R))
        n, m = A.shape[0], H.shape[0]
        if A.shape != (n, n) or H.shape != (m, n) or Q.shape != (n, n) or R.shape != (m, m):
            raise ValueError(
                f"inconsistent shapes A{A.shape} H{H.shape} Q{Q.shape} R{R.shape}"
            )
        for name, M in (("Q", Q), ("R", R)):
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-10:
                raise ValueError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(M)[0] < -1e-10:
                raise ValueError(f"{name} is not positive semidefinite")
        for name, M in zip("AHQR", (A, H, Q, R)):
            object.__setattr__(self, name, M)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.H.shape[0]

    def with_q(self, Q) -> "StateSpaceModel":
        return StateSpaceModel(self.A, self.H, Q, self.R)


@dataclass(frozen=True)
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=float)))


class Flag(IntEnum):
    BELOW = -1
    INSIDE = 0
    ABOVE = 1


@dataclass(frozen=True)
class CensoredObservation:
    """A clamped measurement and, per component, which side it was clamped to."""

    y: np.ndarray
    flags: tuple[Flag, ...]

    @classmethod
    def from_latent(cls, y_raw, bounds: CensorBounds) -> "CensoredObservation":
        y_raw = np.atleast_1d(np.asarray(y_raw, dtype=float))
        flags = tuple(
            Flag.BELOW if v <= lo else Flag.ABOVE if v >= hi else Flag.INSIDE
            for v, lo, hi in zip(y_raw, bounds.lower, bounds.upper)
        )
        return cls(bounds.clamp(y_raw), flags)

    @classmethod
    def from_censored(cls, y, bounds: CensorBounds) -> "CensoredObservation":
        """Flag an already-clamped measurement by comparing it with the limits."""
        return cls.from_latent(y, bounds)


@dataclass(frozen=True)
class FilterStepReport:
    prior: GaussianBelief
    posterior: GaussianBelief
    gain: np.ndarray
    predicted_meas_mean: np.ndarray
    predicted_meas_cov: np.ndarray
    region_probs: RegionProbs
    # Latent measurement prediction m_k = H x_prior and S_k = H P H' + R.
    latent_mean: np.ndarray
    latent_cov: np.ndarray
    observation: CensoredObservation | None = None
    bounds: CensorBounds | None = None
    regularized: bool = False


def _symmetrize(P: np.ndarray) -> np.ndarray:
    return 0.5 * (P + P.T)


def _psd_floor(P: np.ndarray) -> np.ndarray:
    P = _symmetrize(P)
    w, v = np.linalg.eigh(P)
    if w[0] >= 0.0:
        return P
    return _symmetrize((v * np.clip(w, 0.0, None)) @ v.T)


def predict(model: StateSpaceModel, belief: GaussianBelief) -> GaussianBelief:
    """Propagate the belief one step through the transition model."""
    A = model.A
    return GaussianBelief(A @ belief.mean, _symmetrize(A @ belief.cov @ A.T + model.Q))


def _solve_gain(cross: np.ndarray, meas_cov: np.ndarray) -> tuple[np.ndarray, bool]:
    """``cross @ inv(meas_cov)`` via Cholesky, escalating diagonal jitter if needed.

    Jitter starts at 1e-12 * trace and grows tenfold up to 1e-6 * trace.  An
    attempt is accepted when the factorization succeeds and the (squared)
    Cholesky diagonal spans less than 1e12, a cheap proxy for the condition number.
    """
    m = meas_cov.shape[0]
    scale = float(np.trace(meas_cov))
    if not scale > 0.0:
        raise SingularCensoredCovariance("censored measurement covariance has zero trace")
    jitter = 0.0
    while True:
        M = meas_cov + jitter * scale * np.eye(m) if jitter else meas_cov
        try:
            L = np.linalg.cholesky(M)
            d = np.diag(L) ** 2
            if d.min() * _MAX_COND > d.max():
                return sla.cho_solve((L, True), cross.T, check_finite=False).T, jitter > 0.0
        except np.linalg.LinAlgError:
            pass
        jitter = _JITTER_START if jitter == 0.0 else jitter * 10.0
        if jitter > _JITTER_CAP * (1 + 1e-9):
            raise SingularCensoredCovariance(
                "censored measurement covariance is singular even with jitter"
            )


def _finish(model, prior, obs, bounds, y, mean_y, R1, R2, probs, m_k, S_k) -> FilterStepReport:
    K, reg = _solve_gain(R1, R2)
    x = prior.mean + K @ (y - mean_y)
    P = _psd_floor(prior.cov - K @ R1.T)
    return FilterStepReport(
        prior=prior,
        posterior=GaussianBelief(x, P),
        gain=K,
        predicted_meas_mean=mean_y,
        predicted_meas_cov=R2,
        region_probs=probs,
        latent_mean=m_k,
        latent_cov=S_k,
        observation=obs,
        bounds=bounds,
        regularized=reg,
    )


def _latent(model: StateSpaceModel, prior: GaussianBelief):
    H = model.H
    HP = H @ prior.cov
    return H @ prior.mean, _symmetrize(HP @ H.T), HP


def kf_update(model: StateSpaceModel, prior: GaussianBelief, y) -> FilterStepReport:
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m_k, HPH, HP = _latent(model, prior)
    S = HPH + model.R
    if np.linalg.cond(S) > _MAX_COND:
        raise SingularInnovation(f"innovation covariance condition number {np.linalg.cond(S):.3g}")
    K = np.linalg.solve(S, HP).T
    x = prior.mean + K @ (y - m_k)
    P = _psd_floor(prior.cov - K @ HP)
    ones = np.ones(model.m)
    return FilterStepReport(
        prior=prior,
        posterior=GaussianBelief(x, P),
        gain=K,
        predicted_meas_mean=m_k,
        predicted_meas_cov=S,
        region_probs=RegionProbs(0 * ones, ones, 0 * ones),
        latent_mean=m_k,
        latent_cov=S,
    )


def kf_step(model: StateSpaceModel, belief: GaussianBelief, y) -> FilterStepReport:
    """Standard Kalman predict + update."""
    return kf_update(model, predict(model, belief), y)


def tkfc_update(
    model: StateSpaceModel,
    prior: GaussianBelief,
    obs: CensoredObservation,
    bounds: CensorBounds,
) -> FilterStepReport:
    """Corrected Tobit update: exact censored moments of ``N(H x, H P H' + R)``."""
    m_k, HPH, _ = _latent(model, prior)
    S = HPH + model.R
    mom = censored_moments(MvnSpec(m_k, S), bounds)
    probs = mom.region_probs
    R1 = prior.cov @ model.H.T * probs.inside
    return _finish(model, prior, obs, bounds, obs.y, mom.mean, R1, mom.cov, probs, m_k, S)


def tkf_baseline_update(
    model: StateSpaceModel,
    prior: GaussianBelief,
    obs: CensoredObservation,
    bounds: CensorBounds,
) -> FilterStepReport:
    """Tobit update with noise-standardized limits and the approximate covariance."""
    m_k, HPH, _ = _latent(model, prior)
    r = np.diag(model.R)
    sd_r = np.sqrt(r)
    alpha, beta = standardized_limits(m_k, sd_r, bounds)
    probs = region_probs_from_limits(alpha, beta)
    d_un = probs.inside
    mean_y = (
        m_k * d_un
        + sd_r * (std_pdf(alpha) - std_pdf(beta))
        + _times_finite(bounds.lower, probs.below)
        + _times_finite(bounds.upper, probs.above)
    )
    mean_y = np.clip(mean_y, bounds.lower, bounds.upper)
    R1 = prior.cov @ model.H.T * d_un
    # Off-diagonal noise covariance (absent in the usual diagonal-R setting) is
    # scaled like the H P H' part so the update reduces to the KF without censoring.
    R_off = model.R - np.diag(r)
    R2 = d_un[:, None] * (HPH + R_off) * d_un[None, :] + np.diag(r * truncated_normal_variance(alpha, beta))
    return _finish(model, prior, obs, bounds, obs.y, mean_y, R1, R2, probs, m_k, HPH + model.R)


def tkfc_step(model, belief, obs, bounds) -> FilterStepReport:
    return tkfc_update(model, predict(model, belief), obs, bounds)


def tkf_baseline_step(model, belief, obs, bounds) -> FilterStepReport:
    return tkf_baseline_update(model, predict(model, belief), obs, bounds)


def adaptive_bounds(model: StateSpaceModel, belief: GaussianBelief, c) -> CensorBounds:
    """Limits centered on the previous estimate: ``H x_prev -+ c``."""
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("adaptive half-widths c must be strictly positive")
    center = model.H @ belief.mean
    lower, upper = center - c, center + c
    # Rounding can leave fl(center + c) - center one ulp above c; step the
    # limits inward so the clamped innovation never exceeds c in floating point.
    while np.any(bad := upper - center > c):
        upper[bad] = np.nextafter(upper[bad], -np.inf)
    while np.any(bad := center - lower > c):
        lower[bad] = np.nextafter(lower[bad], np.inf)
    return CensorBounds(lower, upper)


def atkf_step(model: StateSpaceModel, belief: GaussianBelief, y_raw, c) -> FilterStepReport:
    """Adaptive Tobit step: clamp ``y_raw`` to ``H x_prev -+ c`` then run the corrected update."""
    bounds = adaptive_bounds(model, belief, c)
    obs = CensoredObservation.from_latent(y_raw, bounds)
    return tkfc_update(model, predict(model, belief), obs, bounds)


ModelSource = StateSpaceModel | Callable[[int], StateSpaceModel]


class TobitFilter:
    """Single-stream filter state.

    ``model`` may be a fixed :class:`StateSpaceModel` or a callable returning the
    model for step ``k`` (0-based). ``bounds`` are required for ``tkf`` and
    ``tkfc`` and ignored by ``kf``; ``c`` is required for ``atkf``.
    """

    def __init__(
        self,
        method: str,
        model: ModelSource,
        initial: GaussianBelief,
        *,
        bounds: CensorBounds | Sequence[CensorBounds] | None = None,
        c=None,
    ):
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        if method in ("tkf", "tkfc") and bounds is None:
            raise ValueError(f"method {method!r} needs censoring bounds")
        if method == "atkf" and c is None:
            raise ValueError("method 'atkf' needs the half-width vector c")
        self.method = method
        self._model = model
        self._bounds = bounds
        self.c = None if c is None else np.asarray(c, dtype=float)
        self.belief = initial
        self.k = 0

    def model_at(self, k: int) -> StateSpaceModel:
        return self._model(k) if callable(self._model) else self._model

    def bounds_at(self, k: int) -> CensorBounds:
        b = self._bounds
        return b if isinstance(b, CensorBounds) else b[k]

    def step(self, y) -> FilterStepReport:
        k = self.k
        model = self.model_at(k)
        if self.method == "kf":
            rep = kf_step(model, self.belief, y)
        elif self.method == "atkf":
            rep = atkf_step(model, self.belief, y, self.c)
        else:
            bounds = self.bounds_at(k)
            obs = CensoredObservation.from_latent(y, bounds)
            update = tkfc_update if self.method == "tkfc" else tkf_baseline_update
            rep = update(model, predict(model, self.belief), obs, bounds)
        self.belief = rep.posterior
        self.k += 1
        return rep


@dataclass(frozen=True)
class FilterRun:
    estimates: np.ndarray
    reports: list[FilterStepReport]


def run_filter(
    method: str,
    model: ModelSource,
    observations,
    initial: GaussianBelief,
    *,
    bounds=None,
    c=None,
    keep_reports: bool = True,
) -> FilterRun:
    """Filter a whole sequence; ``observations`` has one row per step."""
    obs = np.asarray(observations, dtype=float)
    if obs.ndim == 1:
        obs = obs[:, None]
    f = TobitFilter(method, model, initial, bounds=bounds, c=c)
    est = np.empty((obs.shape[0], initial.mean.size))
    reports = []
    for k, y in enumerate(obs):
        rep = f.step(y)
        est[k] = rep.posterior.mean
        if keep_reports:
            reports.append(rep)
    return FilterRun(est, reports)


def savitzky_golay(series, window: int = 9, order: int = 3) -> np.ndarray:
    """Least-squares polynomial smoothing of each column of ``series``.

    Edge samples are taken from the polynomial fitted to the first (last)
    ``window`` samples.
    """
    x = np.asarray(series, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    if window < 1 or window % 2 == 0:
        raise InvalidWindow(f"window must be a positive odd integer, got {window}")
    if not 0 <= order < window:
        raise InvalidWindow(f"order must satisfy 0 <= order < window, got {order}")
    if x.shape[0] < window:
        raise InvalidWindow(f"series has {x.shape[0]} frames, fewer than window {window}")
    out = savgol_filter(x, window, order, axis=0, mode="interp")
    return out[:, 0] if squeeze else out
