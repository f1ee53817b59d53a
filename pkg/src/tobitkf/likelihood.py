"""Censored-data log-likelihood and process-noise estimation.

The likelihood treats the components of each measurement as independent given
the filter's one-step prediction.  Every component contributes one of

* ``log Phi(alpha)``          if it sits at its lower limit,
* ``log(1 - Phi(beta))``      if it sits at its upper limit,
* ``log(phi(z) / sigma)``     otherwise, with ``z = (y - m) / sigma``.

``sigma`` is the innovation standard deviation ``sqrt(s_ii)`` for the corrected
variant and the noise standard deviation ``sqrt(r_ii)`` for the baseline one.
Each term is clamped below at ``LOG_FLOOR`` so the total stays finite.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_ndtr

from .errors import NoInteriorMaximum
from .filters import GaussianBelief, StateSpaceModel, run_filter
from .moments import CensorBounds

#: Roughly the log of the smallest normal double; individual terms never go lower.
LOG_FLOOR = -745.0

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


class Variant(str, enum.Enum):
    CORRECTED = "corrected"
    BASELINE = "baseline"


_FILTER_OF = {Variant.CORRECTED: "tkfc", Variant.BASELINE: "tkf"}


@dataclass(frozen=True)
class LikelihoodReport:
    loglik: float
    n_below: int
    n_inside: int
    n_above: int
    #: One entry per filtered step, each the sum over that step's components.
    per_step_terms: np.ndarray


def _channels(series) -> np.ndarray:
    y = np.asarray(getattr(series, "channels", series), dtype=float)
    return y[:, None] if y.ndim == 1 else y


def _bounds_list(bounds_per_step, n_steps: int, m: int) -> list[CensorBounds]:
    if bounds_per_step is None:
        return [CensorBounds.unbounded(m)] * n_steps
    if isinstance(bounds_per_step, CensorBounds):
        return [bounds_per_step] * n_steps
    blist = list(bounds_per_step)
    if len(blist) != n_steps:
        raise ValueError(f"got {len(blist)} bounds for {n_steps} steps")
    return blist


def _default_initial(model: StateSpaceModel, y0: np.ndarray) -> GaussianBelief:
    if model.H.shape[0] != model.H.shape[1]:
        raise ValueError("a default initial belief needs a square H; pass `initial`")
    Hinv = np.linalg.inv(model.H)
    return GaussianBelief(Hinv @ y0, Hinv @ model.R @ Hinv.T)


def _prepare(model, series, bounds_per_step, initial):
    y = _channels(series)
    # Without an explicit initial belief the first frame is consumed by it.
    if y.shape[0] < (2 if initial is None else 1):
        raise ValueError("series needs at least two frames (one when `initial` is given)")
    if y.shape[1] != model.m:
        raise ValueError(f"series has {y.shape[1]} channels, model expects {model.m}")
    if initial is None:
        # The first frame seeds the belief and is not scored.
        initial = _default_initial(model, y[0])
        offset = 1
    else:
        offset = 0
    blist = _bounds_list(bounds_per_step, y.shape[0], model.m)
    return y[offset:], blist[offset:], initial


def component_terms(y, mean, sd, lower, upper):
    """Per-component log-likelihood terms and region codes (-1, 0, 1)."""
    y, mean, sd = (np.asarray(v, dtype=float) for v in (y, mean, sd))
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    below = np.isfinite(lower) & (y <= lower)
    above = np.isfinite(upper) & (y >= upper) & ~below
    with np.errstate(invalid="ignore", divide="ignore"):
        alpha = (lower - mean) / sd
        beta = (upper - mean) / sd
        z = (y - mean) / sd
        terms = np.where(
            below,
            log_ndtr(alpha),
            np.where(above, log_ndtr(-beta), -0.5 * z * z - _LOG_SQRT_2PI - np.log(sd)),
        )
    codes = below.astype(int) * -1 + above.astype(int)
    return np.maximum(terms, LOG_FLOOR), codes


def censored_loglik(
    model: StateSpaceModel,
    series,
    bounds_per_step: CensorBounds | Sequence[CensorBounds] | None,
    variant: Variant | str = Variant.CORRECTED,
    *,
    initial: GaussianBelief | None = None,
) -> LikelihoodReport:
    """Log-likelihood of a censored series under ``model``.

    The matching filter (``tkfc`` for the corrected variant, ``tkf`` for the
    baseline) supplies each step's prediction ``m_k = H x_prior`` and
    ``S_k = H P_prior H' + R``.

    Parameters
    ----------
    series
        ``(frames, m)`` array or anything with a ``channels`` attribute of that shape.
    bounds_per_step
        One :class:`CensorBounds` for all frames, a sequence with one per frame,
        or ``None`` for uncensored data.
    initial
        Starting belief.  When omitted the first frame is used as the initial
        estimate (with covariance ``H^-1 R H^-T``) and only the remaining frames
        are scored.
    """
    variant = Variant(variant)
    y, blist, initial = _prepare(model, series, bounds_per_step, initial)
    run = run_filter(_FILTER_OF[variant], model, y, initial, bounds=blist)
    sd_r = np.sqrt(np.diag(model.R))
    per_step = np.empty(len(run.reports))
    counts = np.zeros(3, dtype=int)
    for k, rep in enumerate(run.reports):
        sd = np.sqrt(np.diag(rep.latent_cov)) if variant is Variant.CORRECTED else sd_r
        b = blist[k]
        terms, codes = component_terms(y[k], rep.latent_mean, sd, b.lower, b.upper)
        per_step[k] = math.fsum(terms)
        counts += np.bincount(codes + 1, minlength=3)
    return LikelihoodReport(
        loglik=math.fsum(per_step),
        n_below=int(counts[0]),
        n_inside=int(counts[1]),
        n_above=int(counts[2]),
        per_step_terms=per_step,
    )


def _total_loglik(template, series_list, bounds_list, variant, q, initial) -> float:
    model = template.with_q(q * np.eye(template.n))
    return math.fsum(
        censored_loglik(model, s, b, variant, initial=initial).loglik
        for s, b in zip(series_list, bounds_list)
    )


def estimate_q(
    model_template: StateSpaceModel,
    series,
    bounds_per_step,
    q_grid,
    variant: Variant | str = Variant.CORRECTED,
    *,
    tol: float = 1e-6,
    initial: GaussianBelief | None = None,
    return_profile: bool = False,
):
    """Maximum-likelihood scalar ``q`` for ``Q = q I``.

    The likelihood is evaluated on ``q_grid`` and the best grid point is refined
    by golden-section search on its two neighbours, to ``tol`` in ``q``.

    ``series`` may also be a list of series sharing the model (for instance the
    joints of one recording); their log-likelihoods are summed.  In that case
    ``bounds_per_step`` must be a list of the same length.

    Raises
    ------
    NoInteriorMaximum
        If the best grid value is the first or last one of a grid with more than
        one point.  The exception carries that value.
    """
    grid = np.asarray(q_grid, dtype=float).ravel()
    if grid.size == 0 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("q_grid must be nonempty, positive and strictly increasing")
    if isinstance(series, list):
        series_list = series
        bounds_list = bounds_per_step if isinstance(bounds_per_step, list) else [bounds_per_step] * len(series)
    else:
        series_list, bounds_list = [series], [bounds_per_step]

    def ll(q):
        return _total_loglik(model_template, series_list, bounds_list, variant, q, initial)

    profile = np.array([ll(q) for q in grid])
    if grid.size == 1:
        q_hat = float(grid[0])
        return (q_hat, grid, profile) if return_profile else q_hat
    i = int(np.argmax(profile))
    if i in (0, grid.size - 1):
        raise NoInteriorMaximum(float(grid[i]), grid=grid, profile=profile)
    lo, mid, hi = grid[i - 1], grid[i], grid[i + 1]
    # scipy's golden xtol is relative to the current point.
    try:
        res = minimize_scalar(
            lambda q: -ll(q),
            bracket=(lo, mid, hi),
            method="golden",
            options={"xtol": tol / (2.0 * mid)},
        )
    except ValueError:
        # A flat top (tied neighbours) is not a valid bracket; keep the grid point.
        return (float(mid), grid, profile) if return_profile else float(mid)
    q_hat = float(res.x) if -res.fun >= profile[i] else float(mid)
    return (q_hat, grid, profile) if return_profile else q_hat
