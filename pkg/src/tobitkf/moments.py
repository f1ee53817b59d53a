"""Moments of interval-censored and truncated multivariate normal variables.

A latent vector ``y* ~ N(mean, cov)`` is censored componentwise: values below
``lower[i]`` are recorded as ``lower[i]``, values above ``upper[i]`` as
``upper[i]``.  This module gives the exact mean and covariance of the recorded
vector, the bivariate truncated moments they are built from, and a seeded Monte
Carlo oracle used to check them.

Notation used in the code: for component ``i`` the standardized limits are
``alpha = (a - mu) / sd`` and ``beta = (b - mu) / sd``; ``f_i`` is the
*unstandardized* marginal density ``phi((x - mu) / sd) / sd``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.special import erfcx

from .errors import DegenerateRegion
from .gauss import (
    INV_SQRT_2PI,
    StdInterval,
    bivariate_pdf,
    bivariate_rect_prob,
    clamp_correlation,
    partition_probs,
    std_cdf,
    std_pdf,
)

#: Truncation regions lighter than this are treated as empty.
MIN_REGION_PROB = 1e-12


@dataclass(frozen=True)
class MvnSpec:
    """Mean vector and covariance matrix of a multivariate normal."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError(f"shape mismatch: mean {mean.shape}, cov {cov.shape}")
        scale = max(float(np.max(np.abs(cov))), 1e-300)
        if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
            raise ValueError("covariance is not symmetric")
        if np.any(np.diag(cov) <= 0):
            raise ValueError("covariance diagonal must be strictly positive")
        if mean.size > 1 and np.linalg.eigvalsh(cov)[0] < -1e-10 * np.trace(cov):
            raise ValueError("covariance is not positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(np.diag(self.cov))


@dataclass(frozen=True)
class CensorBounds:
    """Per-component censoring limits; entries may be infinite."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower and upper must be vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError(f"bounds require lower < upper, got {lower} / {upper}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def unbounded(cls, dim: int) -> "CensorBounds":
        return cls(np.full(dim, -np.inf), np.full(dim, np.inf))

    @property
    def dim(self) -> int:
        return self.lower.size

    def clamp(self, y) -> np.ndarray:
        return np.clip(np.asarray(y, dtype=float), self.lower, self.upper)


@dataclass(frozen=True)
class RegionProbs:
    """Per-component probabilities of falling below, inside or above the limits."""

    below: np.ndarray
    inside: np.ndarray
    above: np.ndarray

    def total(self) -> np.ndarray:
        return self.below + self.inside + self.above


@dataclass(frozen=True)
class CensoredMoments:
    mean: np.ndarray
    cov: np.ndarray
    region_probs: RegionProbs
    # Filled in by the Monte Carlo oracle only.
    mean_stderr: np.ndarray | None = field(default=None)
    cov_stderr: np.ndarray | None = field(default=None)


def _check_dims(spec: MvnSpec, bounds: CensorBounds) -> None:
    if spec.dim != bounds.dim:
        raise ValueError(f"spec has dim {spec.dim} but bounds have dim {bounds.dim}")


def _times_finite(limit, weight) -> np.ndarray:
    """``limit * weight`` with the convention that infinite limits contribute 0.

    An infinite limit always comes with zero probability mass or zero density,
    so the product vanishes in the limit.
    """
    limit = np.asarray(limit, dtype=float)
    return np.where(np.isfinite(limit), limit, 0.0) * weight


def _std_region_probs(alpha: np.ndarray, beta: np.ndarray) -> RegionProbs:
    below = std_cdf(alpha)
    above = std_cdf(-beta)
    # Take the difference on the side where it does not cancel.
    inside = np.where(alpha > 0, std_cdf(-alpha) - above, std_cdf(beta) - below)
    return RegionProbs(np.atleast_1d(below), np.atleast_1d(np.maximum(inside, 0.0)),
                       np.atleast_1d(above))


def standardized_limits(mean, scale, bounds: CensorBounds) -> tuple[np.ndarray, np.ndarray]:
    """``((a - mean) / scale, (b - mean) / scale)`` per component."""
    mean = np.asarray(mean, dtype=float)
    scale = np.asarray(scale, dtype=float)
    return (bounds.lower - mean) / scale, (bounds.upper - mean) / scale


def region_probs_from_limits(alpha, beta) -> RegionProbs:
    """Region probabilities from already-standardized limits."""
    return _std_region_probs(np.atleast_1d(np.asarray(alpha, float)),
                             np.atleast_1d(np.asarray(beta, float)))


def region_probabilities(spec: MvnSpec, bounds: CensorBounds) -> RegionProbs:
    """Probabilities that each latent component is below, inside or above its limits."""
    _check_dims(spec, bounds)
    alpha, beta = standardized_limits(spec.mean, spec.sd, bounds)
    return _std_region_probs(alpha, beta)


class _Pieces(NamedTuple):
    """Per-component quantities shared by the censored mean and variance."""

    mu: np.ndarray
    var: np.ndarray
    a: np.ndarray
    b: np.ndarray
    probs: RegionProbs
    fa: np.ndarray  # f_i(a_i), unstandardized density, 0 at infinite limits
    fb: np.ndarray


def _pieces(mu, var, a, b) -> _Pieces:
    sd = np.sqrt(var)
    alpha, beta = (a - mu) / sd, (b - mu) / sd
    return _Pieces(mu, var, a, b, _std_region_probs(alpha, beta),
                   std_pdf(alpha) / sd, std_pdf(beta) / sd)


def _mean_from(p: _Pieces) -> np.ndarray:
    out = (
        p.mu * p.probs.inside
        + p.var * (p.fa - p.fb)
        + _times_finite(p.a, p.probs.below)
        + _times_finite(p.b, p.probs.above)
    )
    # Rounding can push the result a hair outside [a, b].
    return np.clip(out, p.a, p.b)


def _variance_from(p: _Pieces) -> np.ndarray:
    mu, var, a, b = p.mu, p.var, p.a, p.b
    pu, pa, pb = p.probs.inside, p.probs.below, p.probs.above
    dens = p.fa - p.fb
    a_pa = _times_finite(a, pa)
    b_pb = _times_finite(b, pb)
    out = (
        mu**2 * (1 - pu) * pu
        + var * pu
        + _times_finite(a, a_pa * (1 - pa))
        + _times_finite(b, b_pb * (1 - pb))
        - 2 * a_pa * b_pb
        - var**2 * dens**2
        + 2 * mu * var * dens * (1 - pu)
        + var * (_times_finite(a - mu, p.fa) - _times_finite(b - mu, p.fb))
        - 2 * (mu * pu + var * dens) * (a_pa + b_pb)
    )
    return np.maximum(out, 0.0)


def censored_mean(spec: MvnSpec, bounds: CensorBounds) -> np.ndarray:
    """Mean of the componentwise-censored vector.

    Per component ``E(y_i) = mu_i P_un + s_ii (f_i(a_i) - f_i(b_i)) + a_i P_a + b_i P_b``
    with ``f_i`` the unstandardized marginal density, so the middle term equals
    ``sd_i (phi(alpha_i) - phi(beta_i))``.
    """
    _check_dims(spec, bounds)
    return _mean_from(_pieces(spec.mean, np.diag(spec.cov), bounds.lower, bounds.upper))


def censored_variance(spec: MvnSpec, bounds: CensorBounds) -> np.ndarray:
    """Per-component variance of the censored vector, closed form in mu, P_un, P_a, P_b.

    This is ``E(y_i^2) - E(y_i)^2`` expanded; note the squared density difference
    in the ``-s_ii^2 (f_i(a_i) - f_i(b_i))^2`` term.
    """
    _check_dims(spec, bounds)
    return _variance_from(_pieces(spec.mean, np.diag(spec.cov), bounds.lower, bounds.upper))


def _pair_partial_moments(cov2: np.ndarray, lo, hi, prob: float):
    """Unnormalized moments of a zero-mean bivariate normal over a rectangle.

    Returns ``(m1, m2)`` where ``m1[i] = E(x_i; R)`` and ``m2[i, j] = E(x_i x_j; R)``,
    i.e. integrals over the rectangle ``R = (lo[0], hi[0]) x (lo[1], hi[1])``
    without dividing by its probability ``prob``.  Dividing by ``prob`` gives the
    truncated moments.
    """
    s = cov2
    sd = (math.sqrt(s[0, 0]), math.sqrt(s[1, 1]))
    rho = clamp_correlation(s[0, 1] / (sd[0] * sd[1]))
    s01 = rho * sd[0] * sd[1]
    s = np.array([[s[0, 0], s01], [s01, s[1, 1]]])

    def joint(x0, x1):
        if math.isinf(x0) or math.isinf(x1):
            return 0.0
        return bivariate_pdf(x0 / sd[0], x1 / sd[1], rho) / (sd[0] * sd[1])

    def edge(k, x):
        # Integral of the joint density along the line x_k = x, other coord in range.
        if math.isinf(x):
            return 0.0
        q = 1 - k
        slope = s[q, k] / s[k, k]
        cond_sd = math.sqrt(max(s[q, q] - s[q, k] * slope, 0.0))
        cond_sd = max(cond_sd, 1e-300)
        upper = std_cdf((hi[q] - slope * x) / cond_sd)
        lower = std_cdf((lo[q] - slope * x) / cond_sd)
        return std_pdf(x / sd[k]) / sd[k] * (upper - lower)

    g_lo = [edge(0, lo[0]), edge(1, lo[1])]
    g_hi = [edge(0, hi[0]), edge(1, hi[1])]
    m1 = np.array([
        sum(s[i, k] * (g_lo[k] - g_hi[k]) for k in range(2)) for i in range(2)
    ])

    def xg(x, g):
        return 0.0 if math.isinf(x) else x * g

    corner = {}
    for k in range(2):
        q = 1 - k
        # f evaluated with x_k first; joint() expects (x_0, x_1).
        def f(xk, xq, k=k):
            return joint(xk, xq) if k == 0 else joint(xq, xk)
        corner[k] = f(lo[k], lo[q]) - f(lo[k], hi[q]) - f(hi[k], lo[q]) + f(hi[k], hi[q])

    m2 = np.empty((2, 2))
    for i in range(2):
        for j in range(i, 2):
            acc = s[i, j] * prob
            for k in range(2):
                acc += s[i, k] * s[j, k] / s[k, k] * (xg(lo[k], g_lo[k]) - xg(hi[k], g_hi[k]))
                q = 1 - k
                acc += s[i, k] * (s[j, q] - s[k, q] * s[j, k] / s[k, k]) * corner[k]
            m2[i, j] = m2[j, i] = acc
    return m1, m2


def _require_pair(spec: MvnSpec, bounds: CensorBounds) -> None:
    _check_dims(spec, bounds)
    if spec.dim != 2:
        raise ValueError("truncated moments are implemented for bivariate specs only")


def _rect_prob(spec: MvnSpec, lo, hi) -> float:
    sd = spec.sd
    rho = clamp_correlation(spec.cov[0, 1] / (sd[0] * sd[1]))
    return bivariate_rect_prob(
        StdInterval(lo[0] / sd[0], hi[0] / sd[0]),
        StdInterval(lo[1] / sd[1], hi[1] / sd[1]),
        rho,
    )


def truncated_mean(spec: MvnSpec, bounds: CensorBounds) -> np.ndarray:
    """``E(y* | lower < y* < upper)`` for a bivariate normal."""
    _require_pair(spec, bounds)
    lo, hi = bounds.lower - spec.mean, bounds.upper - spec.mean
    prob = _rect_prob(spec, lo, hi)
    if prob < MIN_REGION_PROB:
        raise DegenerateRegion(f"truncation region has probability {prob:.3g}")
    m1, _ = _pair_partial_moments(spec.cov, lo, hi, prob)
    return spec.mean + m1 / prob


def truncated_second_moment(spec: MvnSpec, bounds: CensorBounds) -> np.ndarray:
    """``E(y*_i y*_j | lower < y* < upper)`` for a bivariate normal, as a 2x2 matrix."""
    _require_pair(spec, bounds)
    mu = spec.mean
    lo, hi = bounds.lower - mu, bounds.upper - mu
    prob = _rect_prob(spec, lo, hi)
    if prob < MIN_REGION_PROB:
        raise DegenerateRegion(f"truncation region has probability {prob:.3g}")
    m1, m2 = _pair_partial_moments(spec.cov, lo, hi, prob)
    return np.outer(mu, mu) + (np.outer(mu, m1) + np.outer(m1, mu) + m2) / prob


def _censored_cross(cov2: np.ndarray, a, b, mean_i: float, mean_j: float) -> float:
    """Covariance of two censored components of a zero-mean pair.

    ``a`` and ``b`` are the (already centered) limits of the two components;
    ``mean_i`` and ``mean_j`` their centered censored means.
    """
    ai, aj = a
    bi, bj = b
    sd_i, sd_j = math.sqrt(cov2[0, 0]), math.sqrt(cov2[1, 1])
    rho = clamp_correlation(cov2[0, 1] / (sd_i * sd_j))
    P = partition_probs(ai / sd_i, bi / sd_i, aj / sd_j, bj / sd_j, rho)
    inf = math.inf

    def lim(x, w):
        return 0.0 if math.isinf(x) or w == 0.0 else x * w

    # Partial first moments of the latent pair over the mixed regions.
    m1_in_above, _ = _pair_partial_moments(cov2, (ai, bj), (bi, inf), P[1, 2])
    m1_below_in, _ = _pair_partial_moments(cov2, (-inf, aj), (ai, bj), P[0, 1])
    m1_above_in, _ = _pair_partial_moments(cov2, (bi, aj), (inf, bj), P[2, 1])
    m1_in_below, _ = _pair_partial_moments(cov2, (ai, -inf), (bi, aj), P[1, 0])
    _, m2_in_in = _pair_partial_moments(cov2, (ai, aj), (bi, bj), P[1, 1])

    e_ij = (
        lim(ai, lim(bj, P[0, 2]))
        + lim(bi, lim(bj, P[2, 2]))
        + lim(ai, lim(aj, P[0, 0]))
        + lim(bi, lim(aj, P[2, 0]))
        + lim(bj, m1_in_above[0])
        + lim(ai, m1_below_in[1])
        + m2_in_in[0, 1]
        + lim(bi, m1_above_in[1])
        + lim(aj, m1_in_below[0])
    )
    return e_ij - mean_i * mean_j


def _censored_cov_from(cov: np.ndarray, centered: _Pieces) -> np.ndarray:
    means = _mean_from(centered)
    out = np.diag(_variance_from(centered))
    dim = cov.shape[0]
    for i in range(dim):
        for j in range(i + 1, dim):
            if cov[i, j] == 0.0:
                continue
            idx = [i, j]
            c = _censored_cross(
                cov[np.ix_(idx, idx)], centered.a[idx], centered.b[idx], means[i], means[j]
            )
            out[i, j] = out[j, i] = c
    return out


def _centered_pieces(spec: MvnSpec, bounds: CensorBounds) -> _Pieces:
    # Censoring commutes with a shift of the mean; working on the centered
    # problem avoids cancellation in E(y_i y_j) - E(y_i) E(y_j).
    return _pieces(np.zeros(spec.dim), np.diag(spec.cov),
                   bounds.lower - spec.mean, bounds.upper - spec.mean)


def censored_covariance(spec: MvnSpec, bounds: CensorBounds) -> np.ndarray:
    """Covariance matrix of the componentwise-censored vector.

    Diagonal entries use the closed-form variance; each off-diagonal entry is
    ``E(y_i y_j) - E(y_i) E(y_j)`` where ``E(y_i y_j)`` sums the nine cells of the
    3x3 partition of the (i, j) plane: corner cells contribute limit products,
    edge cells the limit times a truncated first moment, and the central cell
    the truncated cross moment.  Components with zero latent covariance stay
    uncorrelated after clamping and are skipped.
    """
    _check_dims(spec, bounds)
    return _censored_cov_from(spec.cov, _centered_pieces(spec, bounds))


def censored_moments(spec: MvnSpec, bounds: CensorBounds) -> CensoredMoments:
    """Mean, covariance and region probabilities of the censored vector in one call."""
    _check_dims(spec, bounds)
    centered = _centered_pieces(spec, bounds)
    mean = np.clip(spec.mean + _mean_from(centered), bounds.lower, bounds.upper)
    return CensoredMoments(
        mean=mean,
        cov=_censored_cov_from(spec.cov, centered),
        region_probs=centered.probs,
    )


def truncated_normal_variance(alpha, beta) -> np.ndarray:
    """Variance of a standard normal truncated to ``(alpha, beta)``, elementwise.

    Stable deep in either tail: intervals are reflected onto the lower half and
    the tail ratios are formed with the scaled complementary error function.
    """
    alpha = np.atleast_1d(np.asarray(alpha, dtype=float)).copy()
    beta = np.atleast_1d(np.asarray(beta, dtype=float)).copy()
    with np.errstate(invalid="ignore"):
        # (-inf) + inf is nan, which compares False: the symmetric case stays put.
        flip = (alpha + beta) > 0
    alpha[flip], beta[flip] = -beta[flip], -alpha[flip]

    out = np.empty_like(alpha)
    tail = beta <= 0
    # Central case: the interval straddles zero, Z is well conditioned.
    c = ~tail
    if np.any(c):
        al, be = alpha[c], beta[c]
        z = std_cdf(be) - std_cdf(al)
        pa, pb = std_pdf(al), std_pdf(be)
        out[c] = 1 + (_times_finite(al, pa) - _times_finite(be, pb)) / z - ((pa - pb) / z) ** 2
    if np.any(tail):
        al, be = alpha[tail], beta[tail]
        # Phi(x) = 0.5 erfcx(-x/sqrt2) exp(-x^2/2) for x <= 0.
        g_b = 0.5 * erfcx(-be / math.sqrt(2))
        g_a = np.where(np.isinf(al), 0.0, 0.5 * erfcx(-np.where(np.isinf(al), 0.0, al) / math.sqrt(2)))
        decay = np.where(np.isinf(al), 0.0, np.exp(-0.5 * (np.where(np.isinf(al), 0.0, al) ** 2 - be**2)))
        denom = g_b - g_a * decay
        lam_b = INV_SQRT_2PI / denom
        lam_a = INV_SQRT_2PI * decay / denom
        out[tail] = 1 + (_times_finite(al, lam_a) - be * lam_b) - (lam_a - lam_b) ** 2
    return np.maximum(out, 0.0)


def _mvn_sampler(spec: MvnSpec) -> np.ndarray:
    w, v = np.linalg.eigh(spec.cov)
    return v * np.sqrt(np.clip(w, 0.0, None))


def mc_censored_oracle(
    spec: MvnSpec,
    bounds: CensorBounds,
    n_samples: int,
    n_reps: int,
    seed: int,
) -> CensoredMoments:
    """Monte Carlo estimate of the censored mean and covariance.

    Each repetition draws ``n_samples`` latent vectors with its own generator
    ``numpy.random.default_rng([seed, rep])`` (PCG64), clamps them to the bounds
    and forms the sample mean and sample covariance; the returned values are the
    averages over repetitions.  Standard errors are per entry, from the pooled
    sample variance of the centered samples and centered cross products over all
    ``n_samples * n_reps`` draws.
    """
    _check_dims(spec, bounds)
    if n_samples < 1 or n_reps < 1:
        raise ValueError("n_samples and n_reps must be positive")
    dim = spec.dim
    root = _mvn_sampler(spec)
    means = np.zeros(dim)
    covs = np.zeros((dim, dim))
    var_y = np.zeros(dim)
    var_z = np.zeros((dim, dim))
    counts = np.zeros((3, dim))
    for rep in range(n_reps):
        rng = np.random.default_rng([seed, rep])
        latent = spec.mean + rng.standard_normal((n_samples, dim)) @ root.T
        counts[0] += np.sum(latent <= bounds.lower, axis=0)
        counts[2] += np.sum(latent >= bounds.upper, axis=0)
        y = np.clip(latent, bounds.lower, bounds.upper)
        m = y.mean(axis=0)
        d = y - m
        c = d.T @ d / max(n_samples - 1, 1)
        means += m
        covs += c
        var_y += np.diag(c)
        z = d[:, :, None] * d[:, None, :]
        var_z += z.var(axis=0)
    total = n_samples * n_reps
    below = counts[0] / total
    above = counts[2] / total
    probs = RegionProbs(below, 1.0 - below - above, above)
    return CensoredMoments(
        mean=means / n_reps,
        cov=covs / n_reps,
        region_probs=probs,
        mean_stderr=np.sqrt(var_y / n_reps / total),
        cov_stderr=np.sqrt(var_z / n_reps / total),
    )
