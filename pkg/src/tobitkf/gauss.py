"""Standard normal and standard bivariate normal primitives.

Infinite arguments are handled analytically everywhere: ``std_cdf(-inf) == 0``,
``std_pdf(+-inf) == 0`` and rectangle probabilities accept semi-infinite
intervals directly.

The bivariate orthant probability follows Genz's Gauss-Legendre evaluation of
the Drezner-Wesolowsky integral, which is accurate to roughly 1e-15 in absolute
terms and uses a fixed number of nodes, so results are deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .errors import CorrelationOutOfRange

INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
TWO_PI = 2.0 * math.pi

#: Correlations closer than this to +-1 are clamped by :func:`clamp_correlation`.
RHO_LIMIT = 1.0 - 1e-9


@dataclass(frozen=True)
class StdInterval:
    """Open interval in standardized units; either endpoint may be infinite."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"interval requires lo < hi, got ({self.lo}, {self.hi})")


def std_pdf(x):
    """Standard normal density. Works elementwise on arrays."""
    x = np.asarray(x, dtype=float)
    out = INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return out if out.ndim else float(out)


def std_cdf(x):
    """Standard normal distribution function. Works elementwise on arrays."""
    out = ndtr(np.asarray(x, dtype=float))
    return out if np.ndim(out) else float(out)


def clamp_correlation(rho: float) -> float:
    """Pull ``rho`` inside ``[-RHO_LIMIT, RHO_LIMIT]``."""
    return float(min(max(rho, -RHO_LIMIT), RHO_LIMIT))


def _check_rho(rho: float) -> None:
    if not abs(rho) < 1.0 or math.isnan(rho):
        raise CorrelationOutOfRange(f"|rho| must be < 1, got {rho!r}")


def bivariate_pdf(x1: float, x2: float, rho: float) -> float:
    """Density of the standard bivariate normal with correlation ``rho``."""
    _check_rho(rho)
    if math.isinf(x1) or math.isinf(x2):
        return 0.0
    om = 1.0 - rho * rho
    q = (x1 * x1 - 2.0 * rho * x1 * x2 + x2 * x2) / om
    return math.exp(-0.5 * q) / (TWO_PI * math.sqrt(om))


# Gauss-Legendre half-rules on (0, 1) used by the orthant integral.
_GL = {
    6: (
        np.array([0.1713244923791705, 0.3607615730481384, 0.4679139345726904]),
        np.array([0.9324695142031522, 0.6612093864662647, 0.2386191860831970]),
    ),
    12: (
        np.array([0.04717533638651177, 0.1069393259953183, 0.1600783285433464,
                  0.2031674267230659, 0.2334925365383547, 0.2491470458134029]),
        np.array([0.9815606342467191, 0.9041172563704750, 0.7699026741943050,
                  0.5873179542866171, 0.3678314989981802, 0.1252334085114692]),
    ),
    20: (
        np.array([0.01761400713915212, 0.04060142980038694, 0.06267204833410906,
                  0.08327674157670475, 0.1019301198172404, 0.1181945319615184,
                  0.1316886384491766, 0.1420961093183821, 0.1491729864726037,
                  0.1527533871307259]),
        np.array([0.9931285991850949, 0.9639719272779138, 0.9122344282513259,
                  0.8391169718222188, 0.7463319064601508, 0.6360536807265150,
                  0.5108670019508271, 0.3737060887154196, 0.2277858511416451,
                  0.07652652113349733]),
    ),
}
_NODES = {
    n: (np.concatenate([w, w]), np.concatenate([1.0 - x, 1.0 + x]))
    for n, (w, x) in _GL.items()
}


def _phi(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def _bvnu(h: float, k: float, r: float) -> float:
    """P(X > h, Y > k) for the standard bivariate normal with correlation r."""
    if h == math.inf or k == math.inf:
        return 0.0
    if h == -math.inf:
        return 1.0 if k == -math.inf else _phi(-k)
    if k == -math.inf:
        return _phi(-h)
    if r == 0.0:
        return _phi(-h) * _phi(-k)

    ar = abs(r)
    w, x = _NODES[6 if ar < 0.3 else 12 if ar < 0.75 else 20]
    hk = h * k

    if ar < 0.925:
        hs = 0.5 * (h * h + k * k)
        asr = 0.5 * math.asin(r)
        sn = np.sin(asr * x)
        bvn = float(np.dot(w, np.exp((sn * hk - hs) / (1.0 - sn * sn))))
        bvn = bvn * asr / TWO_PI + _phi(-h) * _phi(-k)
    else:
        if r < 0.0:
            k = -k
            hk = -hk
        bvn = 0.0
        if ar < 1.0:
            as_ = 1.0 - r * r
            a = math.sqrt(as_)
            bs = (h - k) ** 2
            asr = -0.5 * (bs / as_ + hk)
            c = (4.0 - hk) / 8.0
            d = (12.0 - hk) / 80.0
            if asr > -100.0:
                bvn = a * math.exp(asr) * (
                    1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_
                )
            if hk > -100.0:
                b = math.sqrt(bs)
                sp = math.sqrt(TWO_PI) * _phi(-b / a)
                bvn -= math.exp(-hk / 2.0) * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0)
            a /= 2.0
            xs = (a * x) ** 2
            asr_v = -0.5 * (bs / xs + hk)
            keep = asr_v > -100.0
            xs = xs[keep]
            sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs)
            rs = np.sqrt(1.0 - xs)
            ep = np.exp(-(hk / 2.0) * xs / (1.0 + rs) ** 2) / rs
            bvn = (a * float(np.dot(np.exp(asr_v[keep]) * (sp - ep), w[keep])) - bvn) / TWO_PI
        if r > 0.0:
            bvn += _phi(-max(h, k))
        elif h >= k:
            bvn = -bvn
        else:
            big = _phi(k) - _phi(h) if h < 0.0 else _phi(-h) - _phi(-k)
            bvn = big - bvn
    return min(max(bvn, 0.0), 1.0)


def bivariate_lower_cdf(x1: float, x2: float, rho: float) -> float:
    """P(Z1 < x1, Z2 < x2)."""
    _check_rho(rho)
    return _bvnu(-x1, -x2, rho)


def bivariate_rect_prob(i1: StdInterval, i2: StdInterval, rho: float) -> float:
    """Probability that a standard bivariate normal falls in ``i1 x i2``."""
    _check_rho(rho)
    p = (
        _bvnu(i1.lo, i2.lo, rho)
        - _bvnu(i1.hi, i2.lo, rho)
        - _bvnu(i1.lo, i2.hi, rho)
        + _bvnu(i1.hi, i2.hi, rho)
    )
    return min(max(p, 0.0), 1.0)


def partition_probs(a1: float, b1: float, a2: float, b2: float, rho: float) -> np.ndarray:
    """Probabilities of the 3x3 grid cut by ``a1 < b1`` and ``a2 < b2``.

    Entry ``[r, s]`` is the probability that component 1 is in region ``r`` and
    component 2 in region ``s``, with regions ordered (below, inside, above).
    All limits are in standardized units. The nine entries sum to one.
    """
    _check_rho(rho)
    xs = (-math.inf, a1, b1, math.inf)
    ys = (-math.inf, a2, b2, math.inf)
    grid = np.empty((4, 4))
    for r, x in enumerate(xs):
        for s, y in enumerate(ys):
            if x == -math.inf or y == -math.inf:
                grid[r, s] = 0.0
            elif x == math.inf:
                grid[r, s] = _phi(y) if y != math.inf else 1.0
            elif y == math.inf:
                grid[r, s] = _phi(x)
            else:
                grid[r, s] = _bvnu(-x, -y, rho)
    cells = grid[1:, 1:] - grid[:-1, 1:] - grid[1:, :-1] + grid[:-1, :-1]
    return np.clip(cells, 0.0, 1.0)
