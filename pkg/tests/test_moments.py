import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.stats import norm

from tobitkf.errors import DegenerateRegion
from tobitkf.moments import (
    CensorBounds,
    MvnSpec,
    censored_covariance,
    censored_mean,
    censored_moments,
    censored_variance,
    mc_censored_oracle,
    region_probabilities,
    truncated_mean,
    truncated_normal_variance,
    truncated_second_moment,
)

INF = math.inf

WORKED = MvnSpec([2, 2, 3], [[5, 3, 4], [3, 5, 4], [4, 4, 5]])
WORKED_BOUNDS = CensorBounds([-1, -3, 1], [1, 7, 4])
WORKED_COV_EXACT = np.array([[0.4651, 0.6962, 0.5085], [0.6962, 4.7747, 1.9189], [0.5085, 1.9189, 1.4379]])
WORKED_COV_SAMPLED = np.array([[0.4648, 0.6962, 0.5083], [0.6962, 4.7753, 1.9191], [0.5083, 1.9191, 1.4380]])


# ----- independent quadrature oracles -------------------------------------------------

def scalar_censored_oracle(mu, var, a, b):
    """Mean and variance of clamp(Y, a, b) for Y ~ N(mu, var) by direct quadrature."""
    sd = math.sqrt(var)
    pdf = lambda x: norm.pdf(x, mu, sd)  # noqa: E731
    pa = norm.cdf(a, mu, sd) if a > -INF else 0.0
    pb = norm.sf(b, mu, sd) if b < INF else 0.0
    m1 = integrate.quad(lambda x: x * pdf(x), a, b, epsabs=1e-13)[0]
    m2 = integrate.quad(lambda x: x * x * pdf(x), a, b, epsabs=1e-13)[0]
    ea = a * pa if pa else 0.0
    eb = b * pb if pb else 0.0
    mean = m1 + ea + eb
    second = m2 + (a * a * pa if pa else 0.0) + (b * b * pb if pb else 0.0)
    return mean, second - mean**2


def pair_clamp_oracle(mean, cov, a, b):
    """E[clamp(Y1) clamp(Y2)] - E[clamp(Y1)] E[clamp(Y2)] by cellwise 2-D quadrature."""
    rv = lambda x, y: _bvn_pdf(x, y, mean, cov)  # noqa: E731
    g1 = lambda x: min(max(x, a[0]), b[0])  # noqa: E731
    g2 = lambda y: min(max(y, a[1]), b[1])  # noqa: E731
    cuts1 = [-INF, a[0], b[0], INF]
    cuts2 = [-INF, a[1], b[1], INF]
    e12 = e1 = e2 = 0.0
    for r in range(3):
        for s in range(3):
            lo1, hi1, lo2, hi2 = cuts1[r], cuts1[r + 1], cuts2[s], cuts2[s + 1]
            if lo1 == hi1 or lo2 == hi2:
                continue
            opts = {"epsabs": 1e-12, "epsrel": 1e-11, "limit": 200}
            e12 += integrate.nquad(lambda y, x: g1(x) * g2(y) * rv(x, y), [[lo2, hi2], [lo1, hi1]], opts=[opts, opts])[0]
            e1 += integrate.nquad(lambda y, x: g1(x) * rv(x, y), [[lo2, hi2], [lo1, hi1]], opts=[opts, opts])[0]
            e2 += integrate.nquad(lambda y, x: g2(y) * rv(x, y), [[lo2, hi2], [lo1, hi1]], opts=[opts, opts])[0]
    return e12 - e1 * e2


def _bvn_pdf(x, y, mean, cov):
    d = np.array([x - mean[0], y - mean[1]])
    inv = np.linalg.inv(cov)
    return math.exp(-0.5 * d @ inv @ d) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))


def truncated_pair_oracle(mean, cov, lo, hi):
    opts = {"epsabs": 1e-12, "epsrel": 1e-11, "limit": 200}
    rng = [[lo[1], hi[1]], [lo[0], hi[0]]]
    f = lambda y, x: _bvn_pdf(x, y, mean, cov)  # noqa: E731
    p = integrate.nquad(f, rng, opts=[opts, opts])[0]
    m = [integrate.nquad(lambda y, x: x * f(y, x), rng, opts=[opts, opts])[0] / p,
         integrate.nquad(lambda y, x: y * f(y, x), rng, opts=[opts, opts])[0] / p]
    s11 = integrate.nquad(lambda y, x: x * x * f(y, x), rng, opts=[opts, opts])[0] / p
    s12 = integrate.nquad(lambda y, x: x * y * f(y, x), rng, opts=[opts, opts])[0] / p
    s22 = integrate.nquad(lambda y, x: y * y * f(y, x), rng, opts=[opts, opts])[0] / p
    return np.array(m), np.array([[s11, s12], [s12, s22]])


# ----- types ------------------------------------------------------------------------

def test_mvnspec_validation():
    with pytest.raises(ValueError):
        MvnSpec([0, 0], [[1, 0.5], [0.4, 1]])  # not symmetric
    with pytest.raises(ValueError):
        MvnSpec([0, 0], [[1, 2], [2, 1]])  # indefinite
    with pytest.raises(ValueError):
        MvnSpec([0], [[0.0]])  # zero variance
    assert MvnSpec([1.0], [[4.0]]).sd == pytest.approx([2.0])


def test_bounds_validation():
    with pytest.raises(ValueError):
        CensorBounds([1.0], [1.0])
    b = CensorBounds.unbounded(2)
    assert np.all(np.isinf(b.lower)) and np.all(np.isinf(b.upper))


# ----- region probabilities -----------------------------------------------------------

def test_region_probabilities_trivial():
    p = region_probabilities(MvnSpec([0], [[1]]), CensorBounds([-INF], [INF]))
    assert (p.below[0], p.inside[0], p.above[0]) == (0.0, 1.0, 0.0)
    p = region_probabilities(MvnSpec([0], [[1]]), CensorBounds([0], [INF]))
    assert (p.below[0], p.inside[0], p.above[0]) == pytest.approx((0.5, 0.5, 0.0), abs=1e-15)


def test_region_probabilities_against_quadrature():
    mu, sd = 2.0, math.sqrt(5.0)
    p = region_probabilities(MvnSpec([mu], [[5.0]]), CensorBounds([-1.0], [1.0]))
    f = lambda x: norm.pdf(x, mu, sd)  # noqa: E731
    assert p.below[0] == pytest.approx(integrate.quad(f, -INF, -1)[0], abs=1e-10)
    assert p.inside[0] == pytest.approx(integrate.quad(f, -1, 1)[0], abs=1e-10)
    assert p.above[0] == pytest.approx(integrate.quad(f, 1, INF)[0], abs=1e-10)


# ----- scalar censored moments ----------------------------------------------------------

def test_censored_mean_trivial():
    assert censored_mean(MvnSpec([5], [[1]]), CensorBounds([-INF], [INF]))[0] == pytest.approx(5.0)
    assert censored_mean(MvnSpec([0], [[1]]), CensorBounds([0], [INF]))[0] == pytest.approx(0.3989422804, abs=1e-10)


@pytest.mark.parametrize(
    "mu,var,a,b",
    [(0, 1, -1, 1), (2, 5, -1, 1), (2, 5, -3, 7), (3, 5, 1, 4), (-4, 0.3, -1, 2), (0, 2, -INF, 0.5), (1, 9, 0, INF)],
)
def test_scalar_moments_against_quadrature(mu, var, a, b):
    spec, bounds = MvnSpec([mu], [[var]]), CensorBounds([a], [b])
    m_or, v_or = scalar_censored_oracle(mu, var, a, b)
    assert censored_mean(spec, bounds)[0] == pytest.approx(m_or, abs=1e-9)
    assert censored_variance(spec, bounds)[0] == pytest.approx(v_or, abs=1e-9)
    assert censored_covariance(spec, bounds)[0, 0] == pytest.approx(v_or, abs=1e-9)


@pytest.mark.parametrize(
    "alpha,beta",
    [(-INF, INF), (-1, 1), (0, INF), (-INF, -3), (-20, -19), (30, 31), (2, 2.5), (-0.1, 0.1)],
)
@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_truncated_normal_variance_against_quadrature(alpha, beta):
    # Integrate the density relative to its value at the interval end nearest the
    # mode so deep-tail slices do not underflow.
    x0 = min(max(0.0, alpha), beta)
    w = lambda x: math.exp(-0.5 * (x * x - x0 * x0))  # noqa: E731
    z = integrate.quad(w, alpha, beta, epsabs=0, epsrel=1e-13)[0]
    m1 = integrate.quad(lambda x: (x - x0) * w(x), alpha, beta, epsabs=1e-15, epsrel=1e-13)[0] / z
    m2 = integrate.quad(lambda x: (x - x0) ** 2 * w(x), alpha, beta, epsabs=1e-15, epsrel=1e-13)[0] / z
    assert truncated_normal_variance(alpha, beta)[0] == pytest.approx(m2 - m1**2, rel=1e-7, abs=1e-12)


def test_truncated_normal_variance_deep_tail_matches_exponential_limit():
    # For an interval far out in the tail the density is ~exp(-|alpha| t); a unit
    # slice of an exponential with rate 40 has variance close to 1/40^2.
    v = truncated_normal_variance(-40.0, -39.0)[0]
    assert v == pytest.approx(1 / 40**2, rel=0.06)
    assert truncated_normal_variance(39.0, 40.0)[0] == pytest.approx(v, rel=1e-12)


# ----- bivariate truncated moments ---------------------------------------------------------

def test_truncated_mean_trivial():
    spec = MvnSpec([0, 0], np.eye(2))
    assert truncated_mean(spec, CensorBounds.unbounded(2)) == pytest.approx([0, 0], abs=1e-12)
    got = truncated_mean(spec, CensorBounds([0, -INF], [INF, INF]))
    assert got == pytest.approx([math.sqrt(2 / math.pi), 0], abs=1e-12)


def test_truncated_second_moment_trivial():
    spec = MvnSpec([0, 0], np.eye(2))
    assert truncated_second_moment(spec, CensorBounds.unbounded(2)) == pytest.approx(np.eye(2), abs=1e-12)
    c = 0.7
    got = truncated_second_moment(spec, CensorBounds([-c, -INF], [c, INF]))
    expect = 1 - 2 * c * norm.pdf(c) / (2 * norm.cdf(c) - 1)
    assert got == pytest.approx(np.diag([expect, 1.0]), abs=1e-12)


@pytest.mark.parametrize(
    "mean,cov,lo,hi",
    [
        ([2, 3], [[4, 3.999], [3.999, 4.001]], [-1, 1], [1, 4]),
        ([2, 3], [[4, 3], [3, 4]], [-1, -3], [1, 7]),
        ([0, 1], [[1, -0.6], [-0.6, 2]], [-INF, 0], [0.5, INF]),
        ([-1, 0.5], [[2, 0.3], [0.3, 0.5]], [0, -INF], [INF, 0]),
    ],
)
def test_truncated_pair_against_quadrature(mean, cov, lo, hi):
    spec, bounds = MvnSpec(mean, cov), CensorBounds(lo, hi)
    m_or, s_or = truncated_pair_oracle(np.array(mean, float), np.array(cov, float), lo, hi)
    assert truncated_mean(spec, bounds) == pytest.approx(m_or, abs=1e-7)
    assert truncated_second_moment(spec, bounds) == pytest.approx(s_or, abs=1e-7)


def test_truncated_pair_monte_carlo_rejection():
    # Near-singular covariance from the operation's examples, checked by rejection sampling.
    eps = 1e-3
    spec = MvnSpec([2, 3], [[4, 4], [4, 4 + eps]])
    bounds = CensorBounds([-1, 1], [1, 4])
    rng = np.random.default_rng(11)
    x = rng.multivariate_normal(spec.mean, spec.cov, size=2_000_000)
    keep = np.all((x > bounds.lower) & (x < bounds.upper), axis=1)
    xs = x[keep]
    se = xs.std(axis=0) / math.sqrt(len(xs))
    assert np.all(np.abs(truncated_mean(spec, bounds) - xs.mean(axis=0)) < 3 * se + 1e-12)


def test_truncated_moments_degenerate_region():
    spec = MvnSpec([0, 0], np.eye(2))
    with pytest.raises(DegenerateRegion):
        truncated_mean(spec, CensorBounds([40, -1], [41, 1]))
    with pytest.raises(DegenerateRegion):
        truncated_second_moment(spec, CensorBounds([40, -1], [41, 1]))


# ----- censored covariance ---------------------------------------------------------------

def test_worked_example_matches_reference_matrix():
    cov = censored_covariance(WORKED, WORKED_BOUNDS)
    assert np.max(np.abs(cov - WORKED_COV_EXACT)) <= 1e-3
    mom = censored_moments(WORKED, WORKED_BOUNDS)
    assert np.array_equal(mom.cov, cov)
    assert mom.mean == pytest.approx(censored_mean(WORKED, WORKED_BOUNDS), abs=1e-14)


@pytest.mark.parametrize(
    "mean,cov,a,b",
    [
        ([2, 2], [[5, 3], [3, 5]], [-1, -3], [1, 7]),
        ([2, 3], [[5, 4], [4, 5]], [-1, 1], [1, 4]),
        ([0, 0], [[1, -0.9], [-0.9, 1]], [-0.5, -INF], [0.5, 0.2]),
        ([1, -1], [[2, 0.4], [0.4, 0.3]], [0, -1.5], [INF, -0.5]),
    ],
)
def test_pair_covariance_against_quadrature(mean, cov, a, b):
    spec, bounds = MvnSpec(mean, cov), CensorBounds(a, b)
    got = censored_covariance(spec, bounds)[0, 1]
    expect = pair_clamp_oracle(np.array(mean, float), np.array(cov, float), a, b)
    assert got == pytest.approx(expect, abs=1e-7)


def test_uncensored_returns_input_covariance():
    cov = censored_covariance(WORKED, CensorBounds.unbounded(3))
    assert np.max(np.abs(cov - WORKED.cov)) <= 1e-9


def test_independent_components_stay_uncorrelated():
    cov = censored_covariance(MvnSpec([0, 0], np.eye(2)), CensorBounds([-1, -1], [1, 1]))
    assert cov[0, 1] == 0.0 and cov[1, 0] == 0.0


@st.composite
def instances(draw):
    d = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(d, d))
    cov = L @ L.T + 0.2 * np.eye(d)
    mean = rng.normal(0, 2, d)
    lo = mean + rng.normal(-1, 1.5, d)
    hi = lo + rng.uniform(0.1, 4, d)
    lo[rng.random(d) < 0.2] = -INF
    hi[rng.random(d) < 0.2] = INF
    return MvnSpec(mean, cov), CensorBounds(lo, hi)


@settings(max_examples=60, deadline=None)
@given(instances())
def test_moment_invariants(inst):
    spec, bounds = inst
    mom = censored_moments(spec, bounds)
    assert np.max(np.abs(mom.cov - mom.cov.T)) <= 1e-9
    assert np.all(np.diag(mom.cov) >= 0)
    assert np.all(np.diag(mom.cov) <= np.diag(spec.cov) + 1e-9)
    assert np.all(mom.mean >= bounds.lower) and np.all(mom.mean <= bounds.upper)
    assert np.all(np.abs(mom.region_probs.total() - 1) <= 1e-9)


@settings(max_examples=30, deadline=None)
@given(instances())
def test_limit_recovery_for_wide_bounds(inst):
    spec, _ = inst
    wide = CensorBounds(spec.mean - 1e6 * spec.sd, spec.mean + 1e6 * spec.sd)
    mom = censored_moments(spec, wide)
    scale = np.sqrt(np.outer(np.diag(spec.cov), np.diag(spec.cov)))
    assert np.all(np.abs(mom.mean - spec.mean) <= 1e-6 * np.maximum(np.abs(spec.mean), spec.sd))
    assert np.all(np.abs(mom.cov - spec.cov) <= 1e-6 * scale)


def test_monte_carlo_oracle_worked_example():
    mc = mc_censored_oracle(WORKED, WORKED_BOUNDS, 100_000, 30, seed=5)
    assert np.all(np.abs(mc.cov - WORKED_COV_EXACT) <= 4 * mc.cov_stderr + 1e-12)
    # The reference sampling matrix is one draw of the same protocol.
    assert np.max(np.abs(mc.cov - WORKED_COV_SAMPLED)) < 0.01


def test_monte_carlo_oracle_uncensored_and_deterministic():
    spec = MvnSpec([1, -1], [[2, 0.5], [0.5, 1]])
    mc = mc_censored_oracle(spec, CensorBounds.unbounded(2), 20_000, 10, seed=3)
    assert np.all(np.abs(mc.cov - spec.cov) <= 4 * mc.cov_stderr)
    again = mc_censored_oracle(spec, CensorBounds.unbounded(2), 20_000, 10, seed=3)
    assert np.array_equal(mc.cov, again.cov) and np.array_equal(mc.mean, again.mean)
