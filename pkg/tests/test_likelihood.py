import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracle
from rhem.likelihood import (NonFiniteError, Strata, gradient_hessian, loglik, penalized_loglik,
                             score_information)
from rhem.smooth import PenaltyBlock


def random_strata(rng, n_strata=40, m=3, p=4):
    X = rng.normal(size=(n_strata * (m + 1), p))
    return Strata(X, np.arange(n_strata) * (m + 1))


def as_rows(strata):
    bounds = list(strata.offsets) + [len(strata.X)]
    return [[(list(strata.X[r]), r == lo) for r in range(lo, hi)] for lo, hi in zip(bounds[:-1], bounds[1:])]


def random_penalties(rng, p):
    A = rng.normal(size=(p - 1, p - 1))
    return [PenaltyBlock(1, p, A @ A.T, "s", 0)], [float(rng.uniform(0.1, 5))]


def test_loglik_matches_oracle():
    rng = np.random.default_rng(0)
    s = random_strata(rng)
    theta = rng.normal(size=4)
    assert abs(loglik(s, theta) - oracle.conditional_logit(as_rows(s), theta)) < 1e-10


def test_loglik_at_zero_is_exact():
    for n, m in [(10, 1), (57, 4), (200, 9)]:
        s = Strata(np.random.default_rng(n).normal(size=(n * (m + 1), 2)), np.arange(n) * (m + 1))
        assert loglik(s, np.zeros(2)) == n * math.log(1 / (1 + m))


def test_unequal_stratum_sizes():
    rng = np.random.default_rng(1)
    sizes = rng.integers(1, 6, 30)
    offsets = np.r_[0, np.cumsum(sizes)[:-1]]
    s = Strata(rng.normal(size=(sizes.sum(), 3)), offsets)
    theta = rng.normal(size=3)
    assert abs(loglik(s, theta) - oracle.conditional_logit(as_rows(s), theta)) < 1e-10
    assert loglik(s, np.zeros(3)) == pytest.approx(-np.log(sizes).sum(), rel=1e-14)


def test_stable_for_large_predictors():
    s = Strata(np.array([[800.0], [0.0], [-800.0], [0.0]]), np.array([0, 2]))
    assert np.isfinite(loglik(s, [1.0]))
    with pytest.raises(NonFiniteError):
        loglik(s, [np.inf])


def test_score_and_information_against_finite_differences():
    rng = np.random.default_rng(2)
    s = random_strata(rng)
    theta = rng.normal(size=4) * 0.5
    _, g, info = score_information(s, theta)
    fd = np.array(oracle.central_gradient(lambda th: loglik(s, np.array(th)), list(theta)))
    assert np.allclose(g, fd, rtol=1e-6, atol=1e-6)
    h = 1e-5
    num = np.column_stack([(score_information(s, theta + h * e)[1] - score_information(s, theta - h * e)[1]) / (2 * h)
                           for e in np.eye(4)])
    assert np.allclose(-info, num, rtol=1e-5, atol=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_penalized_gradient_property(seed):
    rng = np.random.default_rng(seed)
    s = random_strata(rng, n_strata=int(rng.integers(5, 40)), m=int(rng.integers(1, 5)), p=4)
    pens, tau = random_penalties(rng, 4)
    theta = rng.normal(size=4)
    g, H = gradient_hessian(s, theta, tau, pens)
    fd = np.array(oracle.central_gradient(lambda th: penalized_loglik(s, np.array(th), tau, pens), list(theta)))
    assert np.all(np.abs(g - fd) <= 1e-6 * np.maximum(1.0, np.abs(fd)))
    assert np.allclose(H, H.T, atol=1e-12)
    assert np.linalg.eigvalsh(H).max() <= 1e-8


def test_subset_keeps_strata():
    rng = np.random.default_rng(3)
    s = random_strata(rng, n_strata=10)
    sub = s.subset([2, 5])
    theta = rng.normal(size=4)
    rows = as_rows(s)
    assert abs(loglik(sub, theta) - oracle.conditional_logit([rows[2], rows[5]], theta)) < 1e-12
