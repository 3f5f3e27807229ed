"""Numerical primitives against library references."""

import math

import numpy as np
import pytest
from scipy import stats as scipy_stats
from scipy.special import betainc as scipy_betainc

from datscore.errors import ValidationError
from datscore.special import (
    betainc_reg,
    log_factorials,
    mills_ratio,
    norm_cdf,
    project_to_simplex,
    student_t_sf,
    student_t_two_sided,
)


def test_log_factorials_exact_small():
    lf = log_factorials(10)
    for k in range(11):
        assert lf[k] == pytest.approx(math.log(math.factorial(k)), rel=1e-14)


def test_betainc_against_scipy(rng):
    for _ in range(400):
        a = rng.uniform(0.05, 50.0)
        b = rng.uniform(0.05, 50.0)
        x = rng.uniform(0.0, 1.0)
        assert betainc_reg(a, b, x) == pytest.approx(
            scipy_betainc(a, b, x), rel=1e-11, abs=1e-13
        )


def test_betainc_edges():
    assert betainc_reg(2.0, 3.0, 0.0) == 0.0
    assert betainc_reg(2.0, 3.0, 1.0) == 1.0
    with pytest.raises(ValidationError):
        betainc_reg(-1.0, 2.0, 0.5)
    with pytest.raises(ValidationError):
        betainc_reg(1.0, 2.0, 1.5)


def test_student_t_tail_against_scipy(rng):
    for _ in range(1000):
        df = rng.uniform(1.0, 300.0)
        t = rng.uniform(-30.0, 30.0)
        assert student_t_sf(t, df) == pytest.approx(
            scipy_stats.t.sf(t, df), rel=1e-10, abs=1e-12
        )
        assert student_t_two_sided(t, df) == pytest.approx(
            2 * scipy_stats.t.sf(abs(t), df), rel=1e-10, abs=1e-12
        )


def test_student_t_integral_df(rng):
    for df in (1, 2, 5, 13, 100):
        for t in (-4.33, -1.0, 0.0, 0.5, 4.33):
            assert student_t_sf(t, df) == pytest.approx(
                scipy_stats.t.sf(t, df), rel=1e-10
            )


def test_student_t_infinite_and_invalid():
    assert student_t_sf(math.inf, 5) == 0.0
    assert student_t_sf(-math.inf, 5) == 1.0
    with pytest.raises(ValidationError):
        student_t_sf(1.0, 0.0)


def test_mills_ratio_matches_direct(rng):
    x = rng.uniform(-8, 8, 200)
    direct = scipy_stats.norm.pdf(x) / scipy_stats.norm.cdf(x)
    np.testing.assert_allclose(mills_ratio(x), direct, rtol=1e-12)


def test_mills_ratio_extreme_tails():
    # far negative: lambda(x) ~ -x; far positive: lambda -> 0
    assert mills_ratio(-100.0) == pytest.approx(100.01, rel=1e-3)
    assert mills_ratio(50.0) < 1e-100
    assert mills_ratio(1e3) == 0.0  # erfcx overflow maps to the exact limit


def test_norm_cdf_basics():
    assert norm_cdf(0.0) == pytest.approx(0.5)
    assert norm_cdf(10.0) == pytest.approx(1.0)


def test_simplex_projection_properties(rng):
    for _ in range(200):
        v = rng.normal(0, 3, rng.integers(1, 12))
        w = project_to_simplex(v)
        assert w.min() >= 0.0
        assert w.sum() == pytest.approx(1.0, abs=1e-12)
        # projection is idempotent
        np.testing.assert_allclose(project_to_simplex(w), w, atol=1e-12)


def test_simplex_projection_already_on_simplex():
    v = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(project_to_simplex(v), v, atol=1e-12)
