import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from artifact.potential import (
    INF, AprioriParams, Potential, bump, constant, from_spec, norm_lp, sigma, sigma_bar,
    sigma_bar_nested, sine, validate_apriori, zero,
)


def linear(n=400):
    return Potential(1.0, np.linspace(0.0, 1.0, n + 1))


# -- examples -------------------------------------------------------------------

def test_sigma_examples():
    assert sigma(constant(1.0), 0.25) == pytest.approx(0.75, abs=1e-14)
    assert sigma(bump(1, 0.5, 0.2), 1.0) == 0.0
    # |q| piecewise linear, so trapezoid is exact
    assert sigma(linear(), 0.0) == pytest.approx(0.5, abs=1e-14)


def test_sigma_bar_examples():
    assert sigma_bar(constant(1.0), 0.0) == pytest.approx(0.5, abs=1e-14)
    assert sigma_bar(constant(1.0), 0.5) == pytest.approx(0.125, abs=1e-14)
    assert sigma_bar(bump(1, 0.5, 0.2), 1.0) == 0.0
    assert sigma_bar(bump(1, 0.5, 0.2), 3.0) == 0.0


def test_norm_examples():
    assert norm_lp(constant(2.0), 1) == pytest.approx(2.0)
    assert norm_lp(constant(2.0), INF) == 2.0
    assert norm_lp(constant(2.0), "inf") == 2.0
    assert norm_lp(linear(2000), 2) == pytest.approx(1 / math.sqrt(3), rel=1e-6)
    with pytest.raises(ValueError):
        norm_lp(constant(1.0), 0.5)


def test_sigma_rejects_negative_x():
    with pytest.raises(ValueError):
        sigma(constant(1.0), -0.1)


def test_validate_examples():
    params = AprioriParams(a=1, Q1=1, p=2, Dp=1, delta=0.1)
    assert validate_apriori(zero(), zero(), params).all_passed

    rep = validate_apriori(zero(), constant(1.0), AprioriParams(a=1, Q1=0.5, p=2, Dp=1, delta=0.1))
    assert not rep["norm1_q2"].passed
    assert rep["norm1_q2"].value == pytest.approx(1.0)

    rep = validate_apriori(zero(), sine(1.0, 1.0), AprioriParams(a=1, Q1=1, p=2, Dp=1, delta=0.1,
                                                                 r=2, Dr_prime=10))
    assert rep["mean_equality"].passed


def test_validate_grid_mismatch():
    params = AprioriParams(a=1, Q1=1, p=2, Dp=1, delta=0.1)
    with pytest.raises(ValueError):
        validate_apriori(zero(n_grid=100), zero(n_grid=200), params)


def test_params_validation():
    with pytest.raises(ValueError):
        AprioriParams(a=1, Q1=1, p=1, Dp=1, delta=0.1)
    with pytest.raises(ValueError):
        AprioriParams(a=1, Q1=1, p=2, Dp=1, delta=1.0)
    p = AprioriParams(a=1, Q1=1, p="inf", Dp=1, delta=0.5)
    assert p.p is INF
    assert p.A_contour == pytest.approx(1 + math.e)
    assert AprioriParams.from_dict(p.to_dict()) == p


def test_potential_invariants():
    with pytest.raises(ValueError):
        Potential(1.0, np.zeros(2))
    with pytest.raises(ValueError):
        Potential(-1.0, np.zeros(10))
    with pytest.raises(ValueError):
        Potential(1.0, np.array([0.0, np.nan, 0.0, 0.0]))


def test_json_roundtrip():
    q = bump(0.5, 0.5, 0.3, n_grid=50)
    r = Potential.from_dict(q.to_dict())
    assert r.a == q.a and np.array_equal(r.values, q.values)


def test_composite_spec():
    q = from_spec("bump(0.5,0.5,0.3) + bump(0.1,0.6,0.1) - bump(0.1,0.4,0.1)", 1.0, 200)
    ref = bump(0.5, 0.5, 0.3, n_grid=200).values + bump(0.1, 0.6, 0.1, n_grid=200).values \
        - bump(0.1, 0.4, 0.1, n_grid=200).values
    np.testing.assert_allclose(q.values, ref, atol=1e-15)
    assert np.all(from_spec("zero").values == 0)
    with pytest.raises(ValueError):
        from_spec("gauss(1,2)")
    with pytest.raises(ValueError):
        from_spec("bump(1,2)")


# -- properties -----------------------------------------------------------------

bumps = st.tuples(st.floats(-2, 2), st.floats(0.2, 0.8), st.floats(0.05, 0.2))


@given(bumps)
def test_sigma_monotone_and_bounded(b):
    q = bump(*b, n_grid=200)
    xs = q.x
    s = np.array([sigma(q, x) for x in xs])
    sb = np.array([sigma_bar(q, x) for x in xs])
    assert np.all(np.diff(s) <= 1e-15)
    assert np.all(np.diff(sb) <= 1e-15)
    Q1 = norm_lp(q, 1)
    assert np.all(s <= Q1 * (1 + 1e-12))
    assert np.all(sb <= (q.a - xs) * Q1 * (1 + 1e-12) + 1e-15)


@given(bumps, st.floats(0.0, 1.0))
def test_sigma_bar_two_forms_agree(b, x):
    q = bump(*b, n_grid=400)
    assert sigma_bar_nested(q, x) == pytest.approx(sigma_bar(q, x), rel=1e-8, abs=1e-14)
