from fractions import Fraction

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valleyqm.errors import DegeneratePotential, NonRationalEpsilon
from valleyqm.model import (
    ModelParams,
    as_fraction,
    find_minima,
    potential,
    potential_deriv,
    two_wells,
    well_position_series,
)


def test_potential_trivial_points():
    assert potential(ModelParams(g=0.3), 0) == 0
    p = ModelParams(g=0.3, epsilon=2)
    with mpmath.workdps(60):
        q = 1 / p.g_mpf()
    assert abs(potential(p, q) + 2) < mpmath.mpf(10) ** -45


def test_potential_matches_exact_rational_evaluation():
    g, eps, q = Fraction(3, 10), Fraction(1, 2), Fraction(1, 10)
    exact = q * q * (1 - g * q) ** 2 / 2 - eps * g * q
    with mpmath.workdps(60):
        got = potential(ModelParams(g=0.3, epsilon=0.5), mpmath.mpf("0.1"))
        ref = mpmath.mpf(exact.numerator) / exact.denominator
    assert abs(got - ref) < mpmath.mpf(10) ** -48


def test_second_derivative_at_both_wells_is_one_for_symmetric_case():
    p = ModelParams(g=0.35)
    assert potential_deriv(p, 0, 2) == 1
    with mpmath.workdps(60):
        q = 1 / p.g_mpf()
    assert abs(potential_deriv(p, q, 2) - 1) < mpmath.mpf(10) ** -45


@pytest.mark.parametrize("k", [1, 2, 3])
def test_derivatives_against_finite_differences(k):
    p = ModelParams(g=0.2, epsilon=0.5)
    with mpmath.workdps(p.precision):
        q = mpmath.mpf("0.1")
        f = (lambda x: potential(p, x)) if k == 1 else (lambda x: potential_deriv(p, x, k - 1))
        h = mpmath.mpf(10) ** -12
        fd = (f(q + h) - f(q - h)) / (2 * h)
        assert abs(potential_deriv(p, q, k) - fd) < mpmath.mpf(10) ** -20


def test_derivative_order_is_validated():
    with pytest.raises(ValueError):
        potential_deriv(ModelParams(g=0.2), 0, 5)


def test_exact_minima_at_zero_asymmetry():
    left, right = find_minima(ModelParams(g=0.4))
    assert left.q_star == 0
    assert abs(right.q_star - mpmath.mpf("2.5")) < mpmath.mpf(10) ** -45
    assert abs(left.depth) < 1e-45 and abs(right.depth) < 1e-45
    assert abs(left.omega - 1) < 1e-45 and abs(right.omega - 1) < 1e-45


def test_one_well_past_the_bound():
    eps = mpmath.sqrt(3) / 18 + mpmath.mpf("0.01")
    p = ModelParams(g=1, epsilon=str(mpmath.nstr(eps, 20)))
    assert not two_wells(p)
    with pytest.raises(DegeneratePotential):
        find_minima(p)


def test_left_well_follows_its_series():
    p = ModelParams(g=0.1, epsilon=Fraction(1, 2))
    left, right = find_minima(p)
    series = well_position_series(p, "left", 7)
    with mpmath.workdps(50):
        g = p.g_mpf()
        approx = sum(mpmath.mpf(c.numerator) / c.denominator * g**k for k, c in enumerate(series))
        # first neglected term is 24 g^9
        assert abs(left.q_star - approx) < 30 * g**9
        assert abs(left.q_star - g / 2) < g**3


def test_well_series_coefficients():
    p = ModelParams(g=0.1, epsilon=Fraction(1, 2))
    assert well_position_series(p, "left", 7) == [0, Fraction(1, 2), 0, Fraction(3, 4), 0, 2, 0,
                                                  Fraction(105, 16)]
    assert well_position_series(ModelParams(g=0.1), "left", 6) == [0] * 7
    assert well_position_series(p, "left", 1)[1] == Fraction(1, 2)


def test_well_series_solves_the_stationarity_condition_through_g5():
    # substitute q* = sum c_k g^k into V'(q) = q(1-gq)(1-2gq) - eps g and expand in exact rationals
    eps = Fraction(1, 2)
    c = well_position_series(ModelParams(g=0.1, epsilon=eps), "left", 5)
    order = 6

    def mul(a, b):
        out = [Fraction(0)] * (order + 1)
        for i, x in enumerate(a):
            for j, y in enumerate(b):
                if i + j <= order:
                    out[i + j] += x * y
        return out

    q = c + [Fraction(0)] * (order + 1 - len(c))
    gq = [Fraction(0)] + q[:order]  # multiply by g
    one_minus = [1 - gq[0]] + [-x for x in gq[1:]]
    one_minus2 = [1 - 2 * gq[0]] + [-2 * x for x in gq[1:]]
    v1 = mul(mul(q, one_minus), one_minus2)
    v1[1] -= eps
    assert v1[:6] == [0] * 6


def test_right_well_series_pole_convention():
    p = ModelParams(g=0.1, epsilon=Fraction(1, 2))
    right = well_position_series(p, "right", 7)
    assert right == [0, Fraction(1, 2), 0, Fraction(-3, 4), 0, 2, 0, Fraction(-105, 16)]
    _, r = find_minima(p)
    with mpmath.workdps(50):
        g = p.g_mpf()
        approx = 1 / g + sum(mpmath.mpf(c.numerator) / c.denominator * g**k
                             for k, c in enumerate(right))
        assert abs(r.q_star - approx) < 30 * g**9


def test_rational_conversion():
    assert as_fraction(0.4) == Fraction(2, 5)
    assert as_fraction("13/5") == Fraction(13, 5)
    with pytest.raises(NonRationalEpsilon):
        as_fraction(mpmath.mpf("0.4"))
    with pytest.raises(NonRationalEpsilon):
        as_fraction("pi")


def test_params_validation():
    with pytest.raises(ValueError):
        ModelParams(g=0)
    with pytest.raises(ValueError):
        ModelParams(g=0.1, epsilon=-1)
    p = ModelParams.from_g2("0.04", epsilon=1)
    with mpmath.workdps(50):
        assert abs(p.g2 - mpmath.mpf("0.04")) < 1e-40


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.9), st.fractions(0, 5, max_denominator=20))
def test_minima_are_stationary_and_ordered(g, eps):
    p = ModelParams(g=g, epsilon=eps, precision=30)
    if not two_wells(p):
        with pytest.raises(DegeneratePotential):
            find_minima(p)
        return
    left, right = find_minima(p)
    assert left.q_star < right.q_star
    for w in (left, right):
        assert abs(potential_deriv(p, w.q_star, 1)) < mpmath.mpf(10) ** -20
        assert potential_deriv(p, w.q_star, 2) > 0


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 0.5))
def test_symmetric_wells_mirror_each_other(g):
    p = ModelParams(g=g, precision=30)
    left, right = find_minima(p)
    with mpmath.workdps(30):
        assert abs(left.q_star + right.q_star - 1 / p.g_mpf()) < 1e-25
    assert abs(left.depth - right.depth) < 1e-25


def test_depth_difference_tends_to_minus_eps():
    eps = Fraction(1, 2)
    gaps = []
    for g in (0.1, 0.05, 0.025):
        left, right = find_minima(ModelParams(g=g, epsilon=eps))
        gaps.append(abs(right.depth - left.depth + eps))
    # O(eps^2 g^2): quartering with each halving of g
    assert gaps[1] / gaps[0] < 0.3 and gaps[2] / gaps[1] < 0.3
