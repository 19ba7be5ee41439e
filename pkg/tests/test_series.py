import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from valleyqm.errors import CapExceeded, NonRationalEpsilon, PrecisionLoss
from valleyqm.model import ModelParams
from valleyqm.series import (
    PerturbativeSeries,
    cached_series,
    compute_series,
    extract_A,
    predicted_A,
    predicted_coefficient,
    ratio_diagnostic,
    read_series_csv,
    required_digits,
    write_series_csv,
)
from valleyqm.spectrum import eigenvalues_lowest


def rs_oracle(eps, N, sign, orders, basis=80):
    """Textbook Rayleigh-Schroedinger in the normalized oscillator basis (float).

    H = n + 1/2 + h (W1) + h^2 (W2) about the eps = 0 well, g = sqrt(2) h; returns
    the g^(2m) coefficients for m = 1..orders.  Independent of the library recursion.
    """
    a = np.diag(np.sqrt(np.arange(1, basis)), 1)
    y = a + a.T
    y3 = y @ y @ y
    w1 = -sign * 0.5 * y3 - eps * y
    w2 = 0.25 * y @ y @ y @ y
    e0 = np.arange(basis) + 0.5
    denom = e0[N] - e0
    denom[N] = np.inf
    n_max = 2 * orders
    psi = [np.eye(basis)[N]]
    e = [e0[N]]
    for n in range(1, n_max + 1):
        r = w1 @ psi[n - 1]
        if n >= 2:
            r = r + w2 @ psi[n - 2]
        e.append(r[N])
        rhs = r - sum(e[k] * psi[n - k] for k in range(1, n + 1))
        nxt = rhs / denom
        nxt[N] = 0.0
        psi.append(nxt)
    return [e[2 * m] / 2**m for m in range(1, orders + 1)]


def test_symmetric_ground_state_coefficients():
    s = compute_series(0, 0, "plus", 4)
    assert list(s.coeffs) == [Fraction(1, 2), -1, Fraction(-9, 2), Fraction(-89, 2), Fraction(-5013, 8)]
    assert compute_series(0, 0, "minus", 4).coeffs == s.coeffs


@settings(max_examples=25, deadline=None)
@given(st.fractions(0, 6, max_denominator=12), st.sampled_from(["plus", "minus"]))
def test_first_correction_by_hand(eps, side):
    # second-order RS in the cubic plus first order in the quartic
    sgn = 1 if side == "plus" else -1
    expected = Fraction(1, 8) - (Fraction(3, 2) + sgn * eps) ** 2 / 2
    assert compute_series(eps, 0, side, 1).coeffs[1] == expected


@pytest.mark.parametrize("eps,N,side", [(Fraction(1, 2), 0, "plus"), (Fraction(5, 2), 2, "minus"),
                                        (Fraction(2), 3, "plus"), (Fraction(13, 5), 1, "minus")])
def test_against_textbook_perturbation_theory(eps, N, side):
    s = compute_series(eps, N, side, 4)
    sign = 1 if side == "plus" else -1
    oracle = rs_oracle(float(eps), N, sign, 4)
    for m in range(1, 5):
        assert float(s.coeffs[m]) == pytest.approx(oracle[m - 1], rel=1e-9)


def test_zeroth_order():
    assert compute_series(Fraction(2, 5), 3, "plus", 0).coeffs == (Fraction(7, 2),)
    assert compute_series(Fraction(2, 5), 3, "minus", 0).coeffs == (Fraction(31, 10),)


def test_supersymmetric_point():
    # eps = 1: the minus-side ground state is exactly -1/2 to all orders and the
    # minus-side level N pairs with the plus-side level N - 1
    zero = compute_series(1, 0, "minus", 12)
    assert all(c == 0 for c in zero.coeffs[1:])
    for N in (1, 2):
        minus = compute_series(1, N, "minus", 10)
        plus = compute_series(1, N - 1, "plus", 10)
        assert minus.coeffs[0] == plus.coeffs[0]
        assert minus.coeffs[1:] == plus.coeffs[1:]


def test_sides_differ_by_eps_sign():
    # the right well is the left one with eps -> -eps (the odd cubic drops out of even orders)
    eps = Fraction(3, 7)
    minus = compute_series(eps, 1, "minus", 8)
    mirrored = compute_series(-eps, 1, "plus", 8)
    assert minus.coeffs[1:] == mirrored.coeffs[1:]
    assert minus.coeffs[0] == mirrored.coeffs[0] - eps
    assert compute_series(eps, 1, "plus", 8).coeffs != minus.coeffs


def test_float_mode_agrees_with_exact():
    exact = compute_series(Fraction(2, 5), 1, "minus", 15)
    approx = compute_series("2/5", 1, "minus", 15, exact=False, precision=60)
    with mpmath.workdps(60):
        for c, d in zip(exact.coeffs, approx.coeffs):
            assert abs(mpmath.mpf(c.numerator) / c.denominator - d) <= abs(d) * mpmath.mpf(10) ** -40


def test_errors():
    with pytest.raises(CapExceeded):
        compute_series(0, 0, "plus", 300)
    with pytest.raises(NonRationalEpsilon):
        compute_series(mpmath.pi, 0, "plus", 3)
    with pytest.raises(ValueError):
        compute_series(0, 0, "up", 3)
    with pytest.raises(ValueError):
        compute_series(0, -1, "plus", 3)


def test_series_matches_diagonalization():
    # exponentially small effects are below 1e-20 at g^2 = 0.005
    g2 = "0.005"
    eps = Fraction(1, 2)
    p = ModelParams.from_g2(g2, epsilon=eps)
    levels = eigenvalues_lowest(p, k=3, tolerance=1e-13).eigenvalues
    expected = sorted([compute_series(eps, 0, "minus", 30).optimal_truncation(g2)[0],
                       compute_series(eps, 0, "plus", 30).optimal_truncation(g2)[0],
                       compute_series(eps, 1, "minus", 30).optimal_truncation(g2)[0]])
    for got, want in zip(levels, expected):
        assert abs(got - float(want)) < 1e-12


def test_optimal_truncation_and_evaluate():
    s = compute_series(0, 0, "plus", 40)
    value, err = s.optimal_truncation("0.01")
    assert err > 0 and err < 1e-10
    assert abs(s.evaluate("0.01", 3) - (0.5 - 0.01 - 4.5e-4 - 44.5e-6)) < 1e-15


def _gamma_oracle(z):
    # Lanczos-free check: Gamma(z) = Gamma(z + n) / (z (z+1) ... (z+n-1)) with Stirling at large argument
    n = 40
    w = z + n
    stirling = math.exp((w - 0.5) * math.log(w) - w + 0.5 * math.log(2 * math.pi)
                        + 1 / (12 * w) - 1 / (360 * w**3) + 1 / (1260 * w**5))
    prod = 1.0
    for k in range(n):
        prod *= z + k
    return stirling / prod


def test_predicted_prefactor():
    assert abs(predicted_A(0, 0, "plus") + 3 / mpmath.pi) < 1e-40
    for eps, N, side in [(Fraction(2, 5), 0, "plus"), (Fraction(13, 5), 1, "minus"), (Fraction(5, 2), 3, "minus")]:
        sgn = 1 if side == "plus" else -1
        b = sgn * float(eps) + 2 * N
        want = -3 / math.pi * 6**b / (math.factorial(N) * _gamma_oracle(sgn * float(eps) + 1 + N))
        assert float(predicted_A(eps, N, side)) == pytest.approx(want, rel=1e-12)


def test_prefactor_vanishes_on_gamma_poles():
    assert predicted_A(3, 0, "minus") == 0
    assert predicted_A(5, 2, "minus") == 0
    assert predicted_A(2, 3, "minus") != 0
    assert predicted_coefficient(3, 0, "minus", 20) == 0


@pytest.mark.parametrize("eps,N,side", [(0, 0, "plus"), (Fraction(1, 2), 0, "minus"), (Fraction(5, 2), 1, "minus")])
def test_large_order_law_at_moderate_order(eps, N, side):
    s = compute_series(eps, N, side, 60)
    A = extract_A(s, window=(40, 60), max_order=3)
    assert float(A.rel_error) < 0.01
    fit = ratio_diagnostic(s, window=(40, 60))
    assert fit.applicable and fit.rel_error < 0.02


@pytest.mark.slow
def test_extract_A_at_high_order(series_cache):
    s = cached_series(0, 0, "minus", 200, cache_dir=series_cache)
    A = extract_A(s)
    assert float(A.rel_error) < 1e-4
    assert float(A.error) < 1e-3 * abs(float(A.value))
    # the plain 1/m variable converges more slowly but agrees at low accuracy
    slow = extract_A(s, variable="m")
    assert float(slow.rel_error) < 0.05


@pytest.mark.slow
def test_noise_floor_on_gamma_pole(series_cache):
    s = cached_series(3, 0, "minus", 200, cache_dir=series_cache)
    A = extract_A(s)
    assert A.below_noise_floor()
    assert not ratio_diagnostic(s).applicable


def test_extract_A_validation():
    s = compute_series(0, 0, "plus", 30)
    with pytest.raises(ValueError):
        extract_A(s, window=(10, 40))
    with pytest.raises(ValueError):
        extract_A(s, window=(25, 30))
    with pytest.raises(ValueError):
        extract_A(s, window=(10, 30), variable="x")
    with pytest.raises(PrecisionLoss):
        extract_A(s, window=(10, 30), digits=10)
    assert required_digits(200) > 200 * math.log10(600)


def test_ratio_diagnostic_skips_zero_coefficients():
    s = compute_series(1, 0, "minus", 30)
    fit = ratio_diagnostic(s, window=(10, 30))
    assert not fit.applicable and "zero" in fit.reason


def test_csv_round_trip(tmp_path):
    s = compute_series(Fraction(13, 5), 2, "minus", 12)
    path = write_series_csv(s, tmp_path / "s.csv")
    back = read_series_csv(path)
    assert back == s
    assert path.read_text().startswith("# {")


def test_cache_truncates_longer_entries(tmp_path):
    s = cached_series(Fraction(1, 3), 0, "plus", 20, cache_dir=tmp_path)
    t = cached_series(Fraction(1, 3), 0, "plus", 10, cache_dir=tmp_path)
    assert t.coeffs == s.coeffs[:11]
    assert len(list(tmp_path.iterdir())) == 1


def test_continuity_in_eps():
    base = compute_series(0, 1, "plus", 8)
    near = compute_series(Fraction(1, 10**6), 1, "plus", 8)
    for c, d in zip(base.coeffs, near.coeffs):
        assert abs(float(c - d)) < 1e-3 * max(1, abs(float(c)))


def test_series_dataclass_helpers():
    s = PerturbativeSeries(Fraction(1, 2), 2, "minus", (Fraction(1), Fraction(2)))
    assert s.M == 1
    assert s.gamma_shift == mpmath.mpf("3.5")
