"""The nine acceptance criteria at their stated tolerances.

Each test records one PASS/FAIL line, printed in the pytest terminal summary.
Series at order 200 are read from (or written to) the shared series cache.
"""
from fractions import Fraction

import mpmath
import numpy as np
import pytest

from conftest import record_acceptance
from valleyqm.model import ModelParams
from valleyqm.nonpert import alpha, find_np_levels, large_order_bridge, np_level
from valleyqm.series import cached_series, extract_A, predicted_A, predicted_coefficient, ratio_diagnostic
from valleyqm.spectrum import eigenvalues_lowest
from valleyqm.valley import (
    jacobian_endpoints,
    jacobian_profile,
    solve_valley_instanton,
    tail_exponents,
    trace_valley,
)

CASE_A_THINNED = sorted({Fraction(k) for k in range(11)} |
                        {Fraction(p) for p in ("2/5", "13/5", "21/5", "29/5", "37/5", "49/5")})


@pytest.mark.slow
def test_criterion_1_exact_zeros(series_cache):
    cases = [(1, 0), (2, 0), (2, 1)]
    nonzero = {}
    for eps, N in cases:
        s = cached_series(eps, N, "minus", 200, cache_dir=series_cache)
        nonzero[(eps, N)] = sum(1 for c in s.coeffs[1:] if c != 0)
    ok = not any(nonzero.values()) and all(
        cached_series(e, n, "minus", 200, cache_dir=series_cache).M == 200 for e, n in cases)
    record_acceptance(1, ok, "nonzero E_m (m>=1) per (eps, N): " + str(nonzero))
    assert ok


@pytest.mark.slow
def test_criterion_2_ratio_law(series_cache):
    results = []
    for eps, N, tol in ((Fraction(1, 2), 0, 1e-3), (Fraction(5, 2), 0, 1e-3), (Fraction(5, 2), 3, 1e-2)):
        fit = ratio_diagnostic(cached_series(eps, N, "minus", 200, cache_dir=series_cache), (150, 200))
        expected = -float(eps) + 2 * N
        rel = abs(fit.c_hat / expected - 1)
        results.append((f"eps={eps} N={N}", fit.c_hat, rel, rel <= tol))
    ok = all(r[3] for r in results)
    record_acceptance(2, ok, "; ".join(f"{n}: c={c:.6f} rel={r:.1e}" for n, c, r, _ in results))
    assert ok


@pytest.mark.slow
def test_criterion_3_prefactor_extraction(series_cache):
    worst, bad = 0.0, []
    floor_max = 0.0
    for eps in CASE_A_THINNED:
        est = extract_A(cached_series(eps, 0, "minus", 200, cache_dir=series_cache))
        if predicted_A(eps, 0, "minus") == 0:
            floor_max = max(floor_max, float(abs(est.value)))
            if not est.below_noise_floor():
                bad.append(str(eps))
        else:
            rel = float(est.rel_error)
            worst = max(worst, rel)
            if rel > 5e-3:
                bad.append(str(eps))
    big = extract_A(cached_series(20, 0, "plus", 200, cache_dir=series_cache))
    rel20 = float(big.rel_error)
    ok = not bad and rel20 <= 0.15
    record_acceptance(3, ok, f"max rel err {worst:.2e} (<=5e-3); |A| at Gamma poles <= {floor_max:.1e}; "
                             f"eps=20 plus rel err {rel20:.3f} (<=0.15); failing: {bad or 'none'}")
    assert ok


def test_criterion_4_root_versus_formula():
    eps = "2/5"
    consts = {"minus": [], "plus": []}
    for g2 in ("0.05", "0.025"):
        p = ModelParams.from_g2(g2, epsilon=eps, precision=50)
        with mpmath.workdps(50):
            a4 = alpha(p) ** 4
            for r in find_np_levels(p, s_window=(-0.5, 0.5)):
                side = r.label.split()[0]
                s_formula = np_level(eps, 0, side, p).energy - mpmath.mpf(1) / 2
                consts[side].append(float(abs(r.s - s_formula) / a4))
    spread = {k: max(v) / min(v) for k, v in consts.items()}
    ok = all(len(v) == 2 for v in consts.values()) and all(x <= 2 for x in spread.values())
    record_acceptance(4, ok, "C(g2=0.05, 0.025): " + "; ".join(
        f"seed {k}: {v[0]:.4g}, {v[1]:.4g} (ratio {spread[k]:.2f}, need <=2)" for k, v in consts.items()))
    assert ok


def test_criterion_5_dispersion_bridge():
    b1 = large_order_bridge(0, 0, "plus", 50)
    w1 = predicted_A(0, 0, "plus") * mpmath.mpf(3) ** 50 * mpmath.gamma(51)
    b2 = large_order_bridge("2/5", 0, "minus", 100)
    w2 = predicted_coefficient("2/5", 0, "minus", 100)
    r1, r2 = float(abs(b1 / w1 - 1)), float(abs(b2 / w2 - 1))
    ok = r1 <= 0.01 and r2 <= 0.02
    record_acceptance(5, ok, f"rel err {r1:.1e} (<=1e-2), {r2:.1e} (<=2e-2)")
    assert ok


def test_criterion_6_degenerate_splitting():
    p = ModelParams.from_g2("0.04")
    res = eigenvalues_lowest(p, k=2, tolerance=1e-14)
    ratio = res.gap() / float(2 * alpha(p))
    ok = abs(ratio - 1) <= 0.15
    record_acceptance(6, ok, f"dE/(2 alpha) = {ratio:.4f}, need within 0.15 of 1 "
                             f"(one-loop prediction 1 - 71/12 g^2 = {1 - 71 / 12 * 0.04:.4f})")
    assert ok


def test_criterion_7_level_shift_ratio():
    eps = Fraction(2)
    ratios = {0: [], 1: []}
    for g2 in (0.08, 0.05, 0.03):
        p = ModelParams.from_g2(g2, epsilon=eps)
        res = eigenvalues_lowest(p, k=3, tolerance=1e-12)
        for N in ratios:
            d_num = res.eigenvalues[N] - (N + 0.5 - 2)
            d_val = float(mpmath.re(np_level(eps, N, "minus", p).shift))
            ratios[N].append(d_num / d_val)
    ok = True
    for r in ratios.values():
        dev = [abs(x - 1) for x in r]
        ok &= all(b < a for a, b in zip(dev, dev[1:])) and dev[-1] <= 0.20
    record_acceptance(7, ok, "; ".join(f"level {N}: " + ", ".join(f"{x:.4f}" for x in r)
                                       for N, r in ratios.items()))
    assert ok


@pytest.fixture(scope="module")
def valley_trace():
    return trace_valley()


def test_criterion_8_valley_asymptotics(valley_trace):
    R, S = valley_trace.R, valley_trace.S
    mask = (R >= 5) & (R <= 10)
    dev_large = float(np.max(np.abs(S[mask] - (1 / 3 - 2 * np.exp(-R[mask])))))
    dev_small = float(np.max(np.abs(S[:3] / (R[:3] ** 2 / 2) - 1)))
    f0, f1 = jacobian_endpoints(jacobian_profile(valley_trace))
    e0, e1 = abs(f0 * 3 - 1), abs(f1 / np.sqrt(2 / 3) - 1)
    ok = mask.sum() > 0 and dev_large <= 1e-3 and dev_small <= 0.05 and e0 <= 0.02 and e1 <= 0.02
    record_acceptance(8, ok, f"large-R dev {dev_large:.1e} (<=1e-3), small-R rel dev {dev_small:.1e} (<=5e-2), "
                             f"f(0)={f0:.4f}, f(1/3)={f1:.4f} (rel {e0:.1e}, {e1:.1e}; <=2e-2)")
    assert ok


def test_criterion_9_valley_instanton():
    eta = 0.01
    g = 0.1
    wl, wr = tail_exponents(solve_valley_instanton(ModelParams(g=g, epsilon=eta / g**2)))
    el, er = abs(wl / (1 - 3 * eta) - 1), abs(wr / (1 + 3 * eta) - 1)
    kink = solve_valley_instanton(ModelParams(g=1.0))
    ek = abs(kink.action - 1 / 6)
    ok = el <= 0.01 and er <= 0.01 and ek <= 1e-4
    record_acceptance(9, ok, f"tails {wl:.5f}, {wr:.5f} (rel {el:.1e}, {er:.1e}; <=1e-2); "
                             f"g^2 S = {kink.action:.8f} (|dev| {ek:.1e} <=1e-4)")
    assert ok
