"""High-order perturbative energies about each well and their large-order law.

The recursion works in the unnormalized oscillator basis |k) = (a^+)^k |0),
where a|k) = k|k-1) and a^+|k) = |k+1), so every matrix element of the
position operator is an integer.  Expanding about the eps = 0 minimum of a
well, the Hamiltonian is H0 + W with

    W = h (s Y^3 / 2 - eps Y) + h^2 Y^4 / 4,    Y = a + a^+,   g = sqrt(2) h,

with s = -1 for the left well and s = +1 for the right one (which also picks
up the constant -eps).  The energy is even in g, so the h^(2m) coefficient
divided by 2^m is the g^(2m) coefficient.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import gmpy2
import mpmath
import numpy as np

from .errors import CapExceeded, PrecisionLoss
from .model import as_fraction, to_mpf

DEFAULT_CAP = 250
DEFAULT_WINDOW = (150, 200)
# |A| extracted where the leading large-order term is absent (A = 0 at integer eps
# on the minus side).  Non-integer points of the scenario grids have |A| > 1e-4.
A_NOISE_FLOOR = 1e-20

_SIDES = {
    "plus": "plus", "+": "plus", "left": "plus",
    "minus": "minus", "-": "minus", "right": "minus",
}


def normalize_side(side: str) -> str:
    try:
        return _SIDES[side]
    except KeyError:
        raise ValueError(f"unknown side {side!r}; use 'plus'/'left' or 'minus'/'right'") from None


def side_sign(side: str) -> int:
    return 1 if normalize_side(side) == "plus" else -1


@dataclass(frozen=True)
class PerturbativeSeries:
    """Coefficients E_0..E_M of E(g^2) = sum E_m g^(2m) for one level."""

    epsilon: object
    N: int
    side: str
    coeffs: tuple
    exact: bool = True

    @property
    def M(self) -> int:
        return len(self.coeffs) - 1

    @property
    def gamma_shift(self):
        """b = +-eps + 2N, the shift in Gamma(b + m + 1)."""
        return side_sign(self.side) * to_mpf(self.epsilon) + 2 * self.N

    def evaluate(self, g2, order=None):
        order = self.M if order is None else order
        g2 = mpmath.mpf(g2)
        return mpmath.fsum(to_mpf(c) * g2**m for m, c in enumerate(self.coeffs[: order + 1]))

    def optimal_truncation(self, g2):
        """Sum up to the smallest term; returns (value, smallest omitted term)."""
        g2 = mpmath.mpf(g2)
        terms = [to_mpf(c) * g2**m for m, c in enumerate(self.coeffs)]
        best = min(range(1, len(terms)), key=lambda m: abs(terms[m]) if terms[m] else mpmath.inf)
        if all(t == 0 for t in terms[1:]):
            return terms[0], mpmath.mpf(0)
        return mpmath.fsum(terms[:best]), abs(terms[best])


@dataclass
class LargeOrderModel:
    A: object
    b: object
    scale: int = 3

    def coefficient(self, m):
        return self.A * mpmath.mpf(self.scale) ** m * mpmath.gamma(self.b + m + 1)


# --- the recursion --------------------------------------------------------

def _apply_y(v, parity, zero):
    """Y = a + a^+ on a vector holding only levels k = parity + 2i."""
    n = len(v)
    if parity == 0:
        # k = 2i: raise to 2i+1 (index i), lower to 2i-1 (index i-1) with weight 2i
        out = v.copy()
        if n > 1:
            out[: n - 1] += _weights(n, 0)[1:] * v[1:]
        return out, 1
    # k = 2i+1: raise to 2i+2 (index i+1), lower to 2i (index i) with weight 2i+1
    out = np.empty(n + 1, dtype=object)
    out[0] = zero
    out[1:] = v
    out[:n] += _weights(n, 1) * v
    return out, 0


_WEIGHT_CACHE: dict = {}


def _weights(n, parity):
    key = (n, parity)
    w = _WEIGHT_CACHE.get(key)
    if w is None:
        w = np.array([2 * i + parity for i in range(n)], dtype=object)
        _WEIGHT_CACHE[key] = w
    return w


def _add_into(acc, v, scale=None):
    # acc and v share parity; lengths may differ
    if len(v) > len(acc):
        grown = np.empty(len(v), dtype=object)
        grown[: len(acc)] = acc
        grown[len(acc):] = acc[0] * 0 if len(acc) else v[0] * 0
        acc = grown
    if scale is None:
        acc[: len(v)] += v
    else:
        acc[: len(v)] += scale * v
    return acc


def _bender_wu(eps, N, sign, n_max, one, zero):
    """Energy coefficients e_0..e_{n_max} in powers of h (exact if ``one`` is mpq)."""
    half = one / 2
    quarter = one / 4
    c3 = -sign * half  # left well (sign=+1) carries -g y^3
    # vectors are stored per parity; psi_n lives on levels k = N + n (mod 2)
    psi = []
    e = [zero] * (n_max + 1)
    base_par = N % 2
    v0 = np.empty(N // 2 + 1, dtype=object)
    v0[:] = zero
    v0[N // 2] = one
    psi.append(v0)
    for n in range(1, n_max + 1):
        par = (N + n) % 2
        # W1 psi_{n-1}
        p1 = psi[n - 1]
        y1, _ = _apply_y(p1, 1 - par, zero)
        y2, _ = _apply_y(y1, par, zero)
        y3, _ = _apply_y(y2, 1 - par, zero)
        R = c3 * y3
        R = _add_into(R, y1, -eps) if eps else R
        if n >= 2:
            y = psi[n - 2]
            p = par
            for _ in range(4):
                y, p = _apply_y(y, p, zero)
            R = _add_into(R, y, quarter)
        idx_N = N // 2
        if par == base_par:
            e[n] = R[idx_N] if idx_N < len(R) else zero
        # odd n: R has the wrong parity to touch level N, so e_n = 0 identically
        if n == n_max:
            break
        # only levels still able to reach N in the remaining orders matter
        k_max = N + 3 * (n_max - n)
        keep = (k_max - par) // 2 + 1
        rhs = -R[:keep]
        for j in range(2, n, 2):
            if e[j]:
                rhs = _add_into(rhs, psi[n - j][:keep], e[j])
        inv = np.empty(len(rhs), dtype=object)
        for i in range(len(rhs)):
            d = par + 2 * i - N
            inv[i] = zero if d == 0 else one / d
        psi.append(rhs * inv)
    return e


def compute_series(epsilon, N: int, side: str, M: int, *, cap: int = DEFAULT_CAP,
                   exact: bool = True, precision: int = 60) -> PerturbativeSeries:
    """Perturbative coefficients of level ``N`` in the ``side`` well to order g^(2M).

    ``side`` is ``plus``/``left`` (free energy N + 1/2) or ``minus``/``right``
    (free energy N + 1/2 - eps).  In exact mode ``epsilon`` must be rational
    and the coefficients come back as Fractions; with ``exact=False`` the same
    recursion runs in mpmath at ``precision`` digits.
    """
    if M > cap:
        raise CapExceeded(f"order {M} exceeds cap {cap}")
    if N < 0 or M < 0:
        raise ValueError("N and M must be non-negative")
    side = normalize_side(side)
    sign = side_sign(side)
    n_max = 2 * M
    if exact:
        eps_q = as_fraction(epsilon)
        eps = gmpy2.mpq(eps_q.numerator, eps_q.denominator)
        e = _bender_wu(eps, N, sign, n_max, gmpy2.mpq(1), gmpy2.mpq(0))
        e0 = Fraction(2 * N + 1, 2) - (eps_q if side == "minus" else 0)
        coeffs = [e0] + [
            Fraction(int(e[2 * m].numerator), int(e[2 * m].denominator) * 2**m)
            for m in range(1, M + 1)
        ]
        return PerturbativeSeries(eps_q, N, side, tuple(coeffs), exact=True)
    with mpmath.workdps(precision):
        eps = to_mpf(epsilon)
        e = _bender_wu(eps, N, sign, n_max, mpmath.mpf(1), mpmath.mpf(0))
        e0 = mpmath.mpf(2 * N + 1) / 2 - (eps if side == "minus" else 0)
        coeffs = [e0] + [e[2 * m] / mpmath.mpf(2) ** m for m in range(1, M + 1)]
    return PerturbativeSeries(eps, N, side, tuple(coeffs), exact=False)


# --- large-order law ------------------------------------------------------

def predicted_A(epsilon, N: int, side: str):
    """A = -(3/pi) 6^b / (N! Gamma(+-eps + 1 + N)), exactly 0 on a Gamma pole."""
    s = side_sign(side)
    eps = to_mpf(epsilon)
    b = s * eps + 2 * N
    return -3 / mpmath.pi * mpmath.mpf(6) ** b * mpmath.rgamma(N + 1) * mpmath.rgamma(s * eps + 1 + N)


def predicted_coefficient(epsilon, N: int, side: str, m: int):
    """Leading large-order term A 3^m Gamma(+-eps + 2N + m + 1)."""
    if m < 1:
        raise ValueError("m must be >= 1")
    A = predicted_A(epsilon, N, side)
    if A == 0:
        return mpmath.mpf(0)
    b = side_sign(side) * to_mpf(epsilon) + 2 * N
    return A * mpmath.mpf(3) ** m * mpmath.gamma(b + m + 1)


def large_order_model(epsilon, N: int, side: str) -> LargeOrderModel:
    b = side_sign(side) * to_mpf(epsilon) + 2 * N
    return LargeOrderModel(A=predicted_A(epsilon, N, side), b=b)


@dataclass
class RatioFit:
    """Result of fitting r_m / 3 - m = c + d/m + e/m^2 over a window."""

    applicable: bool
    c_hat: float = math.nan
    expected: float = math.nan
    params: tuple = ()
    residuals: list = field(default_factory=list)
    window: tuple = DEFAULT_WINDOW
    reason: str = ""

    @property
    def rel_error(self):
        if not self.applicable:
            return math.nan
        if self.expected == 0:
            return abs(self.c_hat)
        return abs(self.c_hat / self.expected - 1)


def _check_window(series, window):
    lo, hi = window
    if hi > series.M:
        raise ValueError(f"window end {hi} beyond series order {series.M}")
    if hi - lo < 10:
        raise ValueError("window must span at least 10 orders")
    if lo < 2:
        raise ValueError("window must start at m >= 2")


def ratio_diagnostic(series: PerturbativeSeries, window=DEFAULT_WINDOW, n_corrections: int = 2) -> RatioFit:
    """Fit the coefficient ratios E_m/E_(m-1) = 3(m + c) over ``window``.

    The Gamma-ratio of A 3^m Gamma(b + m + 1) gives c = b = +-eps + 2N exactly;
    the unknown 1/m corrections of the coefficients enter r_m/3 - m as powers
    of 1/m, which are fitted alongside c (``n_corrections`` of them).
    """
    _check_window(series, window)
    lo, hi = window
    coeffs = series.coeffs
    if any(coeffs[m] == 0 for m in range(lo - 1, hi + 1)):
        return RatioFit(applicable=False, window=tuple(window), reason="zero coefficient in window")
    if predicted_A(series.epsilon, series.N, series.side) == 0:
        return RatioFit(applicable=False, window=tuple(window),
                        reason="leading large-order term vanishes (A = 0)")
    ms = np.arange(lo, hi + 1)
    c_m = np.array([float(Fraction(coeffs[m]) / Fraction(coeffs[m - 1]) / 3 - m) if series.exact
                    else float(coeffs[m] / coeffs[m - 1] / 3 - m) for m in ms])
    design = np.column_stack([np.ones_like(ms, dtype=float)] +
                             [1.0 / ms.astype(float) ** k for k in range(1, n_corrections + 1)])
    sol, *_ = np.linalg.lstsq(design, c_m, rcond=None)
    resid = c_m - design @ sol
    return RatioFit(
        applicable=True,
        c_hat=float(sol[0]),
        expected=float(series.gamma_shift),
        params=tuple(float(x) for x in sol),
        residuals=[float(r) for r in resid],
        window=tuple(window),
    )


@dataclass
class AEstimate:
    """Richardson-extrapolated prefactor with the spread of the top two orders."""

    value: object
    error: object
    orders: list
    predicted: object
    digits: int

    @property
    def rel_error(self):
        if self.predicted == 0:
            return mpmath.inf if self.value != 0 else mpmath.mpf(0)
        return abs(self.value / self.predicted - 1)

    def below_noise_floor(self, floor=A_NOISE_FLOOR) -> bool:
        return abs(self.value) < floor


def required_digits(m_hi: int) -> int:
    return int(math.ceil(m_hi * math.log10(3 * m_hi))) + 50


def _richardson(values, xs, order):
    # Neville extrapolation to x = 0 of a degree-`order` polynomial through the last order+1 points
    xs = list(xs)[-(order + 1):]
    ys = list(values)[-(order + 1):]
    n = len(xs)
    for level in range(1, n):
        ys = [(xs[i + level] * ys[i] - xs[i] * ys[i + 1]) / (xs[i + level] - xs[i])
              for i in range(n - level)]
    return ys[0]


def extract_A(series: PerturbativeSeries, window=DEFAULT_WINDOW, digits: int | None = None,
              max_order: int = 4, step: int | None = None, variable: str = "gamma") -> AEstimate:
    """Estimate A from a_m = E_m / (3^m Gamma(b + m + 1)) by Richardson extrapolation.

    Args:
        series: exact or high-precision perturbative coefficients.
        window: (lo, hi) orders; the last sample is ``hi``.
        digits: working precision; defaults to :func:`required_digits`.
        max_order: highest polynomial order removed.
        step: spacing between sample orders, default ``(hi - lo) // (3 * max_order)``.
        variable: ``"gamma"`` extrapolates in 1/(m + b), the natural variable of
            the Gamma growth; ``"m"`` uses plain 1/m.

    The error bar is the spread of the last two extrapolation orders.
    """
    _check_window(series, window)
    if variable not in ("gamma", "m"):
        raise ValueError(f"variable must be 'gamma' or 'm', got {variable!r}")
    lo, hi = window
    need = required_digits(hi)
    digits = need if digits is None else digits
    if digits < need:
        raise PrecisionLoss(f"{digits} digits cannot resolve order {hi}; need {need}")
    if step is None:
        step = max(1, (hi - lo) // (3 * max(max_order, 1)))
    if hi - step * max_order < lo:
        raise ValueError(f"window {window} too short for order {max_order} at step {step}")
    with mpmath.workdps(digits):
        b = series.gamma_shift
        ms = [hi - step * k for k in range(max_order, -1, -1)]
        a = [to_mpf(series.coeffs[m]) / (mpmath.mpf(3) ** m * mpmath.gamma(b + m + 1)) for m in ms]
        shift = b if variable == "gamma" else 0
        xs = [1 / (mpmath.mpf(m) + shift) for m in ms]
        orders = [_richardson(a, xs, k) for k in range(max_order + 1)]
        predicted = predicted_A(series.epsilon, series.N, series.side)
        value = orders[-1]
        err = abs(orders[-1] - orders[-2]) if max_order >= 1 else mpmath.mpf(0)
    return AEstimate(value=value, error=err, orders=orders, predicted=predicted, digits=digits)


# --- export ---------------------------------------------------------------

def write_series_csv(series: PerturbativeSeries, path) -> Path:
    """One CSV per level: a ``# {json}`` metadata line, then m,numerator,denominator."""
    if not series.exact:
        raise ValueError("only exact series can be exported as integer pairs")
    path = Path(path)
    eps = Fraction(series.epsilon)
    meta = {
        "epsilon": f"{eps.numerator}/{eps.denominator}",
        "N": series.N,
        "side": series.side,
        "M": series.M,
    }
    with path.open("w", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(["m", "numerator", "denominator"])
        for m, c in enumerate(series.coeffs):
            c = Fraction(c)
            writer.writerow([m, c.numerator, c.denominator])
    return path


def read_series_csv(path) -> PerturbativeSeries:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise ValueError(f"{path}: missing metadata header")
        meta = json.loads(first[2:])
        rows = list(csv.DictReader(fh))
    coeffs = [Fraction(int(r["numerator"]), int(r["denominator"])) for r in rows]
    if [int(r["m"]) for r in rows] != list(range(len(rows))):
        raise ValueError(f"{path}: orders are not contiguous from 0")
    return PerturbativeSeries(Fraction(meta["epsilon"]), int(meta["N"]), meta["side"], tuple(coeffs))


def series_filename(epsilon, N, side) -> str:
    eps = as_fraction(epsilon)
    return f"series_eps{eps.numerator}_{eps.denominator}_N{N}_{normalize_side(side)}.csv"


def cached_series(epsilon, N: int, side: str, M: int, cache_dir=None) -> PerturbativeSeries:
    """compute_series backed by an on-disk CSV cache (exact results only)."""
    if cache_dir is None:
        return compute_series(epsilon, N, side, M)
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / series_filename(epsilon, N, side)
    if path.exists():
        s = read_series_csv(path)
        if s.M >= M:
            return PerturbativeSeries(s.epsilon, s.N, s.side, s.coeffs[: M + 1])
    s = compute_series(epsilon, N, side, M)
    tmp = path.with_suffix(".tmp")
    write_series_csv(s, tmp)
    tmp.replace(path)
    return s
