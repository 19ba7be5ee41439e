"""Asymmetric double-well potential V(q) = q^2 (1 - g q)^2 / 2 - eps g q.

Everything here is a pure function of :class:`ModelParams`.  Float work is
done with mpmath at ``params.precision`` decimal digits; series work uses
exact :class:`fractions.Fraction` arithmetic.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field
from fractions import Fraction
from numbers import Rational

import mpmath

from .errors import DegeneratePotential, NonRationalEpsilon

DEFAULT_PRECISION = int(os.environ.get("VALLEY_PRECISION", "50"))

# largest eps*g^2 for which the cubic x(1-x)(1-2x) = eps*g^2 has three real roots
TWO_WELL_BOUND = mpmath.sqrt(3) / 18


def as_fraction(value) -> Fraction:
    """Convert an int, Fraction, decimal string or float to an exact Fraction.

    Floats go through their shortest repr, so ``0.4`` becomes ``2/5``.
    mpmath numbers and anything else raise :class:`NonRationalEpsilon`.
    """
    if isinstance(value, bool):
        raise NonRationalEpsilon(f"not a rational asymmetry: {value!r}")
    if isinstance(value, Fraction):
        return value
    if isinstance(value, Rational):
        return Fraction(int(value.numerator), int(value.denominator))
    if isinstance(value, float):
        return Fraction(repr(value))
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except ValueError as exc:
            raise NonRationalEpsilon(f"cannot parse {value!r} as a rational") from exc
    raise NonRationalEpsilon(f"not a rational asymmetry: {value!r}")


def to_mpf(x):
    """Exact-as-possible conversion of Fraction/str/float/int/mpq to an mpf."""
    if isinstance(x, Fraction):
        return mpmath.mpf(x.numerator) / x.denominator
    if isinstance(x, str):
        return to_mpf(as_fraction(x))
    if isinstance(x, float):
        return mpmath.mpf(repr(x))
    if hasattr(x, "numerator") and hasattr(x, "denominator") and not isinstance(x, int):
        return mpmath.mpf(int(x.numerator)) / int(x.denominator)
    return mpmath.mpf(x)


@dataclass(frozen=True)
class ModelParams:
    """Coupling, asymmetry and numeric settings shared by every module."""

    g: float
    epsilon: object = 0
    precision: int = DEFAULT_PRECISION
    exact_mode: bool = True

    def __post_init__(self):
        if not self.g > 0:
            raise ValueError(f"coupling g must be positive, got {self.g!r}")
        if to_mpf(self.epsilon) < 0:
            raise ValueError(f"asymmetry must be non-negative, got {self.epsilon!r}")
        if self.precision < 1:
            raise ValueError("precision must be a positive number of digits")

    @classmethod
    def from_g2(cls, g2, epsilon=0, **kwargs) -> "ModelParams":
        with mpmath.workdps(kwargs.get("precision", DEFAULT_PRECISION) + 10):
            g = mpmath.sqrt(mpmath.mpf(g2))
        return cls(g=g, epsilon=epsilon, **kwargs)

    def g_mpf(self):
        # floats go through repr so g=0.4 means the decimal 0.4 at full precision
        if isinstance(self.g, float):
            return mpmath.mpf(repr(self.g))
        return mpmath.mpf(self.g)

    @property
    def g2(self):
        return self.g_mpf() ** 2

    def eps_mpf(self):
        return to_mpf(self.epsilon)


@dataclass(frozen=True)
class WellLocation:
    side: str  # "left" or "right"
    q_star: object
    omega: object
    depth: object
    q_star_series: list = field(default_factory=list)


def two_wells(params: ModelParams) -> bool:
    with mpmath.workdps(params.precision):
        return params.eps_mpf() * params.g2 < TWO_WELL_BOUND


def potential(params: ModelParams, q):
    with mpmath.workdps(params.precision):
        g = params.g_mpf()
        q = mpmath.mpf(q)
        eps = params.eps_mpf()
        return q * q * (1 - g * q) ** 2 / 2 - eps * g * q


def potential_deriv(params: ModelParams, q, k: int):
    """k-th derivative of V at q, k in 1..4."""
    if k not in (1, 2, 3, 4):
        raise ValueError(f"derivative order must be 1..4, got {k!r}")
    with mpmath.workdps(params.precision):
        g = params.g_mpf()
        q = mpmath.mpf(q)
        if k == 1:
            return q * (1 - g * q) * (1 - 2 * g * q) - params.eps_mpf() * g
        if k == 2:
            return 1 - 6 * g * q + 6 * g * g * q * q
        if k == 3:
            return -6 * g + 12 * g * g * q
        return 12 * g * g


def _cubic_root(c, lo, hi):
    # root of x(1-x)(1-2x) = c in [lo, hi]; bisection to a tight bracket, then Newton
    f = lambda x: x * (1 - x) * (1 - 2 * x) - c
    df = lambda x: 1 - 6 * x + 6 * x * x
    flo = f(lo)
    tol = mpmath.mpf(10) ** (-(mpmath.mp.dps // 2))
    while hi - lo > tol:
        mid = (lo + hi) / 2
        fm = f(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    x = (lo + hi) / 2
    for _ in range(8):
        step = f(x) / df(x)
        x -= step
        if abs(step) <= abs(x) * mpmath.eps * 4:
            break
    return x


def find_minima(params: ModelParams) -> tuple[WellLocation, WellLocation]:
    """Locate both wells; raises DegeneratePotential past eps g^2 = sqrt(3)/18."""
    if not two_wells(params):
        raise DegeneratePotential(
            f"eps*g^2 = {params.eps_mpf() * params.g2} >= sqrt(3)/18: no second minimum"
        )
    with mpmath.workdps(params.precision + 10):
        g = params.g_mpf()
        c = params.eps_mpf() * g * g
        # in x = g q the left root lies below the local max of the cubic, the right one above 1
        x_peak = (3 - mpmath.sqrt(3)) / 6
        xl = mpmath.mpf(0) if c == 0 else _cubic_root(c, mpmath.mpf(0), x_peak)
        xr = mpmath.mpf(1) if c == 0 else _cubic_root(c, mpmath.mpf(1), mpmath.mpf(2))
        wells = []
        for side, x in (("left", xl), ("right", xr)):
            q = x / g
            series = []
            if params.exact_mode:
                try:
                    series = well_position_series(params, side, 7)
                except NonRationalEpsilon:
                    series = []
            wells.append(
                WellLocation(
                    side=side,
                    q_star=q,
                    omega=mpmath.sqrt(potential_deriv(params, q, 2)),
                    depth=potential(params, q),
                    q_star_series=series,
                )
            )
    with mpmath.workdps(params.precision):
        wells = [
            WellLocation(w.side, +w.q_star, +w.omega, +w.depth, w.q_star_series) for w in wells
        ]
    return wells[0], wells[1]


def _mul(a, b, n):
    out = [Fraction(0)] * (n + 1)
    for i, ai in enumerate(a[: n + 1]):
        if ai:
            for j, bj in enumerate(b[: n + 1 - i]):
                out[i + j] += ai * bj
    return out


def well_position_series(params: ModelParams, side: str, order: int) -> list[Fraction]:
    """Exact coefficients of the well position as a power series in g.

    For the left well the list ``c`` satisfies ``q* = sum c[k] g^k``.  The right
    well sits at ``1/g + O(g)``; its pole is kept out of the list, so there
    ``q* = 1/g + sum c[k] g^k``.
    """
    if side not in ("left", "right"):
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    eps = as_fraction(params.epsilon)
    # work in x = g q and u = g^2: left solves x = eps u + 3x^2 - 2x^3,
    # right (x = 1 + d) solves d = eps u - 3d^2 - 2d^3
    n_u = order // 2 + 1
    sign = 1 if side == "left" else -1
    x = [Fraction(0)] * (n_u + 1)
    for _ in range(n_u):
        x2 = _mul(x, x, n_u)
        x3 = _mul(x2, x, n_u)
        new = [3 * sign * a - 2 * b for a, b in zip(x2, x3)]
        new[1] += eps
        x = new
    # q - (pole) = x/g: u^j / g = g^(2j-1)
    coeffs = [Fraction(0)] * (order + 1)
    for j in range(1, n_u + 1):
        k = 2 * j - 1
        if k <= order:
            coeffs[k] = x[j]
    return coeffs
