"""Numerical spectrum of H = p^2/2 + V(q) in a harmonic-oscillator basis.

The position operator is ``q = center + (a + a^dag) / sqrt(2 scale)``.  Since V
is quartic, H is banded with half-bandwidth 4.  Matrix elements are built in a
basis four states larger than requested and then truncated, so the truncated
matrix is an exact Rayleigh-Ritz projection and eigenvalues can only decrease
as the basis grows.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
from scipy.linalg import eig_banded

from .errors import DegeneratePotential, NotConverged
from .model import ModelParams, find_minima, potential, potential_deriv

BANDWIDTH = 4
DEFAULT_START = 64
DEFAULT_CAP = 2048


@dataclass
class SpectrumResult:
    params: ModelParams
    basis_size: int
    center: float
    scale: float
    eigenvalues: list
    convergence: list = field(default_factory=list)

    def gap(self, i: int = 0, j: int = 1):
        return self.eigenvalues[j] - self.eigenvalues[i]


# --- banded arithmetic ----------------------------------------------------
# A band matrix is a dict offset -> length-n vector with D[o][i] = M[i, i + o]
# (zero where i + o falls outside the matrix).  Works for float and mpf entries.

def _band_mul(A: dict, B: dict, n: int, zero) -> dict:
    out = {}
    for o1, a in A.items():
        for o2, b in B.items():
            o = o1 + o2
            c = out.setdefault(o, np.full(n, zero, dtype=a.dtype))
            # C[i, i+o] += A[i, i+o1] * B[i+o1, i+o]
            lo, hi = max(0, -o1), min(n, n - o1)
            c[lo:hi] = c[lo:hi] + a[lo:hi] * b[lo + o1:hi + o1]
    return out


def _band_add(A: dict, B: dict, scale=1) -> dict:
    out = dict(A)
    for o, b in B.items():
        out[o] = out[o] + scale * b if o in out else scale * b
    return out


def _ladder_y(n: int, dtype, sqrt) -> dict:
    # Y = a + a^dag in the normalized basis: <i|Y|i+1> = sqrt(i+1)
    up = np.array([sqrt(i + 1) for i in range(n - 1)] + [0], dtype=dtype)
    down = np.array([0] + [sqrt(i) for i in range(1, n)], dtype=dtype)
    return {1: up, -1: down}


def _hamiltonian_bands(params: ModelParams, n: int, center, scale, mp: bool) -> dict:
    """Lower bands ``{d: H[i+d, i]}`` for d = 0..4 of the n x n truncated Hamiltonian."""
    m = n + BANDWIDTH
    if mp:
        dtype, sqrt, conv = object, mpmath.sqrt, mpmath.mpf
        zero = mpmath.mpf(0)
    else:
        dtype, sqrt, conv = float, np.sqrt, float
        zero = 0.0
    center_mp = mpmath.mpf(center)
    scale_mp = mpmath.mpf(scale)
    # Taylor coefficients of V about the center, in powers of Y = sqrt(2 scale) (q - center)
    coeffs = [potential(params, center_mp)]
    fact = 1
    for k in range(1, 5):
        fact *= k
        coeffs.append(potential_deriv(params, center_mp, k) / fact / (2 * scale_mp) ** (mpmath.mpf(k) / 2))
    coeffs = [conv(c) for c in coeffs]
    s = conv(scale_mp)

    Y = _ladder_y(m, dtype, sqrt)
    number = np.array([conv(i) for i in range(m)], dtype=dtype)
    H = {0: np.full(m, coeffs[0], dtype=dtype)}
    power = Y
    for k in range(1, 5):
        if k > 1:
            power = _band_mul(power, Y, m, zero)
        H = _band_add(H, power, coeffs[k])
        if k == 2:
            Y2 = power
    # p^2/2 = -(scale/4)(a^dag - a)^2 = -(scale/4) Y^2 + (scale/2)(2 n + 1)
    H = _band_add(H, Y2, -s / 4)
    H[0] = H[0] + (s / 2) * (2 * number + 1)
    bands = {}
    for d in range(BANDWIDTH + 1):
        # H[i+d, i] is stored at offset -d, index i+d
        bands[d] = H.get(-d, np.full(m, zero, dtype=dtype))[d:d + n - d]
    return bands


def default_center(params: ModelParams):
    """Midpoint of the two wells, or of q = 0 and q = 1/g once the right well has gone."""
    try:
        left, right = find_minima(params)
    except DegeneratePotential:
        return 1 / (2 * params.g_mpf())
    return (left.q_star + right.q_star) / 2


def build_hamiltonian(params: ModelParams, basis_size: int, center=None, scale=1.0) -> np.ndarray:
    """Dense symmetric matrix <i|H|j> in the oscillator basis (float64).

    Args:
        params: model parameters.
        basis_size: number of oscillator states, at least 4.
        center: expansion point of the position operator, default midway between the wells.
        scale: basis frequency.
    """
    if basis_size < 4:
        raise ValueError(f"basis_size must be at least 4, got {basis_size}")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale!r}")
    if center is None:
        center = default_center(params)
    bands = _hamiltonian_bands(params, basis_size, center, scale, mp=False)
    H = np.zeros((basis_size, basis_size))
    for d, v in bands.items():
        idx = np.arange(basis_size - d)
        H[idx + d, idx] = v
        H[idx, idx + d] = v
    return H


def _lowest_float(params, n, k, center, scale):
    bands = _hamiltonian_bands(params, n, center, scale, mp=False)
    ab = np.zeros((BANDWIDTH + 1, n))
    for d, v in bands.items():
        ab[d, : n - d] = v
    w = eig_banded(ab, lower=True, select="i", select_range=(0, k - 1), eigvals_only=True)
    return [float(x) for x in w]


def _count_below(bands, n, lam) -> int:
    """Number of eigenvalues below lam (Sylvester inertia of a banded LDL^T)."""
    # dense-in-band Gaussian elimination without pivoting on H - lam
    b = BANDWIDTH
    rows = [[bands[d][j] if d < n - j else 0 for d in range(b + 1)] for j in range(n)]
    # work[j][d] = current value of entry (j+d, j)
    work = [list(r) for r in rows]
    for j in range(n):
        work[j][0] -= lam
    count = 0
    tiny = mpmath.mpf(10) ** (-(mpmath.mp.dps + 20))
    for j in range(n):
        piv = work[j][0]
        if piv == 0:
            piv = tiny
        if piv < 0:
            count += 1
        col = work[j]
        for d1 in range(1, b + 1):
            if j + d1 >= n or col[d1] == 0:
                continue
            f = col[d1] / piv
            r = work[j + d1]
            # entry (j+d1+e, j+d1) -= f * entry(j+d1+e, j) for e >= 0
            for e in range(0, b + 1 - d1):
                if j + d1 + e < n:
                    r[e] -= f * col[d1 + e]
    return count


def _refine(params, n, k, center, scale, guesses, precision):
    """Bisection on the inertia count, bracketed around double-precision guesses."""
    with mpmath.workdps(precision + 10):
        bands = _hamiltonian_bands(params, n, center, scale, mp=True)
        out = []
        target = mpmath.mpf(10) ** (-precision)
        for i, g in enumerate(guesses):
            g = mpmath.mpf(g)
            width = mpmath.mpf("1e-9") * max(1, abs(g))
            lo, hi = g - width, g + width
            while _count_below(bands, n, lo) > i:
                lo -= width
                width *= 4
            while _count_below(bands, n, hi) < i + 1:
                hi += width
                width *= 4
            while hi - lo > target * max(1, abs(g)):
                mid = (lo + hi) / 2
                if _count_below(bands, n, mid) > i:
                    hi = mid
                else:
                    lo = mid
            out.append((lo + hi) / 2)
    return out


def eigenvalues_lowest(source, k: int = 2, tolerance: float = 1e-10, *, center=None, scale=1.0,
                       start: int = DEFAULT_START, cap: int = DEFAULT_CAP,
                       extended: bool = False) -> SpectrumResult:
    """Lowest k eigenvalues, certified by doubling the basis until they stop moving.

    Args:
        source: a :class:`ModelParams`; the Hamiltonian is rebuilt at each basis size.
        k: number of eigenvalues.
        tolerance: largest allowed change of any eigenvalue under the last doubling.
        center, scale: oscillator basis; center defaults to the midpoint of the wells.
        start, cap: first and largest basis size.
        extended: refine with mpmath at ``source.precision`` digits (slow; for
            splittings below double precision).

    Raises:
        NotConverged: the cap was reached; the last two estimates are attached.
    """
    params = source
    if not isinstance(params, ModelParams):
        raise TypeError("eigenvalues_lowest expects ModelParams")
    if k < 1 or 2 * k > start:
        raise ValueError(f"k={k} must be positive and well below the basis size {start}")
    if center is None:
        center = default_center(params)
    center_f = float(center)

    def solve(n):
        vals = _lowest_float(params, n, k, center, scale)
        if extended:
            vals = _refine(params, n, k, center, scale, vals, params.precision)
        return vals

    n = start
    prev = solve(n)
    while True:
        if 2 * n > cap:
            raise NotConverged(f"eigenvalues not converged at basis size {n} (cap {cap})",
                               previous=None, current=prev)
        cur = solve(2 * n)
        n *= 2
        change = [abs(c - p) for c, p in zip(cur, prev)]
        if max(change) < tolerance:
            return SpectrumResult(params=params, basis_size=n, center=center_f, scale=float(scale),
                                  eigenvalues=cur, convergence=change)
        if 2 * n > cap:
            raise NotConverged(f"eigenvalues not converged at basis size {n} (cap {cap})",
                               previous=prev, current=cur)
        prev = cur


def delta_E(params: ModelParams, level_index: int, zeroth, tolerance: float = 1e-10, **kwargs):
    """Numerical level minus a reference (zeroth-order) energy."""
    res = eigenvalues_lowest(params, max(2, level_index + 1), tolerance, **kwargs)
    return res.eigenvalues[level_index] - zeroth


def write_spectrum_csv(results, path) -> Path:
    """Rows (g2, level, E, convergence) for a list of SpectrumResult."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["g2", "level", "E", "convergence"])
        for r in results:
            g2 = mpmath.nstr(r.params.g2, 15)
            for i, (e, c) in enumerate(zip(r.eigenvalues, r.convergence)):
                w.writerow([g2, i, mpmath.nstr(mpmath.mpf(e), 17), f"{float(c):.3e}"])
    return path
