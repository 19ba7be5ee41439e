"""Non-perturbative levels from the multi-valley-instanton secular function.

Summing dilute valley-instanton pairs gives the secular function

    phi(s) = 1 - alpha^2 (-2/g^2)^(2s + eps) Gamma(-s - eps) Gamma(-s),

whose zeros s_n are the energies shifted by 1/2.  Every complex power and
logarithm of -2/g^2 goes through :class:`BranchedCoupling`, which fixes
arg(-1) = +pi on the physical sheet (theta = 0).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import mpmath

from .errors import DivergentIntegral, IntegerEpsilon, NoConvergence, PoleOfGamma, QuadratureFailure
from .model import ModelParams, to_mpf
from .series import normalize_side, side_sign


@dataclass(frozen=True)
class BranchedCoupling:
    """g^2 = g2_abs * exp(i theta), theta in [0, pi]."""

    g2_abs: object
    theta: object = 0

    def __post_init__(self):
        if not self.g2_abs > 0:
            raise ValueError("|g^2| must be positive")
        if not 0 <= self.theta <= mpmath.pi + 1e-12:
            raise ValueError("theta must lie in [0, pi]")

    def power(self, x):
        """(-2/g^2)^x on this sheet."""
        x = mpmath.mpmathify(x)
        base = mpmath.mpf(2) / mpmath.mpf(self.g2_abs)
        if self.theta == 0:
            # exact phases on the physical sheet: integer x gives a real power
            return base**x * (mpmath.cospi(x) + 1j * mpmath.sinpi(x))
        if self.theta == mpmath.pi:
            return base**x
        return base**x * mpmath.expj(x * (mpmath.pi - self.theta))

    def log(self):
        """ln(-2/g^2) on this sheet."""
        return mpmath.log(mpmath.mpf(2) / mpmath.mpf(self.g2_abs)) + 1j * (mpmath.pi - self.theta)


def physical_branch(params: ModelParams) -> BranchedCoupling:
    return BranchedCoupling(params.g2, 0)


def alpha(params: ModelParams):
    """alpha = exp(-1/(6 g^2)) / (g sqrt(pi))."""
    with mpmath.workdps(params.precision):
        g = params.g_mpf()
        return mpmath.exp(-1 / (6 * g * g)) / (g * mpmath.sqrt(mpmath.pi))


def _near_pole(z, tol):
    # Gamma(z) has poles at z = 0, -1, -2, ...
    n = mpmath.nint(mpmath.re(z))
    return n <= 0 and abs(z - n) < tol


def phi(s, params: ModelParams, branch: BranchedCoupling | None = None):
    """Secular function; raises PoleOfGamma next to a pole of either Gamma factor."""
    branch = branch or physical_branch(params)
    with mpmath.workdps(params.precision):
        s = mpmath.mpmathify(s)
        eps = params.eps_mpf()
        tol = mpmath.mpf(10) ** (-(params.precision // 2))
        if _near_pole(-s, tol) or _near_pole(-s - eps, tol):
            raise PoleOfGamma(f"s = {s} sits on a pole of Gamma(-s) or Gamma(-s-eps)")
        a2 = alpha(params) ** 2
        val = 1 - a2 * branch.power(2 * s + eps) * mpmath.gamma(-s - eps) * mpmath.gamma(-s)
        if branch.theta == mpmath.pi and mpmath.im(s) == 0:
            return mpmath.re(val)
        return val


def secular_regularized(s, params: ModelParams, branch: BranchedCoupling | None = None):
    """phi(s) / (Gamma(-s) Gamma(-s-eps)): entire in s, same zeros away from the poles."""
    branch = branch or physical_branch(params)
    eps = params.eps_mpf()
    a2 = alpha(params) ** 2
    return mpmath.rgamma(-s) * mpmath.rgamma(-s - eps) - a2 * branch.power(2 * s + eps)


def gamma_integral_check(s, params: ModelParams, lower=None):
    """Compare the factorized separation integral with its Gamma closed form at theta = pi.

    Numerically integrates exp((s+eps) R + (2/g^2) e^-R) with g^2 = -|g^2|.
    With ``lower=None`` the range is the whole real line and the closed form is
    (-2/g^2)^(s+eps) Gamma(-s-eps); a finite ``lower`` (e.g. 0) is compared with
    the matching incomplete Gamma function instead.  Returns (numeric, closed_form).
    """
    with mpmath.workdps(params.precision):
        s = mpmath.mpmathify(s)
        eps = params.eps_mpf()
        k = s + eps
        if not (mpmath.re(k) < 0 and mpmath.re(s) < 0):
            raise DivergentIntegral("need Re(s + eps) < 0 and Re(s) < 0 for decay at large R")
        c = 2 / params.g2
        f = lambda R: mpmath.exp(k * R - c * mpmath.exp(-R))
        peak = mpmath.log(c / -mpmath.re(k))
        pts = [peak - 8, peak - 2, peak, peak + 4, peak + 12, mpmath.inf]
        if lower is None:
            # below R = ln(c/4000) the integrand is under exp(-4000): treat as -infinity
            floor = mpmath.log(c / 4000)
            pts = [floor] + [p for p in pts if p > floor]
        else:
            lower = mpmath.mpf(lower)
            pts = [lower] + [p for p in pts if p > lower]
        numeric, err = mpmath.quad(f, pts, error=True)
        if lower is None:
            closed = c**k * mpmath.gamma(-k)
        else:
            # substitute u = c e^-R: c^k * int_0^{c e^-lower} u^(-k-1) e^-u du
            closed = c**k * mpmath.gammainc(-k, 0, c * mpmath.exp(-lower))
        if abs(err) > 1e-6 * abs(numeric):
            raise QuadratureFailure(f"quadrature error estimate {err} too large")
        return numeric, closed


@dataclass
class NPLevel:
    """A non-perturbative energy through order alpha^2."""

    epsilon: object
    N: int
    label: str  # "plus", "minus" or "degenerate(N0,+)" / "degenerate(N0,-)"
    energy: complex
    alpha2_coefficient: complex
    alpha1_coefficient: object = 0
    alpha: object = 0
    g2: object = 0

    @property
    def shift(self):
        """Energy minus its free (alpha -> 0) value."""
        return self.alpha1_coefficient * self.alpha + self.alpha2_coefficient * self.alpha**2

    def to_json(self) -> dict:
        return {
            "epsilon": str(self.epsilon),
            "N": self.N,
            "label": self.label,
            "re": float(mpmath.re(self.energy)),
            "im": float(mpmath.im(self.energy)),
            "alpha": float(self.alpha),
            "g2": float(self.g2),
        }


def _is_integer(x) -> bool:
    return x == mpmath.nint(x)


def is_confluent(epsilon, N: int, side: str) -> bool:
    """True when this level's Gamma pole coincides with one from the other well."""
    side = normalize_side(side)
    eps = to_mpf(epsilon)
    if not _is_integer(eps):
        return False
    return side == "plus" or N >= int(eps)


def a_coefficient(epsilon, N: int, side: str, branch: BranchedCoupling):
    """a = ((-1)^(N+1)/N!) Gamma(-+eps - N) (-2/g^2)^(+-eps + 2N)."""
    s = side_sign(side)
    eps = to_mpf(epsilon)
    return (-1) ** (N + 1) / mpmath.factorial(N) * mpmath.gamma(-s * eps - N) * branch.power(s * eps + 2 * N)


def np_energy_generic(epsilon, N: int, side: str, params: ModelParams) -> NPLevel:
    """E = E_free + a alpha^2 for a level whose Gamma pole is isolated."""
    side = normalize_side(side)
    with mpmath.workdps(params.precision):
        eps = to_mpf(epsilon)
        if is_confluent(eps, N, side):
            raise IntegerEpsilon(
                f"eps = {eps} makes level N={N} ({side}) confluent; use np_energy_degenerate"
            )
        branch = physical_branch(params)
        a = a_coefficient(eps, N, side, branch)
        al = alpha(params)
        e0 = mpmath.mpf(1) / 2 + N - (eps if side == "minus" else 0)
        return NPLevel(eps, N, side, e0 + a * al**2, a, mpmath.mpf(0), al, params.g2)


def np_energy_degenerate(N0: int, N: int, sign: str, params: ModelParams) -> NPLevel:
    """Split pair at eps = N0: plus level N mixed with minus level N + N0."""
    if sign not in ("+", "-"):
        raise ValueError("sign must be '+' or '-'")
    with mpmath.workdps(params.precision):
        g2 = params.g2
        x = 2 / g2
        al = alpha(params)
        norm = 1 / (mpmath.factorial(N) * mpmath.factorial(N + N0))
        pm = 1 if sign == "+" else -1
        a1 = pm * mpmath.sqrt(norm * x ** (2 * N + N0))
        log_term = 2 * physical_branch(params).log() + 2 * mpmath.euler
        log_term -= mpmath.harmonic(N) + mpmath.harmonic(N + N0)
        a2 = x ** (2 * N + N0) * norm * log_term / 2
        e0 = mpmath.mpf(1) / 2 + N
        return NPLevel(mpmath.mpf(N0), N, f"degenerate({N0},{sign})", e0 + a1 * al + a2 * al**2,
                       a2, a1, al, g2)


def np_level(epsilon, N: int, side: str, params: ModelParams) -> NPLevel:
    """Pick the generic or degenerate formula for the given well level.

    At a confluence the degenerate pair is returned with the ``-`` sign for the
    lower-lying combination; the imaginary part is the same for both signs.
    """
    side = normalize_side(side)
    if not is_confluent(epsilon, N, side):
        return np_energy_generic(epsilon, N, side, params)
    N0 = int(mpmath.nint(to_mpf(epsilon)))
    n_plus = N if side == "plus" else N - N0
    return np_energy_degenerate(N0, n_plus, "-", params)


# --- roots of the secular function ----------------------------------------

@dataclass
class NPRoot:
    s: object
    seed: object
    label: str
    converged: bool
    residual: object = None
    error: str = ""

    @property
    def energy(self):
        return self.s + mpmath.mpf(1) / 2


def _seeds(params: ModelParams, window):
    eps = params.eps_mpf()
    lo, hi = window
    seeds = []
    n = 0
    while n <= hi:
        if n >= lo:
            seeds.append((mpmath.mpf(n), f"plus N={n}"))
        n += 1
    n = 0
    while -eps + n <= hi:
        if -eps + n >= lo:
            seeds.append((-eps + n, f"minus N={n}"))
        n += 1
    return seeds


def _newton(f, x0, tol, maxiter=60):
    # Newton with numerical derivative at working precision, plain steps
    x = mpmath.mpc(x0)
    for _ in range(maxiter):
        fx = f(x)
        d = mpmath.diff(f, x)
        if d == 0:
            raise NoConvergence("zero derivative", last=x)
        step = fx / d
        x -= step
        if abs(step) < tol:
            return x
    raise NoConvergence(f"no convergence from {x0}", last=x)


def find_np_levels(params: ModelParams, s_window=(-0.5, 2.5), count: int | None = None,
                   branch: BranchedCoupling | None = None) -> list[NPRoot]:
    """Zeros of the secular function seeded at the Gamma poles inside ``s_window``.

    Coinciding poles (integer eps) are seeded symmetrically at +-alpha times the
    degenerate splitting so both members of the pair are found.
    """
    branch = branch or physical_branch(params)
    roots = []
    with mpmath.workdps(params.precision):
        eps = params.eps_mpf()
        tol = mpmath.mpf(10) ** (-(params.precision // 2))
        al = alpha(params)
        f = lambda s: secular_regularized(s, params, branch)
        seeds = _seeds(params, s_window)
        merged = []
        for s0, label in seeds:
            twin = [m for m in merged if abs(m[2] - s0) < tol]
            if twin:
                # second pole on top of the first: split the pair
                n = int(mpmath.nint(s0))
                N0 = int(mpmath.nint(eps))
                width = al * mpmath.sqrt((2 / params.g2) ** (2 * n + N0)
                                         / (mpmath.factorial(n) * mpmath.factorial(n + N0)))
                merged.remove(twin[0])
                merged.append((s0 - width, f"degenerate({N0},-) N={n}", s0))
                merged.append((s0 + width, f"degenerate({N0},+) N={n}", s0))
            else:
                merged.append((s0, label, s0))
        # order by the unperturbed pole, not by the (possibly wide) split seed
        merged.sort(key=lambda t: mpmath.re(t[2]))
        if count is not None:
            merged = merged[:count]
        for s0, label, _ in merged:
            try:
                r = _newton(f, s0, tol)
                try:
                    res = abs(phi(r, params, branch))
                except PoleOfGamma:
                    # root closer to the pole than phi can be evaluated: judge the entire form
                    res = abs(f(r))
                roots.append(NPRoot(r, s0, label, res < tol, res))
            except (NoConvergence, PoleOfGamma) as exc:
                last = getattr(exc, "last", None)
                roots.append(NPRoot(last, s0, label, False, None, str(exc)))
    return roots


# --- dispersion relation --------------------------------------------------

def im_energy(epsilon, N: int, side: str, g2, precision: int = 30):
    """Im E_NP at coupling g^2 = ``g2`` on the physical sheet (continuous in eps)."""
    params = ModelParams.from_g2(g2, epsilon=epsilon, precision=precision)
    lvl = np_level(epsilon, N, side, params)
    return mpmath.im(lvl.energy)


def large_order_bridge(epsilon, N: int, side: str, m: int, precision: int = 30):
    """Coefficient of g^(2m) from z_m = -(1/pi) int_0^inf Im E_NP(z) / z^(m+1) dz.

    Integrates in u = 1/(3z), where the integrand is a Gamma-like bump near
    u = m + b.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    side = normalize_side(side)
    with mpmath.workdps(precision):
        eps = to_mpf(epsilon)
        b = side_sign(side) * eps + 2 * N

        def integrand(u):
            if u == 0:
                return mpmath.mpf(0)
            z = 1 / (3 * u)
            return im_energy(epsilon, N, side, z, precision) / z ** (m + 1) / (3 * u * u)

        peak = max(mpmath.mpf(1), m + b)
        width = mpmath.sqrt(peak)
        pts = [0] + [p for p in (peak - 8 * width, peak - 3 * width, peak, peak + 3 * width,
                                 peak + 8 * width, 3 * peak + 40) if p > 0] + [mpmath.inf]
        val, err = mpmath.quad(integrand, pts, error=True)
        if val != 0 and abs(err) > 1e-8 * abs(val):
            raise QuadratureFailure(f"bridge quadrature error {err} vs value {val}")
        return -val / mpmath.pi


def write_np_levels_json(levels, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        json.dump([lvl.to_json() for lvl in levels], fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
