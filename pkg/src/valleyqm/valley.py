"""Valley equation for the double well: valley-instanton and I-A valley.

Everything is solved in the rescaled field x = g q, where the action is
S = S~[x] / g^2 with S~ = int (x'^2/2 + U(x)) and U(x) = x^2 (1-x)^2 / 2 - eta x,
eta = eps g^2.  The discretization is second-order central differences on a
uniform grid; the discrete gradient of S~ is h F with F = -D2 x + U'(x), and
the discrete Hessian is h H with H = -D2 + diag U''(x).  The valley equation
reads H F = lambda F.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import mpmath
import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import spsolve

from .errors import ContinuationStalled, GridTooCoarse, InsufficientSamples, NoConvergence
from .model import ModelParams, find_minima

DEFAULT_T = 40.0
DEFAULT_GRID = 4001
R_SEED = 12.0  # kink/anti-kink separation where the I-A trace starts


@dataclass
class ValleyConfig:
    """A solution of the discretized valley equation.

    ``q`` and ``F`` are in the original field units; ``action`` is g^2 S, with
    the vacuum-energy contribution of the two half-intervals subtracted.
    """

    tau: np.ndarray
    q: np.ndarray
    F: np.ndarray
    lam: float
    action: float
    residual: float
    g: float = 1.0
    eta: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        return self.q * self.g

    @property
    def h(self) -> float:
        return float(self.tau[1] - self.tau[0])


@dataclass
class ValleyProfile:
    """(R, S, lambda) samples along the I-A valley, ordered by increasing R."""

    samples: list
    jacobian: list = field(default_factory=list)
    s_infinity: float = 1.0 / 3.0
    info: dict = field(default_factory=dict)

    @property
    def R(self) -> np.ndarray:
        return np.array([s[0] for s in self.samples])

    @property
    def S(self) -> np.ndarray:
        return np.array([s[1] for s in self.samples])

    @property
    def lam(self) -> np.ndarray:
        return np.array([s[2] for s in self.samples])


# --- the rescaled potential ------------------------------------------------

def _U(x, eta):
    return 0.5 * x * x * (1 - x) ** 2 - eta * x


def _U1(x, eta):
    return x * (1 - x) * (1 - 2 * x) - eta


def _U2(x):
    return 1 - 6 * x + 6 * x * x


def _U3(x):
    return -6 + 12 * x


def _second_difference(n: int, h: float, mirror: bool = False) -> sp.csr_matrix:
    """D2 on n unknowns with zero Dirichlet values beyond the ends.

    With ``mirror`` the first unknown sits on a symmetry point, x(-tau) = x(tau).
    """
    main = np.full(n, -2.0)
    up = np.ones(n - 1)
    if mirror:
        up[0] = 2.0
    D = sp.diags([np.ones(n - 1), main, up], [-1, 0, 1], format="lil")
    return (D / (h * h)).tocsr()


def discrete_action(x: np.ndarray, h: float, eta: float = 0.0) -> float:
    """S~ of a full-line grid function (ends included), kinetic by forward differences."""
    kin = 0.5 * np.sum(np.diff(x) ** 2) / h
    pot = _U(x, eta)
    return float(kin + h * (np.sum(pot) - 0.5 * (pot[0] + pot[-1])))


def discrete_gradient(x: np.ndarray, h: float, eta: float = 0.0) -> np.ndarray:
    """dS~/dx_i at interior sites, equal to h F_i."""
    d2 = (x[2:] - 2 * x[1:-1] + x[:-2]) / (h * h)
    return h * (-d2 + _U1(x[1:-1], eta))


# --- valley-instanton ------------------------------------------------------

def _well_x(params: ModelParams):
    left, right = find_minima(params)
    g = params.g_mpf()
    with mpmath.workdps(30):
        xl, xr = float(left.q_star * g), float(right.q_star * g)
        wl, wr = float(left.omega), float(right.omega)
    return xl, xr, wl, wr


def _barrier_top(eta: float) -> float:
    # middle root of U'(x) = 0 in (0, 1)
    lo, hi = (3 - np.sqrt(3)) / 6, (3 + np.sqrt(3)) / 6
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _U1(mid, eta) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_valley_instanton(params: ModelParams, T: float = DEFAULT_T, grid_size: int = DEFAULT_GRID,
                           tol: float = 1e-10, max_iter: int = 60) -> ValleyConfig:
    """The lambda = 0 valley-instanton joining the left well to the right well.

    Newton on the coupled system F = -x'' + U'(x), -F'' + U''(x) F = 0 with
    Dirichlet ends at the two minima and F = 0 there.  A finite box also admits
    the F = 0 classical path that leaves the left well at finite speed; pinning
    the centre site to the barrier top excludes it.  The pin is paid for by a
    source mu on the F equation at that site, which is exponentially small for
    the true valley-instanton (its translation mode is restored as T grows).

    Raises:
        NoConvergence: Newton stagnated.
        GridTooCoarse: the residual floor stays above ``tol``.
    """
    if grid_size < 11 or grid_size % 2 == 0:
        raise ValueError("grid_size must be odd and at least 11")
    g = float(params.g_mpf())
    eta = float(params.eps_mpf() * params.g2)
    xl, xr, _, _ = _well_x(params)
    tau = np.linspace(-T / 2, T / 2, grid_size)
    h = tau[1] - tau[0]
    m = grid_size - 2
    c = m // 2  # interior index of tau = 0
    xb = _barrier_top(eta)

    D2 = _second_difference(m, h)
    bc = np.zeros(m)
    bc[0], bc[-1] = xl / (h * h), xr / (h * h)

    def F_of(x):
        return -(D2 @ x + bc) + _U1(x, eta)

    # tanh-like kink centred at tau = 0, shifted so it passes the barrier top there
    shift = np.log((xb - xl) / (xr - xb))
    x = xl + (xr - xl) / (1 + np.exp(-(tau[1:-1] + shift)))
    x[c] = xb
    Fv = F_of(x)
    mu = 0.0
    ec = np.zeros(m)
    ec[c] = 1.0
    I = sp.identity(m, format="csr")
    scale = 1.0 / (h * h)

    def residual(x, Fv, mu):
        r1 = Fv - F_of(x)
        r2 = -(D2 @ Fv) + _U2(x) * Fv - mu * ec
        return np.concatenate([r1, r2, [x[c] - xb]])

    res = residual(x, Fv, mu)
    norm = np.max(np.abs(res))
    for it in range(max_iter):
        if norm < tol * scale * 1e-4 + tol:
            break
        H = -D2 + sp.diags(_U2(x))
        J = sp.bmat([
            [-H, I, None],
            [sp.diags(_U3(x) * Fv), H, sp.csr_matrix(-ec[:, None])],
            [sp.csr_matrix(ec[None, :]), None, None],
        ], format="csc")
        step = spsolve(J, -res)
        dx, dF, dmu = step[:m], step[m:2 * m], step[-1]
        t = 1.0
        while t > 1e-4:
            xn, Fn, mun = x + t * dx, Fv + t * dF, mu + t * dmu
            rn = residual(xn, Fn, mun)
            nn = np.max(np.abs(rn))
            if nn < norm or nn < tol:
                break
            t *= 0.5
        else:
            raise NoConvergence(f"valley-instanton Newton stalled at residual {norm:.3e}",
                                last=(x, Fv))
        x, Fv, mu, res, norm = xn, Fn, mun, rn, nn
        if np.max(np.abs(t * dx)) < 1e-14:
            break
    else:
        raise NoConvergence(f"valley-instanton Newton did not converge in {max_iter} steps",
                            last=(x, Fv))

    # equation defect relative to the operator scale, so it does not depend on h
    defect = float(np.max(np.abs(res[m:2 * m])) + np.max(np.abs(res[:m])))
    if defect > max(tol, 1e3 * np.finfo(float).eps * scale):
        raise GridTooCoarse(f"residual floor {defect:.3e} above tolerance {tol:.1e}")

    full = np.concatenate([[xl], x, [xr]])
    Ffull = np.concatenate([[0.0], Fv, [0.0]])
    S = discrete_action(full, h, eta) - (_U(xl, eta) + _U(xr, eta)) * T / 2
    return ValleyConfig(tau=tau, q=full / g, F=Ffull / g, lam=0.0, action=S, residual=defect,
                        g=g, eta=eta, info={"mu": float(mu), "iterations": it, "x_left": xl,
                                            "x_right": xr, "x_pin": xb})


def _tail_rate(s, dq, F) -> float:
    """Common decay rate w of a valley-instanton tail.

    Linearized about a well, -dq'' + w^2 dq = F with F = C e^(-w s), so
    dq = (A + C s / (2 w)) e^(-w s).  The resonant coefficient is tied to the
    amplitude of F, which removes the near-degeneracy between a free linear
    prefactor and a shift of w over a short window.  For fixed w the model is
    linear in (A, C); the relative residual is minimized over w.  When F is
    negligible (eps = 0) this reduces to a pure exponential fit of dq.
    """
    s = s - s.min()
    wq = 1.0 / np.abs(dq)
    use_F = np.max(np.abs(F)) > 1e-8 * np.max(np.abs(dq))
    wF = 1.0 / np.abs(F) if use_F else None

    def design(w):
        e = np.exp(-w * s)
        Mq = np.column_stack([e, s * e / (2 * w)]) * wq[:, None]
        rhs = dq * wq
        if use_F:
            MF = np.column_stack([np.zeros_like(e), e]) * wF[:, None]
            return np.vstack([Mq, MF]), np.concatenate([rhs, F * wF])
        return Mq[:, :1], rhs

    def cost(w):
        M, rhs = design(w)
        coef, *_ = np.linalg.lstsq(M, rhs, rcond=None)
        return float(np.sum((M @ coef - rhs) ** 2))

    w0 = -np.polyfit(s, np.log(np.abs(dq)), 1)[0]
    res = minimize_scalar(cost, bounds=(0.5 * w0, 2.0 * w0), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x)


def _fit_window(tau, side, window):
    a, b = window
    if side == "left":
        return (tau >= -b) & (tau <= -a)
    return (tau >= a) & (tau <= b)


def tail_exponents(config: ValleyConfig, window=None, source: str = "q") -> tuple[float, float]:
    """Decay rates of the valley-instanton towards the left and right wells.

    With ``source="q"`` the deviation x - x* is fitted together with F to the
    linearized tail (A + C s / (2w)) e^(-w s), C e^(-w s); s is the distance
    from tau = 0.  ``source="F"`` fits the pure exponential tail of F alone.

    Args:
        window: (a, b) range of s used in the fit, default (8, T/2 - 5): clear
            of the e^(-2 w s) nonlinear terms near the core and of the
            Dirichlet ends.
    """
    half = float(config.tau[-1])
    if window is None:
        window = (8.0, half - 5.0)
    x = config.x
    Fx = config.F * config.g
    out = []
    for side, ref in (("left", config.info["x_left"]), ("right", config.info["x_right"])):
        mask = _fit_window(config.tau, side, window)
        s = np.abs(config.tau[mask])
        if source == "F":
            slope = np.polyfit(s, np.log(np.abs(Fx[mask])), 1)[0]
            out.append(float(-slope))
        else:
            out.append(_tail_rate(s, x[mask] - ref, Fx[mask]))
    return out[0], out[1]


# --- I-A valley at eps = 0 ---------------------------------------------------

class _HalfLine:
    """Symmetric configurations on [0, T/2], mirrored at tau = 0, x = 0 at T/2.

    Residuals are evaluated in extended precision: H F applies a 1/h^2
    operator twice, and in double precision the resulting roundoff floor
    (about |H|^2 * 1e-16) swamps F itself once the pair is well separated.
    Newton then acts as iterative refinement with a double-precision Jacobian.
    """

    def __init__(self, T: float, grid_size: int):
        if grid_size < 21 or grid_size % 2 == 0:
            raise ValueError("grid_size must be odd and at least 21")
        ld = np.longdouble
        self.T = T
        self.h = ld(T) / ld(grid_size - 1)
        self.n = (grid_size - 1) // 2  # unknowns at tau = 0 .. T/2 - h
        self.tau = np.arange(self.n, dtype=ld) * self.h
        self.D2 = _second_difference(self.n, float(self.h), mirror=True)
        # full-line quadrature weights of the half-grid samples
        self.w = np.full(self.n, 2.0 * float(self.h))
        self.w[0] = float(self.h)

    def d2(self, v):
        out = np.empty_like(v)
        out[0] = 2 * (v[1] - v[0])
        out[1:-1] = v[2:] - 2 * v[1:-1] + v[:-2]
        out[-1] = v[-2] - 2 * v[-1]
        return out / (self.h * self.h)

    def F(self, x):
        return -self.d2(x) + _U1(x, 0.0)

    def residual(self, x, lam):
        Fv = self.F(x)
        return -self.d2(Fv) + _U2(x) * Fv - lam * Fv, Fv

    def jacobian(self, x, lam, Fv):
        x = np.asarray(x, dtype=float)
        H = -self.D2 + sp.diags(_U2(x))
        J = (H - float(lam) * sp.identity(self.n)) @ H + sp.diags(_U3(x) * np.asarray(Fv, dtype=float))
        return J.tocsc()

    def action(self, x) -> float:
        full = np.concatenate([x[:0:-1], x, [0.0]])
        kin = 0.5 * np.sum(np.diff(full) ** 2) / self.h
        pot = _U(full, 0.0)
        return float(kin + self.h * (np.sum(pot) - 0.5 * (pot[0] + pot[-1])))

    def area(self, x) -> float:
        return float(self.w @ np.asarray(x, dtype=float))

    def crossings(self, x, level=0.5):
        """Distance between the two crossings of x = level, or None after the merger."""
        above = np.nonzero(x > level)[0]
        if above.size == 0 or above[-1] + 1 >= self.n:
            return None
        i = above[-1]
        t = self.tau[i] + self.h * (x[i] - level) / (x[i] - x[i + 1])
        return 2.0 * float(t)

    def inner(self, a, b) -> float:
        return float(self.w @ (np.asarray(a, dtype=float) * np.asarray(b, dtype=float)))


def _f64(v):
    return np.asarray(v, dtype=float)


def _bordered(J, col, row) -> sp.csc_matrix:
    """[[J, col], [row[:-1], row[-1]]] as one sparse matrix."""
    row = _f64(row)
    return sp.bmat([[J, sp.csc_matrix(_f64(col)[:, None])],
                    [sp.csc_matrix(row[None, :-1]), sp.csc_matrix([[row[-1]]])]], format="csc")


def separation(S: float, area: float, s_infinity: float = 1.0 / 3.0) -> float:
    """Collective coordinate R reported for a valley configuration.

    Blends R = sqrt(2 S), exact near the vacuum, with the area int x dtau, which
    equals the kink separation for a well-separated pair.  The weight
    (1 - (S / S_inf)^2)^4 switches smoothly between them, so R is continuous
    through the kink merger and matches both asymptotic regimes.
    """
    t = min(max(S / s_infinity, 0.0), 1.0)
    w = (1.0 - t * t) ** 4
    return w * np.sqrt(2.0 * max(S, 0.0)) + (1.0 - w) * area


def _glued_pair(tau, R0):
    sig = lambda z: 0.5 * (1 + np.tanh(z / 2))
    return sig(tau + R0 / 2) + sig(R0 / 2 - tau) - 1.0


def trace_valley(params: ModelParams | None = None, T: float = DEFAULT_T, grid_size: int = DEFAULT_GRID,
                 n_samples: int = 300, *, R0: float = R_SEED, s_stop: float = 2e-3,
                 tol: float = 1e-5, ds_max: float = 0.05, max_steps: int = 20000) -> ValleyProfile:
    """Trace the eps = 0 instanton/anti-instanton valley from R0 down to the vacuum.

    Pseudo-arclength continuation of H F = lambda F in (x, lambda), starting from
    a glued kink/anti-kink pair at separation R0.  ``n_samples`` bounds the
    arclength step so the trace yields at least that many samples between R0
    and the vacuum end; the trace stops once S falls below ``s_stop``.

    Raises:
        ContinuationStalled: step control failed; ``last_profile`` holds the samples so far.
    """
    if params is not None and params.eps_mpf() != 0:
        raise ValueError("the I-A valley trace is implemented for eps = 0 only")
    grid = _HalfLine(T, grid_size)
    n = grid.n
    x = _glued_pair(grid.tau, R0)
    lam = np.longdouble(0)

    # first point: valley equation plus the area constraint int x = R0
    for _ in range(50):
        Phi, Fv = grid.residual(x, lam)
        c = grid.area(x) - R0
        scale = np.max(np.abs(Fv))
        if np.max(np.abs(Phi)) < tol * scale and abs(c) < 1e-12:
            break
        J = grid.jacobian(x, lam, Fv)
        A = _bordered(J, -_f64(Fv), np.concatenate([grid.w, [0.0]]))
        step = spsolve(A, -np.concatenate([_f64(Phi), [c]]))
        x, lam = x + step[:n], lam + step[n]
    else:
        raise NoConvergence("could not seed the valley at the requested separation")

    # weighted inner product on (x, lambda)
    def dot(a, b):
        return grid.inner(a[:n], b[:n]) + a[n] * b[n]

    def tangent(x, lam, Fv, prev):
        J = grid.jacobian(x, lam, Fv)
        A = _bordered(J, -_f64(Fv), np.concatenate([grid.w * prev[:n], [prev[n]]]))
        rhs = np.zeros(n + 1)
        rhs[-1] = 1.0
        t = spsolve(A, rhs)
        return t / np.sqrt(dot(t, t))

    def record(x, lam):
        S = grid.action(x)
        Phi, Fv = grid.residual(x, lam)
        defect = float(np.max(np.abs(Phi)) / np.max(np.abs(Fv)))
        return {"S": S, "defect": defect, "area": grid.area(x), "cross": grid.crossings(x), "lam": float(lam),
                "xmax": float(x[0])}

    # initial direction: shrink the pair, i.e. decrease the area
    t = np.concatenate([-np.ones(n), [0.0]])
    t = tangent(x, lam, Fv, t)
    if grid.area(t[:n]) > 0:
        t = -t
    raw = [record(x, lam)]
    # measured arclength of the valley in this norm: about 1.9 below R = 5, 0.38 per unit R above
    total = 1.9 + 0.38 * max(R0 - 5.0, 0.0)
    ds_cap = min(ds_max, total / max(n_samples, 1))
    ds = ds_cap / 4
    steps = 0
    while raw[-1]["S"] > s_stop:
        steps += 1
        if steps > max_steps:
            raise ContinuationStalled("too many continuation steps", last_profile=_profile(raw))
        y0 = np.concatenate([x, [lam]])
        yp = y0 + ds * t
        y = yp.copy()
        ok = False
        for it in range(8):
            Phi, Fv = grid.residual(y[:n], y[n])
            arc = dot(t, y - yp)
            scale = max(np.max(np.abs(Fv)), 1e-300)
            if np.max(np.abs(Phi)) < tol * scale and it > 0:
                ok = True
                break
            J = grid.jacobian(y[:n], y[n], Fv)
            A = _bordered(J, -_f64(Fv), np.concatenate([grid.w * t[:n], [t[n]]]))
            step = spsolve(A, -np.concatenate([_f64(Phi), [float(arc)]]))
            y = y + step
            if not np.all(np.isfinite(y)):
                break
            if np.sqrt(dot(step, step)) < 1e-12 * max(1.0, np.sqrt(dot(y, y))):
                Phi, Fv = grid.residual(y[:n], y[n])
                ok = np.max(np.abs(Phi)) < 1e3 * tol * max(np.max(np.abs(Fv)), 1e-300)
                break
        if not ok:
            ds *= 0.5
            if ds < 1e-7:
                raise ContinuationStalled(f"arclength step underflow at S={raw[-1]['S']:.4g}",
                                          last_profile=_profile(raw))
            continue
        t_new = tangent(y[:n], y[n], Fv, t)
        if dot(t_new, t) < 0:
            t_new = -t_new
        x, lam, t = y[:n], y[n], t_new
        raw.append(record(x, lam))
        if it <= 3:
            ds = min(ds * 1.5, ds_cap)
        elif it >= 6:
            ds *= 0.7
    lams = [r["lam"] for r in sorted(raw, key=lambda r: r["S"])]
    diffs = np.diff(lams)
    monotone = bool(np.all(diffs >= 0) or np.all(diffs <= 0))
    # the discrete large-R limit: two isolated kinks on the same grid spacing
    kink = solve_valley_instanton(ModelParams(g=1.0), T=T, grid_size=grid_size)
    return _profile(raw, s_infinity=2.0 * kink.action,
                    info={"T": T, "grid_size": grid_size, "R0": R0, "steps": steps,
                               "lambda_monotone": monotone,
                               "max_defect": max(r["defect"] for r in raw)})


def _profile(raw, s_infinity: float = 1.0 / 3.0, info=None) -> ValleyProfile:
    rows = sorted((float(separation(r["S"], r["area"])), r["S"], r["lam"], r["defect"]) for r in raw)
    return ValleyProfile(samples=[r[:3] for r in rows], s_infinity=s_infinity,
                         info=dict(info or {}, raw=raw, defect=[r[3] for r in rows]))


def jacobian_profile(profile: ValleyProfile, s_infinity: float | None = None, min_samples: int = 100):
    """Jacobian samples (t, F_t, f_t) from the S(R) curve.

    F_t = 1 / (dS/dR) by centred differences on the (possibly non-uniform)
    samples, and f_t = F_t sqrt(2t) (1/3 - t).  ``s_infinity`` rescales t so
    the discrete large-R limit of S maps to 1/3 exactly; by default the
    profile's own value is used.

    Raises:
        InsufficientSamples: fewer than ``min_samples`` points.
    """
    R, S = profile.R, profile.S
    if len(R) < min_samples:
        raise InsufficientSamples(f"{len(R)} samples, need at least {min_samples}")
    s_inf = profile.s_infinity if s_infinity is None else s_infinity
    t = S * (1.0 / 3.0) / s_inf
    dS = np.gradient(t, R)
    F_t = 1.0 / dS
    f_t = F_t * np.sqrt(2.0 * np.clip(t, 0.0, None)) * (1.0 / 3.0 - t)
    out = [(float(a), float(b), float(c)) for a, b, c in zip(t, F_t, f_t)]
    profile.jacobian = out
    return out


def jacobian_endpoints(jacobian, fit_points: int = 8, skip: int = 2) -> tuple[float, float]:
    """Extrapolate f(t) to t = 0 and t = 1/3 with straight-line fits at each end."""
    arr = np.array(sorted(jacobian))
    if len(arr) < 2 * (fit_points + skip):
        raise InsufficientSamples("too few Jacobian samples to extrapolate the endpoints")
    lo = arr[skip:skip + fit_points]
    hi = arr[-(skip + fit_points):-skip] if skip else arr[-fit_points:]
    f0 = np.polyval(np.polyfit(lo[:, 0], lo[:, 2], 1), 0.0)
    f1 = np.polyval(np.polyfit(hi[:, 0], hi[:, 2], 1), 1.0 / 3.0)
    return float(f0), float(f1)


# --- export ------------------------------------------------------------------

def write_profile_csv(profile: ValleyProfile, path) -> Path:
    """Columns R, S, lambda and the relative valley-equation defect of each sample."""
    path = Path(path)
    defect = profile.info.get("defect") or [None] * len(profile.samples)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["R", "S", "lambda", "defect"])
        for (R, S, lam), d in zip(profile.samples, defect):
            w.writerow([f"{R:.12g}", f"{S:.15g}", f"{lam:.12g}", "" if d is None else f"{d:.2e}"])
    return path


def write_jacobian_csv(jacobian, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "F", "f"])
        for t, F, f in jacobian:
            w.writerow([f"{t:.15g}", f"{F:.12g}", f"{f:.12g}"])
    return path


def write_config_csv(config: ValleyConfig, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tau", "q", "F"])
        for t, q, F in zip(config.tau, config.q, config.F):
            w.writerow([f"{t:.10g}", f"{q:.15g}", f"{F:.15g}"])
    return path
