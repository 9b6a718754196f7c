"""Closed-form candidates for the lower-tail rate function.

The candidates solve

    -4F + 3x F' - x^2 F'' + 4 = 4 exp(-F'')

with F(2) = F'(2) = F''(2) = 0, F'''(2) = -1/2.  They are built as
F_c(x) = int_2^x int_2^y log G_c(z) dz dy, where G_c is defined implicitly by
log G = psi_c(x sqrt(G)).  Working in the variable w = x sqrt(G) makes every
branch explicit:

    d = c^2 - 4,  R = sqrt(16 + d w^2),  X = (c w - R) / (d w - c R)
    psi_c(w) = (2c/sqrt d) artanh(sqrt d X)      d > 0
             = (2c/sqrt|d|) arctan(sqrt|d| X)    d < 0
             = 2 - w                             c = 2
    psi_inf(w) = log 4 - 2 log w

and x = w exp(-psi(w)/2).  Everything about the match with the variational
rate function is a conjecture; ``match_c`` only reports a fit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate, optimize

from .errors import AccuracyError, DomainError, SolverError
from .ratefn import RateCurve, parabola
from .specialfn import as_qparam, lambert_w

__all__ = [
    "OdeFamilyParam", "as_family", "psi", "psi_prime", "g_c", "g_c_derivs",
    "w_of_x", "x_min", "f_c", "f_c_prime", "f_c_derivs", "f_c_curve",
    "f_infinity", "f_two_middle", "f_two_middle_prime", "gluing_constants",
    "f_two", "ode_residual", "g_system_residual", "match_c", "MatchReport",
]

# below this |d X^2| the artanh/arctan form is replaced by its series
_SERIES_CUT = 1e-3
QUAD_TOL = 1e-11


@dataclass(frozen=True)
class OdeFamilyParam:
    """Family parameter c in (0, inf]; ``math.inf`` selects G = 2/x."""

    c: float

    def __post_init__(self):
        c = float(self.c)
        if not c > 0:
            raise DomainError(f"c must be positive, got {c}")
        object.__setattr__(self, "c", c)

    @property
    def infinite(self) -> bool:
        return math.isinf(self.c)

    @property
    def d(self) -> float:
        return self.c * self.c - 4.0

    @property
    def w_max(self) -> float:
        """Upper end of the w-range where R is real (inf unless c < 2)."""
        return math.inf if self.d >= 0 else 4.0 / math.sqrt(-self.d)

    def __str__(self):
        return "inf" if self.infinite else f"{self.c:g}"


def as_family(c) -> OdeFamilyParam:
    if isinstance(c, OdeFamilyParam):
        return c
    if isinstance(c, str) and c.strip().lower() in ("inf", "infinity", "oo"):
        return OdeFamilyParam(math.inf)
    return OdeFamilyParam(float(c))


# ---------------------------------------------------------------------------
# psi_c and its derivatives in w
# ---------------------------------------------------------------------------

def _num_den(w, c: float, d: float):
    r = np.sqrt(16.0 + d * w * w)
    return c * w - r, d * w - c * r, r


def _atanh_over(z, d):
    """artanh(sqrt(d) z)/sqrt(d) for d >= 0, series near d z^2 = 0."""
    u = d * z * z
    if np.all(np.abs(u) < _SERIES_CUT):
        return z * (1.0 + u / 3.0 + u * u / 5.0 + u ** 3 / 7.0 + u ** 4 / 9.0)
    s = math.sqrt(d)
    return np.arctanh(s * z) / s


def psi(w, c) -> float:
    """log G as a function of w = x sqrt(G)."""
    fam = as_family(c)
    if fam.infinite:
        return math.log(4.0) - 2.0 * np.log(w)
    if fam.c == 2.0:
        return 2.0 - w
    cc, d = fam.c, fam.d
    num, den, _ = _num_den(w, cc, d)
    if d < 0 and not (np.all(np.real(den) < 0)
                      and np.all(np.abs(d * num * num) < _SERIES_CUT * np.abs(den) ** 2)):
        # arctan(s N/D) continued through D = 0; equals the principal value while D < 0
        s = math.sqrt(-d)
        return 2.0 * cc * np.arctan2(-s * num, -den) / s
    with np.errstate(divide="ignore", invalid="ignore"):
        return 2.0 * cc * _atanh_over(num / den, d)


def psi_prime(w, c):
    fam = as_family(c)
    if fam.infinite:
        return -2.0 / w
    if fam.c == 2.0:
        return -1.0 + 0.0 * w
    cc, d = fam.c, fam.d
    num, den, r = _num_den(w, cc, d)
    dnum, dden = cc - d * w / r, d - cc * d * w / r
    # derivative of artanh/arctan of X = N/D, written without the pole of X
    return 2.0 * cc * (dnum * den - num * dden) / (den * den - d * num * num)


def _psi_second(w: float, c) -> float:
    fam = as_family(c)
    if fam.infinite:
        return 2.0 / (w * w)
    if fam.c == 2.0:
        return 0.0
    # complex step: psi_prime is analytic near the real axis on the branch
    h = 1e-30 * max(1.0, abs(w))
    return float(np.imag(psi_prime(complex(w, h), fam)) / h)


def _x_of_w(w: float, fam: OdeFamilyParam) -> float:
    return w * math.exp(-0.5 * float(psi(w, fam)))


# ---------------------------------------------------------------------------
# G_c
# ---------------------------------------------------------------------------

def x_min(c) -> float:
    """Left end of the x-interval on which the branch through x = 2 is defined."""
    fam = as_family(c)
    if fam.infinite:
        return 0.0
    if fam.c == 2.0:
        return -2.0 / math.e ** 2

    # the branch ends where dx/dw = 0 for some w < 0, i.e. w psi'(w) = 2
    def turn(w):
        return 1.0 - 0.5 * w * float(psi_prime(w, fam))

    if fam.d < 0:
        lo = -fam.w_max * (1.0 - 1e-12)
        if turn(lo) > 0:
            # R vanishes before the turning point; the branch stops there
            return _x_of_w(lo, fam)
    else:
        lo = -1.0
        while turn(lo) > 0:
            lo *= 2.0
            if lo < -1e8:
                raise SolverError("branch end not found", {"c": fam.c})
    wt = optimize.brentq(turn, lo, 0.0, xtol=1e-15, rtol=1e-15)
    return _x_of_w(wt, fam)


def w_of_x(x: float, c) -> float:
    """w = x sqrt(G_c(x)) on the branch through w(2) = 2."""
    fam = as_family(c)
    x = float(x)
    if x == 2.0:
        return 2.0
    if fam.infinite:
        if not 0 < x <= 2:
            raise DomainError("G_inf is defined for 0 < x <= 2")
        return math.sqrt(2.0 * x)
    if x > 0:
        return x * math.sqrt(g_c(x, fam))
    if x == 0.0:
        # psi(w) = log G at w = 0 gives G(0) = exp(psi(0))
        return 0.0
    xm = x_min(fam)
    if x < xm:
        raise DomainError(f"x = {x} lies left of the branch end {xm:.6g} for c = {fam}")

    def h(w):
        return _x_of_w(w, fam) - x

    floor = -fam.w_max * (1.0 - 1e-12)
    lo = max(-1.0, floor)
    while h(lo) > 0:
        if lo <= floor or lo < -1e8:
            raise SolverError("w bracket not found", {"x": x, "c": fam.c})
        lo = max(2.0 * lo, floor)
    return optimize.brentq(h, lo, 0.0, xtol=1e-15, rtol=1e-15)


def g_c(x: float, c) -> float:
    """G_c(x) > 1 for 0 < x < 2 (also defined at x = 2 and, for finite c, x <= 0)."""
    fam = as_family(c)
    x = float(x)
    if x > 2.0:
        raise DomainError("G_c is defined for x <= 2")
    if x == 2.0:
        return 1.0
    if fam.infinite:
        if x <= 0:
            raise DomainError("G_inf is defined for x > 0")
        return 2.0 / x
    if fam.c == 2.0:
        if x < -2.0 / math.e ** 2:
            raise DomainError("G_2 needs x >= -2/e^2")
        # 4 W^2 / x^2 = exp(2 - 2W) since W exp(W) = e x / 2
        return math.exp(2.0 - 2.0 * lambert_w(math.e * x / 2.0))
    if x <= 0.0:
        w = w_of_x(x, fam)
        return math.exp(float(psi(w, fam)))

    def h(g):
        return math.log(g) - float(psi(x * math.sqrt(g), fam))

    hi = 1.0 + 64.0 / (x * x)
    if fam.d < 0:
        hi = min(hi, (fam.w_max / x) ** 2 * (1.0 - 1e-15))
    lo = 1.0
    hlo, hhi = h(lo), h(hi)
    grow = 0
    while hlo * hhi > 0:
        if fam.d < 0 or grow > 60:
            raise SolverError("G_c root not bracketed",
                              {"x": x, "c": fam.c, "bracket": (lo, hi), "h": (hlo, hhi)})
        hi *= 4.0
        hhi = h(hi)
        grow += 1
    return optimize.brentq(h, lo, hi, xtol=1e-15, rtol=1e-15)


def g_c_derivs(x: float, c):
    """(G, G', G'') at x via the w-parametrization and the chain rule."""
    fam = as_family(c)
    w = w_of_x(x, fam)
    p = float(psi(w, fam)) if w != 0 or not fam.infinite else math.inf
    p1 = float(psi_prime(w, fam))
    p2 = _psi_second(w, fam)
    e = math.exp(-0.5 * p)
    xw = e * (1.0 - 0.5 * w * p1)
    xww = e * (-0.5 * p1 * (1.0 - 0.5 * w * p1) - 0.5 * p1 - 0.5 * w * p2)
    g = math.exp(p)
    gw = g * p1
    gww = g * (p1 * p1 + p2)
    g1 = gw / xw
    g2 = (gww * xw - gw * xww) / xw ** 3
    return g, g1, g2


def g_system_residual(x: float, c) -> float:
    """G(4G'' + x^2 G'^2) - 8G'^2 - x G^2 (x G'' + G'), relative to the term scale."""
    g, g1, g2 = g_c_derivs(x, c)
    lhs = g * (4.0 * g2 + x * x * g1 * g1)
    rhs = 8.0 * g1 * g1 + x * g * g * (x * g2 + g1)
    scale = max(1.0, abs(lhs), abs(rhs))
    return (lhs - rhs) / scale


# ---------------------------------------------------------------------------
# F_c
# ---------------------------------------------------------------------------

def _log_g(z: float, fam: OdeFamilyParam) -> float:
    return math.log(g_c(z, fam))


def _quad(fun, a, b, what):
    val, err = integrate.quad(fun, a, b, epsabs=QUAD_TOL, epsrel=1e-12, limit=200)
    if not err < 1e-9:
        raise AccuracyError(f"quadrature for {what} did not converge", partial=val,
                            diagnostics={"error_estimate": err})
    return val


def f_c(x: float, c) -> float:
    """F_c(x) = int_x^2 (z - x) log G_c(z) dz."""
    fam = as_family(c)
    x = float(x)
    if x > 2.0:
        raise DomainError("F_c is defined for x <= 2")
    if x == 2.0:
        return 0.0
    return _quad(lambda z: (z - x) * _log_g(z, fam), x, 2.0, "F_c")


def f_c_prime(x: float, c) -> float:
    fam = as_family(c)
    x = float(x)
    if x == 2.0:
        return 0.0
    return -_quad(lambda z: _log_g(z, fam), x, 2.0, "F_c'")


def f_c_derivs(x: float, c):
    """(F, F', F'', F''') at x; F'' = log G and F''' = G'/G are exact."""
    fam = as_family(c)
    g, g1, _ = g_c_derivs(x, fam)
    return f_c(x, fam), f_c_prime(x, fam), math.log(g), g1 / g


def f_c_curve(grid, c) -> RateCurve:
    """F_c sampled on a grid inside its domain, by a cumulative Gauss rule."""
    fam = as_family(c)
    grid = np.asarray(grid, dtype=float)
    vals = np.array([f_c(x, fam) for x in grid])
    return RateCurve(grid, vals, {"family": "F_c", "c": str(fam)})


def f_infinity(x):
    """1 - 2x + 3x^2/4 + (x^2/2) log(2/x) on (0, 2]."""
    x = np.asarray(x, dtype=float)
    return 1.0 - 2.0 * x + 0.75 * x * x + 0.5 * x * x * np.log(2.0 / x)


def _f_inf_derivs(x):
    x = np.asarray(x, dtype=float)
    f1 = -2.0 + x + x * np.log(2.0 / x)
    f2 = np.log(2.0 / x)
    return f_infinity(x), f1, f2


# ---------------------------------------------------------------------------
# c = 2 in closed form
# ---------------------------------------------------------------------------

def _w2(x: float):
    """W(e x / 2) and u = x / W written as (2/e) exp(W), stable at x = 0."""
    wl = lambert_w(math.e * x / 2.0)
    u = (2.0 / math.e) * math.exp(wl)
    return wl, u


def f_two_middle(x: float) -> float:
    """1 - x^2 W - 6x^2/(4W) - x^2/(4W^2) + 5x^2/2 with W = W(e x / 2)."""
    x = float(x)
    wl, u = _w2(x)
    return 1.0 - x * x * wl - 1.5 * x * u - 0.25 * u * u + 2.5 * x * x


def f_two_middle_prime(x: float) -> float:
    x = float(x)
    wl, u = _w2(x)
    du = 1.0 / (1.0 + wl)
    dw = 0.5 * math.e * math.exp(-wl) * du
    return -2.0 * x * wl - x * x * dw - 1.5 * u - 1.5 * x * du - 0.5 * u * du + 5.0 * x


def gluing_constants(lo: float = -2.0 / math.e ** 2 + 1e-9, hi: float = -1e-6):
    """(q_2, x_q2) making 1 - q + (eta/2) x^2 meet the c = 2 branch in C^1 fashion.

    Tangency gives eta = M'(x0)/x0 and 1 - exp(-eta) + eta x0^2/2 = M(x0).
    """
    def h(x0):
        eta = f_two_middle_prime(x0) / x0
        return 1.0 - math.exp(-eta) + 0.5 * eta * x0 * x0 - f_two_middle(x0)

    try:
        x0 = optimize.brentq(h, lo, hi, xtol=1e-15, rtol=1e-15)
    except ValueError as exc:
        raise SolverError("gluing solve not bracketed",
                          {"bracket": (lo, hi), "h": (h(lo), h(hi))}) from exc
    eta = f_two_middle_prime(x0) / x0
    return math.exp(-eta), x0


_GLUING: tuple | None = None


def _default_gluing():
    global _GLUING
    if _GLUING is None:
        _GLUING = gluing_constants()
    return _GLUING


def f_two(x, matching: tuple | None = None):
    """Three-branch function: parabola left of x_q2, c = 2 branch up to 2, zero after.

    ``matching`` overrides (q_2, x_q2); by default they come from the gluing solve.
    """
    q2, x0 = matching if matching is not None else _default_gluing()
    eta = -math.log(q2)

    def one(v):
        if v > 2.0:
            return 0.0
        if v < x0:
            return 1.0 - q2 + 0.5 * eta * v * v
        return f_two_middle(v)

    if np.ndim(x) == 0:
        return one(float(x))
    return np.array([one(float(v)) for v in np.asarray(x, dtype=float)])


# ---------------------------------------------------------------------------
# residual of the closed equation
# ---------------------------------------------------------------------------

def _fd_derivs(f, x: float, h: float):
    fm2, fm1, f0, fp1, fp2 = (float(f(x + k * h)) for k in (-2, -1, 0, 1, 2))
    d1 = (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h)
    d2 = (-fm2 + 16 * fm1 - 30 * f0 + 16 * fp1 - fp2) / (12 * h * h)
    return f0, d1, d2


def _curve_derivs(curve: RateCurve, x: float):
    g, v = curve.grid[curve.finite], curve.values[curve.finite]
    i = int(np.clip(np.searchsorted(g, x), 1, len(g) - 2))
    if abs(g[i - 1] - x) < abs(g[i] - x):
        i = max(i - 1, 1)
    h1, h2 = g[i] - g[i - 1], g[i + 1] - g[i]
    d1 = (v[i + 1] - v[i - 1]) / (h1 + h2)
    d2 = 2.0 * ((v[i + 1] - v[i]) / h2 - (v[i] - v[i - 1]) / h1) / (h1 + h2)
    f0 = float(curve(x))
    return f0 + d1 * (x - g[i]), d1, d2, g[i]


def ode_residual(F, x: float, h: float = 1e-3) -> float:
    """-4F + 3x F' - x^2 F'' + 4 - 4 exp(-F'') at x.

    ``F`` may be a RateCurve (central differences at the nearest interior
    node, which is where the residual is evaluated), a tuple of callables
    (F, F', F'') taken as exact, or a plain callable (five-point differences
    with step h).
    """
    x = float(x)
    if isinstance(F, RateCurve):
        f0, f1, f2, x = _curve_derivs(F, x)
        f0 = float(F(x))
    elif isinstance(F, tuple):
        f0, f1, f2 = (float(fn(x)) for fn in F)
    elif callable(F):
        f0, f1, f2 = _fd_derivs(F, x, h)
    else:
        raise TypeError("F must be a RateCurve, a tuple of callables or a callable")
    return -4.0 * f0 + 3.0 * x * f1 - x * x * f2 + 4.0 - 4.0 * math.exp(-f2)


def exact_triple(c):
    """(F, F', F'') callables for ode_residual: closed forms for c = inf, quadrature otherwise."""
    fam = as_family(c)
    if fam.infinite:
        return (f_infinity, lambda x: _f_inf_derivs(x)[1], lambda x: _f_inf_derivs(x)[2])
    return (lambda x: f_c(x, fam), lambda x: f_c_prime(x, fam),
            lambda x: math.log(g_c(x, fam)))


__all__.append("exact_triple")


# ---------------------------------------------------------------------------
# conjecture probe
# ---------------------------------------------------------------------------

@dataclass
class MatchReport:
    """Least-squares fit of the F_c family plus a tangent parabola to a curve.

    This is a probe of an unproven conjecture, never a pass/fail gate.
    """

    c: float
    gluing_point: float
    residual: float
    points: int
    label: str = "conjecture probe: fitted F_c family against the variational F"

    def as_dict(self) -> dict:
        return {"label": self.label, "c": "inf" if math.isinf(self.c) else self.c,
                "gluing_point": self.gluing_point, "residual": self.residual,
                "points": self.points}


def _family_on_grid(fam: OdeFamilyParam, x_lo: float, n: int = 2001):
    """F_c, F_c' on a fine grid over [x_lo, 2] from log G by cumulative integration."""
    z = np.linspace(x_lo, 2.0, n)
    lg = np.array([math.log(g_c(v, fam)) for v in z])
    # integrate from the right end: F' = -int_x^2 log G, F = -int_x^2 F'
    d1 = -integrate.cumulative_simpson(lg[::-1], x=-z[::-1], initial=0.0)[::-1]
    d0 = -integrate.cumulative_simpson(d1[::-1], x=-z[::-1], initial=0.0)[::-1]
    return z, d0, d1


def _candidate(fam, qp, grid):
    """Piecewise candidate for one c: tangent point where F_c' = eta x, then the parabola."""
    lo = max(x_min(fam), grid[0]) if not fam.infinite else max(1e-6, grid[0])
    lo = lo + 1e-9 * (1 + abs(lo))
    z, d0, d1 = _family_on_grid(fam, lo)
    gap = d1 - qp.eta * z
    # F_c' - eta x is positive near 2 and decreases leftwards where the fit makes sense
    sign = np.nonzero(np.diff(np.sign(gap)))[0]
    if len(sign):
        k = sign[-1]
        x0 = z[k] - gap[k] * (z[k + 1] - z[k]) / (gap[k + 1] - gap[k])
    else:
        x0 = z[0]
    fc = np.interp(grid, z, d0)
    par = np.asarray(parabola(grid, qp))
    vals = np.where(grid < x0, par, np.where(grid > 2.0, 0.0, fc))
    return vals, float(x0)


def match_c(qp, F_var: RateCurve, c_bounds=(0.05, 200.0)) -> MatchReport:
    """Fit c (and the induced tangent point) to a variational F curve on [x_q - 1, 2]."""
    qp = as_qparam(qp)
    m = F_var.finite & (F_var.grid <= 2.0)
    grid, target = F_var.grid[m], F_var.values[m]
    if len(grid) < 5:
        raise DomainError("F_var needs at least five finite samples left of 2")

    def loss(logc):
        fam = OdeFamilyParam(math.exp(logc))
        try:
            vals, _ = _candidate(fam, qp, grid)
        except (DomainError, SolverError, ValueError):
            return math.inf
        return float(np.sqrt(np.mean((vals - target) ** 2)))

    a, b = math.log(c_bounds[0]), math.log(c_bounds[1])
    coarse = np.linspace(a, b, 25)
    losses = [loss(v) for v in coarse]
    k = int(np.argmin(losses))
    res = optimize.minimize_scalar(loss, bounds=(coarse[max(k - 1, 0)], coarse[min(k + 1, 24)]),
                                   method="bounded", options={"xatol": 1e-4})
    best_c, best = math.exp(res.x), res.fun
    inf_vals, inf_x0 = _candidate(OdeFamilyParam(math.inf), qp, grid[grid > 0])
    inf_loss = float(np.sqrt(np.mean((inf_vals - target[grid > 0]) ** 2))) if len(inf_vals) else math.inf
    if inf_loss < best:
        return MatchReport(math.inf, inf_x0, inf_loss, int((grid > 0).sum()))
    _, x0 = _candidate(OdeFamilyParam(best_c), qp, grid)
    return MatchReport(best_c, x0, float(best), len(grid))
