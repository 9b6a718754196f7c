"""Special functions: Bessel J, q-Pochhammer products, theta normalizer,
the F_q product, Lambert W and the incomplete Beta integral.

Everything here is pure and works in double precision.  Infinite products
are truncated once the factor deviates from 1 by less than ``PRODUCT_TOL``;
the neglected tail then changes the logarithm of the product by at most
``PRODUCT_TOL / (1 - q)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RangeError

PRODUCT_TOL = 1e-17
MAX_ORDER = 10**6
MAX_ARG = 1e5

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(24)
# geometric panels toward the origin absorb the x^r endpoint behaviour
_PANEL_EDGES = np.concatenate([[0.0], 0.25 ** np.arange(24, 0, -1), [1.0]])


@dataclass(frozen=True)
class QParam:
    """Deformation parameter q in (0, 1) together with eta = log(1/q)."""

    q: float
    eta: float = field(init=False)

    def __post_init__(self):
        q = float(self.q)
        if not (0.0 < q < 1.0):
            raise DomainError(f"q must lie in (0, 1), got {q}")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "eta", -math.log(q))


def as_qparam(q) -> QParam:
    return q if isinstance(q, QParam) else QParam(q)


# ---------------------------------------------------------------------------
# Bessel functions of integer order
# ---------------------------------------------------------------------------

def _miller_start(nmax: int, x: float) -> int:
    m = max(nmax, int(math.ceil(x))) + 30 + int(6.0 * math.sqrt(max(x, 1.0)))
    return m + (m % 2)


def bessel_j_range(nmax: int, x: float) -> np.ndarray:
    """Return ``[J_0(x), ..., J_nmax(x)]`` by Miller's backward recurrence.

    The recurrence is started well above ``max(nmax, x)`` and normalized
    with J_0 + 2 sum_k J_2k = 1, which keeps the relative error uniform even
    for orders far beyond the argument.
    """
    nmax = int(nmax)
    x = float(x)
    if nmax < 0:
        raise RangeError("nmax must be nonnegative")
    if x < 0 or not math.isfinite(x):
        raise RangeError(f"argument must be finite and nonnegative, got {x}")
    if x > MAX_ARG:
        raise RangeError(f"argument {x} exceeds supported range {MAX_ARG}")
    out = np.zeros(nmax + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    m = _miller_start(nmax, x)
    two_over_x = 2.0 / x
    jp1 = 0.0
    j = 1e-280
    norm = 0.0
    for k in range(m, 0, -1):
        jm1 = k * two_over_x * j - jp1
        jp1, j = j, jm1
        # j now holds the unnormalized J_{k-1}
        if abs(j) > 1e250:
            j *= 1e-250
            jp1 *= 1e-250
            norm *= 1e-250
            out *= 1e-250
        if k - 1 <= nmax:
            out[k - 1] = j
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j
    norm += j
    return out / norm


def _bessel_series(n: int, x: float) -> float:
    # power series in log form, used when x**2/4 is small next to n
    half = 0.5 * x
    log_pref = n * math.log(half) - math.lgamma(n + 1.0)
    if log_pref < -745.0:
        return 0.0
    term = 1.0
    total = 1.0
    z = -half * half
    k = 0
    while True:
        term *= z / ((k + 1) * (n + k + 1))
        total += term
        k += 1
        if abs(term) < 1e-17 * abs(total):
            break
    return math.exp(log_pref) * total


def bessel_j(n: int, x: float) -> float:
    """Bessel function of the first kind J_n(x) for integer n and x >= 0."""
    n = int(n)
    x = float(x)
    if abs(n) > MAX_ORDER:
        raise RangeError(f"|order| {abs(n)} exceeds {MAX_ORDER}")
    if x < 0 or not math.isfinite(x) or x > MAX_ARG:
        raise RangeError(f"argument {x} outside [0, {MAX_ARG}]")
    sign = 1.0
    if n < 0:
        n = -n
        sign = -1.0 if n % 2 else 1.0
    if x == 0.0:
        return sign if n == 0 else 0.0
    if x * x <= (n + 1):
        return sign * _bessel_series(n, x)
    return sign * float(bessel_j_range(n, x)[n])


def bessel_j_orders(orders, x: float) -> np.ndarray:
    """J_k(x) for an array of integer orders (negative orders allowed)."""
    orders = np.asarray(orders, dtype=np.int64)
    if orders.size == 0:
        return np.zeros(0)
    kmax = int(np.max(np.abs(orders)))
    table = bessel_j_range(kmax, x)
    vals = table[np.abs(orders)]
    odd_neg = (orders < 0) & (np.abs(orders) % 2 == 1)
    vals[odd_neg] *= -1.0
    return vals


# ---------------------------------------------------------------------------
# q-products
# ---------------------------------------------------------------------------

def _n_factors(a: float, q: float) -> int:
    if a == 0.0:
        return 0
    if abs(a) < PRODUCT_TOL:
        return 1
    return int(math.ceil(math.log(PRODUCT_TOL / abs(a)) / math.log(abs(q)))) + 1


def q_pochhammer(a: float, q: float, n=math.inf) -> float:
    """(a; q)_n = prod_{k<n} (1 - a q^k); ``n = math.inf`` for the infinite product."""
    a = float(a)
    q = float(q)
    if n == math.inf:
        if abs(q) >= 1.0:
            raise DomainError("infinite q-Pochhammer product diverges for |q| >= 1")
        if q == 0.0:
            return 1.0 - a
        n_terms = _n_factors(a, q)
    else:
        n_terms = int(n)
        if n_terms < 0:
            raise DomainError("n must be a natural number or infinity")
    if n_terms == 0:
        return 1.0
    factors = 1.0 - a * q ** np.arange(n_terms)
    return float(np.prod(factors))


def theta_norm(q: float, zeta: float) -> float:
    """Jacobi triple product (q;q)_inf (-sqrt(q) zeta;q)_inf (-sqrt(q)/zeta;q)_inf."""
    q = float(q)
    zeta = float(zeta)
    if not (0.0 < q < 1.0) or zeta <= 0.0:
        raise DomainError("theta_norm requires 0 < q < 1 and zeta > 0")
    r = math.sqrt(q)
    return (q_pochhammer(q, q) * q_pochhammer(-r * zeta, q)
            * q_pochhammer(-r / zeta, q))


def log_theta_norm(q: float, zeta: float) -> float:
    """log of :func:`theta_norm`, safe when the product overflows."""
    q = float(q)
    zeta = float(zeta)
    if not (0.0 < q < 1.0) or zeta <= 0.0:
        raise DomainError("theta_norm requires 0 < q < 1 and zeta > 0")
    r = math.sqrt(q)
    out = math.log(q_pochhammer(q, q))
    for a in (r * zeta, r / zeta):
        k = np.arange(_n_factors(a, q))
        out += float(np.sum(np.log1p(a * q ** k)))
    return out


def log_f_q(zeta: float, qp) -> float:
    """log F_q(zeta) = -sum_k log(1 + zeta q^k)."""
    qp = as_qparam(qp)
    zeta = float(zeta)
    if zeta < 0.0:
        raise DomainError("F_q is defined for zeta >= 0")
    if zeta == 0.0:
        return 0.0
    k = np.arange(_n_factors(zeta, qp.q))
    return -float(np.sum(np.log1p(zeta * qp.q ** k)))


def f_q(zeta: float, qp) -> float:
    """F_q(zeta) = prod_{k>=0} 1 / (1 + zeta q^k)."""
    return math.exp(log_f_q(zeta, qp))


def f_q_array(zeta, qp) -> np.ndarray:
    """Vectorized F_q for nonnegative arrays."""
    qp = as_qparam(qp)
    zeta = np.asarray(zeta, dtype=float)
    if np.any(zeta < 0):
        raise DomainError("F_q is defined for zeta >= 0")
    zmax = float(np.max(zeta)) if zeta.size else 0.0
    if zmax == 0.0:
        return np.ones_like(zeta)
    k = np.arange(_n_factors(zmax, qp.q))
    logs = np.log1p(zeta[..., None] * qp.q ** k).sum(axis=-1)
    return np.exp(-logs)


# ---------------------------------------------------------------------------
# Lambert W, principal branch
# ---------------------------------------------------------------------------

def lambert_w(x: float) -> float:
    """Principal branch W_0(x) for x >= -1/e via Halley iteration."""
    x = float(x)
    if math.isnan(x):
        raise DomainError("lambert_w of nan")
    branch = -math.exp(-1.0)
    if x < branch:
        if x > branch - 1e-15:
            x = branch
        else:
            raise DomainError(f"lambert_w requires x >= -1/e, got {x}")
    if x == 0.0:
        return 0.0
    if x == branch:
        return -1.0
    if math.isinf(x):
        return math.inf
    if x < -0.32:
        p = math.sqrt(2.0 * (math.e * x + 1.0))
        w = -1.0 + p - p * p / 3.0 + 11.0 / 72.0 * p ** 3
    elif x < 3.0:
        w = math.log1p(x) * (1.0 - math.log1p(math.log1p(x)) / (2.0 + math.log1p(x)))
    else:
        lx = math.log(x)
        w = lx - math.log(lx)
    for _ in range(60):
        ew = math.exp(w)
        f = w * ew - x
        wp1 = w + 1.0
        if wp1 == 0.0:
            break
        denom = ew * wp1 - (w + 2.0) * f / (2.0 * wp1)
        step = f / denom
        w -= step
        if abs(step) <= 1e-16 * (1.0 + abs(w)):
            break
    return w


def lambert_w_array(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.vectorize(lambert_w, otypes=[float])(x)


# ---------------------------------------------------------------------------
# incomplete Beta integral
# ---------------------------------------------------------------------------

def beta_complete(alpha: float, n: int) -> float:
    """B(1 - alpha, n + alpha) = Gamma(1-alpha) Gamma(n+alpha) / n!."""
    return math.exp(math.lgamma(1.0 - alpha) + math.lgamma(n + alpha) - math.lgamma(n + 1.0))


def _panels(f, lo, hi) -> float:
    lo = np.asarray(lo)[:, None]
    hi = np.asarray(hi)[:, None]
    s = lo + 0.5 * (hi - lo) * (_GL_NODES + 1.0)
    return float(np.sum(0.5 * (hi - lo) * (_GL_WEIGHTS * f(s))))


def _singular_integral(r: float, c: float, upper: float) -> float:
    """int_0^upper x^(-r) (1-x)^c dx for 0 <= r < 1 and upper <= 1/2.

    Geometric panels toward 0 keep Gauss-Legendre accurate on the outer
    part; on the innermost panel the substitution x = v^(1/(1-r)) removes
    the endpoint singularity exactly.
    """
    edges = upper * _PANEL_EDGES
    outer = _panels(lambda x: x ** (-r) * (1.0 - x) ** c, edges[1:-1], edges[2:])
    eps = edges[1]
    ex = 1.0 / (1.0 - r)
    inner = _panels(lambda v: (1.0 - v ** ex) ** c, [0.0], [eps ** (1.0 - r)]) / (1.0 - r)
    return outer + inner


def reg_inc_beta(y: float, alpha: float, n: int) -> float:
    """The integral of u^(-alpha) (1-u)^(n+alpha-1) over [0, y].

    At y = 1 this is the complete Beta value B(1-alpha, n+alpha).  The
    integrable singularity at u = 0 is removed by u = v^(1/(1-alpha)); for
    y > 1/2 the complementary piece near u = 1 is integrated instead.
    """
    y = float(y)
    alpha = float(alpha)
    n = int(n)
    if alpha >= 1.0 or alpha < 0.0:
        raise DomainError(f"alpha must lie in [0, 1), got {alpha}")
    if n < 1:
        raise DomainError("n must be a positive integer")
    if not (0.0 <= y <= 1.0):
        raise DomainError(f"y must lie in [0, 1], got {y}")
    if y == 0.0:
        return 0.0
    if y <= 0.5:
        return _singular_integral(alpha, n + alpha - 1.0, y)
    # complementary piece with w = 1 - u; w^(n+alpha-1) is the weak singularity there
    tail = _singular_integral(1.0 - n - alpha, -alpha, 1.0 - y) if n + alpha > 1.0 \
        else _singular_integral(0.0, -alpha, 1.0 - y)
    return beta_complete(alpha, n) - tail


def log_reg_inc_beta(log_y: float, alpha: float, n: int) -> float:
    """log of ``reg_inc_beta`` taking log(y), safe for y far below 1e-300."""
    if log_y > math.log(1e-200):
        y = math.exp(min(log_y, 0.0))
        return math.log(reg_inc_beta(y, alpha, n))
    # for tiny y the integrand is 1 + O(y) on [0, y]
    return (1.0 - alpha) * log_y - math.log(1.0 - alpha)
