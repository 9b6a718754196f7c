"""Rate functions: upper tail, the lower-tail variational problem, conjugations.

Shapes live in rotated coordinates: a diagram of unit area with its first
row pointing to the left has boundary ``|u| + h(u)`` where ``h >= 0`` has
slopes in [0, 2] left of the origin and in [-2, 0] right of it.  The
Vershik-Kerov-Logan-Shepp (VKLS) limit shape is supported on [-sqrt 2, sqrt 2].

The lower-tail function is

    F(x) = inf_{kappa, h} 1 + kappa log kappa + kappa (2 I(h) + V(x / sqrt kappa; h))

with I the hook integral and V the area penalty.  Shapes are discretized as
piecewise-linear functions on a uniform grid; the log-energy of a
piecewise-constant slope vector is an exact quadratic form, so the inner
problem is a convex QP in the slopes.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import AccuracyError, DomainError, InputError
from .partitions import as_partition
from .specialfn import QParam, as_qparam

SQRT2 = math.sqrt(2.0)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

# ---------------------------------------------------------------------------
# upper tail
# ---------------------------------------------------------------------------


def phi_plus(mu):
    """Upper-tail rate 2 mu arccosh(mu/2) - 2 sqrt(mu^2 - 4) for mu >= 2."""
    arr = np.asarray(mu, dtype=float)
    if np.any(arr < 2.0):
        raise DomainError("phi_plus needs mu >= 2")
    out = 2.0 * arr * np.arccosh(arr / 2.0) - 2.0 * np.sqrt(arr * arr - 4.0)
    return float(out) if np.ndim(out) == 0 else out


def phi_plus_prime(mu):
    arr = np.asarray(mu, dtype=float)
    if np.any(arr < 2.0):
        raise DomainError("phi_plus needs mu >= 2")
    out = 2.0 * np.log((arr + np.sqrt(arr * arr - 4.0)) / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def upsilon(p):
    """Lyapunov exponent 4 sinh(p/2)."""
    out = 4.0 * np.sinh(np.asarray(p, dtype=float) / 2.0)
    return float(out) if np.ndim(out) == 0 else out


def u_v(v: float, x):
    """v x - phi_plus(x); maximal at x = 2 cosh(v/2) with value upsilon(v)."""
    return v * np.asarray(x, dtype=float) - phi_plus(x)


def golden_min(f: Callable[[float], float], a: float, b: float, tol: float = 1e-9,
               max_iter: int = 500):
    """Golden-section search for the minimum of a unimodal f on [a, b]."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return (c, fc) if fc <= fd else (d, fd)


# ---------------------------------------------------------------------------
# sampled curves
# ---------------------------------------------------------------------------

@dataclass
class RateCurve:
    """Function sampled on an increasing grid; +inf entries mark points off the domain."""

    grid: np.ndarray
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.grid.shape != self.values.shape or self.grid.ndim != 1:
            raise InputError("grid and values must be 1-d arrays of equal length")
        if np.any(np.diff(self.grid) <= 0):
            raise InputError("grid must be strictly increasing")
        if np.any(np.isnan(self.values)):
            raise InputError("values must not be NaN")

    @property
    def finite(self) -> np.ndarray:
        return np.isfinite(self.values)

    def __call__(self, x):
        """Piecewise-linear interpolation over the finite samples."""
        m = self.finite
        return np.interp(x, self.grid[m], self.values[m])

    def second_differences(self) -> np.ndarray:
        g, v = self.grid[self.finite], self.values[self.finite]
        h1, h2 = np.diff(g)[:-1], np.diff(g)[1:]
        d1, d2 = np.diff(v)[:-1] / h1, np.diff(v)[1:] / h2
        return (d2 - d1) / (0.5 * (h1 + h2))

    def convexity_defect(self) -> float:
        """Smallest second divided difference; >= 0 for convex samples."""
        sd = self.second_differences()
        return float(sd.min()) if len(sd) else 0.0

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "value", "flag"])
            for x, v in zip(self.grid, self.values):
                fin = bool(np.isfinite(v))
                w.writerow([repr(float(x)), repr(float(v)) if fin else "inf",
                            "finite" if fin else "inf"])

    @classmethod
    def read_csv(cls, path, meta: dict | None = None) -> "RateCurve":
        xs, vs = [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                xs.append(float(row["x"]))
                vs.append(math.inf if row["flag"] == "inf" else float(row["value"]))
        return cls(np.array(xs), np.array(vs), dict(meta or {}))


def legendre(func, x_grid, bracket: tuple = (0.0, 60.0), tol: float = 1e-9,
             max_expand: int = 20) -> RateCurve:
    """sup_p (p x - func(p)) at each x.

    A callable is maximized by golden section on ``bracket``; the upper end
    is doubled while the maximizer sits on it, and after ``max_expand``
    doublings the sup is reported as +inf.  A :class:`RateCurve` input is
    treated as its piecewise-linear interpolant, whose conjugate is attained
    at a vertex.
    """
    xs = np.asarray(x_grid, dtype=float)
    out = np.empty(len(xs))
    if isinstance(func, RateCurve):
        g, v = func.grid[func.finite], func.values[func.finite]
        for i, x in enumerate(xs):
            out[i] = np.max(g * x - v)
        return RateCurve(xs, out, {"kind": "legendre", "source": func.meta.get("kind")})
    lo, hi0 = bracket
    for i, x in enumerate(xs):
        hi = hi0
        for _ in range(max_expand + 1):
            p, val = golden_min(lambda p: func(p) - p * x, lo, hi, tol)
            if hi - p > 10 * tol * max(1.0, hi):
                out[i] = -val
                break
            hi = lo + 2.0 * (hi - lo)
        else:
            out[i] = math.inf
    return RateCurve(xs, out, {"kind": "legendre", "bracket": list(bracket)})


# ---------------------------------------------------------------------------
# shapes
# ---------------------------------------------------------------------------

def vkls_shape(x):
    """VKLS profile minus |x|: (2/pi)(sqrt(2 - x^2) + x arcsin(x/sqrt 2)) - |x|."""
    arr = np.asarray(x, dtype=float)
    out = np.zeros_like(arr)
    m = np.abs(arr) < SQRT2
    xm = arr[m]
    out[m] = (2.0 / math.pi) * (np.sqrt(2.0 - xm * xm) + xm * np.arcsin(xm / SQRT2)) - np.abs(xm)
    return float(out) if np.ndim(out) == 0 else out


def vkls_slope(x):
    arr = np.asarray(x, dtype=float)
    out = np.zeros_like(arr)
    m = np.abs(arr) < SQRT2
    out[m] = (2.0 / math.pi) * np.arcsin(arr[m] / SQRT2) - np.sign(arr[m])
    return out


@dataclass
class ShapeGrid:
    """Piecewise-linear h sampled at ``left + k step``; the origin is a node."""

    left: float
    right: float
    step: float
    values: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.validate()

    @property
    def nodes(self) -> np.ndarray:
        return self.left + self.step * np.arange(len(self.values))

    @property
    def slopes(self) -> np.ndarray:
        return np.diff(self.values) / self.step

    @property
    def area(self) -> float:
        return float(np.trapezoid(self.values, dx=self.step))

    def validate(self) -> None:
        n = len(self.values)
        if n < 3 or self.step <= 0:
            raise InputError("shape needs at least three nodes and a positive step")
        if abs(self.left + (n - 1) * self.step - self.right) > 1e-9 * max(1.0, abs(self.right)):
            raise InputError("node count does not match [left, right] and step")
        k0 = -self.left / self.step
        if abs(k0 - round(k0)) > 1e-9:
            raise InputError("the origin must be a grid node")
        v, tol = self.values, self.tol
        if np.any(v < -tol):
            raise InputError("h must be nonnegative")
        if abs(v[0]) > tol or abs(v[-1]) > tol:
            raise InputError("h must vanish at both ends of the grid")
        s = self.slopes
        mid = self.nodes[:-1] + 0.5 * self.step
        band = 1e-7
        if np.any((mid < 0) & ((s < -band) | (s > 2 + band))):
            raise InputError("left of the origin h must be nondecreasing and 2-Lipschitz")
        if np.any((mid > 0) & ((s > band) | (s < -2 - band))):
            raise InputError("right of the origin h must be nonincreasing and 2-Lipschitz")
        if abs(self.area - 1.0) > max(tol, 1e-9):
            raise InputError(f"h must have unit area, got {self.area!r}")

    def mirror(self) -> "ShapeGrid":
        """h(-x): the transposed diagram."""
        return ShapeGrid(-self.right, -self.left, self.step, self.values[::-1].copy(), self.tol)

    def __call__(self, x):
        return np.interp(x, self.nodes, self.values, left=0.0, right=0.0)

    @classmethod
    def from_function(cls, f, left: float = -8.0, right: float = 8.0, nodes: int = 801,
                      normalize: bool = True) -> "ShapeGrid":
        """Sample f on the grid, zero the ends, and rescale to unit area."""
        x = np.linspace(left, right, nodes)
        step = (right - left) / (nodes - 1)
        v = np.maximum(np.asarray(f(x), dtype=float), 0.0)
        v[0] = v[-1] = 0.0
        if normalize:
            v = v / np.trapezoid(v, dx=step)
        return cls(left, right, step, v)

    @classmethod
    def vkls(cls, left: float = -8.0, right: float = 8.0, nodes: int = 801) -> "ShapeGrid":
        return cls.from_function(vkls_shape, left, right, nodes)

    @classmethod
    def from_partition(cls, lam, sub: int = 1, reach: float = 2.0) -> "ShapeGrid":
        """Rescaled diagram of lambda (area 1), first row to the left.

        Corners sit at integer multiples of 1/sqrt(2n); ``sub`` refines the
        grid and ``reach`` is the minimal half-width of the domain.
        """
        lam = as_partition(lam)
        n = lam.size
        if n == 0:
            raise InputError("empty partition has no unit-area shape")
        ks, omega = _integer_profile(lam.parts)
        unit = 1.0 / math.sqrt(2.0 * n)
        step = unit / sub
        half = max(reach, (max(lam.first_row, len(lam)) + 1) * unit)
        kk = int(math.ceil(half / step))
        x = step * np.arange(-kk, kk + 1)
        prof = np.interp(x / unit, ks, omega - np.abs(ks), left=0.0, right=0.0) * unit
        return cls(-kk * step, kk * step, step, prof)


def _integer_profile(rows):
    """Boundary heights a + b at integer u = a - b, walking from (0, rows[0]) to (len, 0).

    ``a`` counts rows and ``b`` columns; each unit step changes u by one.
    """
    a, b = 0, rows[0]
    us, vs = [a - b], [a + b]
    for i, r in enumerate(rows):
        nxt = rows[i + 1] if i + 1 < len(rows) else 0
        a += 1
        us.append(a - b)
        vs.append(a + b)
        while b > nxt:
            b -= 1
            us.append(a - b)
            vs.append(a + b)
    return np.asarray(us), np.asarray(vs, dtype=float)


# ---------------------------------------------------------------------------
# discretized functionals
# ---------------------------------------------------------------------------

def _g2(x):
    # second antiderivative of log|x|: x^2/2 log|x| - 3x^2/4
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0, 0.0, 0.5 * x * x * np.log(np.abs(x)) - 0.75 * x * x)


def _g1(x):
    # first antiderivative of log|x|: x log|x| - x
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(x == 0, 0.0, x * np.log(np.abs(x)) - x)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(40)


def _panel_nodes(breaks: np.ndarray):
    a, b = breaks[:-1], breaks[1:]
    s = 0.5 * (b - a)[:, None] * _GL_X[None, :] + 0.5 * (a + b)[:, None]
    w = 0.5 * (b - a)[:, None] * _GL_W[None, :]
    return s.ravel(), w.ravel()


class Discretization:
    """Grid-dependent matrices of the hook functional (cached per grid)."""

    def __init__(self, left: float, step: float, cells: int):
        self.left, self.step, self.cells = float(left), float(step), int(cells)
        d = self.step
        self.edges = self.left + d * np.arange(cells + 1)
        self.nodes = self.edges
        self.mid = self.edges[:-1] + 0.5 * d
        k = np.arange(cells) * d
        col = _g2(k + d) - 2.0 * _g2(k) + _g2(k - d)
        idx = np.arange(cells)
        # log-energy: Q(h) = -1/2 d^T L d for slope vector d
        self.L = col[np.abs(idx[:, None] - idx[None, :])]
        self.beta = self._beta()
        self.arc = self._arccosh_moments()
        # linear term of the LS form: int h'(t) (t log|t| - t) dt per cell
        self.ls_lin = _g2(self.edges[1:]) - _g2(self.edges[:-1])
        self.lo = np.where(self.mid < 0, 0.0, -2.0)
        self.hi = np.where(self.mid < 0, 2.0, 0.0)
        self._lip = None

    def _beta(self) -> np.ndarray:
        # beta_i = int v'(s) log-cell integral; Q(v, h) = -1/2 d . beta
        e = self.edges
        inner = e[(e > -SQRT2) & (e < SQRT2)]
        br = np.unique(np.concatenate([inner, [-SQRT2, 0.0, SQRT2]]))
        s, w = _panel_nodes(br)
        vp = vkls_slope(s) * w
        out = np.empty(self.cells)
        chunk = 128
        f_e = None
        for i0 in range(0, self.cells + 1, chunk):
            i1 = min(i0 + chunk, self.cells + 1)
            vals = _g1(s[None, :] - e[i0:i1, None]) @ vp
            f_e = vals if f_e is None else np.concatenate([f_e, vals])
        out[:] = f_e[:-1] - f_e[1:]
        return out

    def _arccosh_moments(self) -> np.ndarray:
        # m_k = int hat_k(y) arccosh(|y|/sqrt 2) over |y| > sqrt 2
        e, d = self.edges, self.step
        br = np.unique(np.concatenate([e, [-SQRT2, SQRT2]]))
        br = br[(br >= e[0]) & (br <= e[-1])]
        s, w = _panel_nodes(br)
        a = np.where(np.abs(s) > SQRT2, np.arccosh(np.maximum(np.abs(s) / SQRT2, 1.0)), 0.0)
        cell = np.clip(((s - self.left) / d).astype(int), 0, self.cells - 1)
        frac = (s - e[cell]) / d
        m = np.zeros(self.cells + 1)
        np.add.at(m, cell, w * a * (1.0 - frac))
        np.add.at(m, cell + 1, w * a * frac)
        return m

    # node-linear functionals pulled back to slopes: h_k = step * sum_{i<k} d_i
    def pull_back(self, node_weights: np.ndarray) -> np.ndarray:
        tail = np.cumsum(node_weights[::-1])[::-1]
        return self.step * tail[1:]

    def heights(self, d: np.ndarray) -> np.ndarray:
        return self.step * np.concatenate([[0.0], np.cumsum(d)])

    def partial_weights(self, c: float) -> np.ndarray:
        """Node weights w with w . h = int_{-inf}^{c} h for piecewise-linear h."""
        x, d = self.nodes, self.step
        w = np.zeros_like(x)
        lo, hi = x - d, x + d
        a = (c > lo) & (c <= x)
        w[a] = (c - lo[a]) ** 2 / (2 * d)
        b = (c > x) & (c < hi)
        w[b] = d - (hi[b] - c) ** 2 / (2 * d)
        w[c >= hi] = d
        return w

    def lipschitz(self) -> float:
        if self._lip is None:
            n = self.cells
            proj = np.eye(n) - 1.0 / n
            self._lip = float(np.linalg.eigvalsh(proj @ (-self.L) @ proj)[-1])
        return self._lip


@lru_cache(maxsize=8)
def _disc(left: float, step: float, cells: int) -> Discretization:
    return Discretization(left, step, cells)


def discretization(shape: ShapeGrid) -> Discretization:
    return _disc(round(shape.left, 12), round(shape.step, 15), len(shape.values) - 1)


def log_energy(shape: ShapeGrid) -> float:
    """-1/2 double integral of log|s-t| h'(s) h'(t): the squared H^{1/2} norm."""
    dz = discretization(shape)
    d = shape.slopes
    return float(-0.5 * d @ dz.L @ d)


def hook_integral(shape: ShapeGrid) -> float:
    """Hook integral as -1/2 + ||v - h||^2 / 2 + int_{|y|>sqrt 2} h arccosh(|y|/sqrt 2).

    ||.||^2 is the log-energy (H^{1/2} seminorm squared), with v the VKLS
    shape whose own energy is 1.
    """
    dz = discretization(shape)
    d = shape.slopes
    q_diff = 1.0 + d @ dz.beta - 0.5 * d @ dz.L @ d
    return float(-0.5 + 0.5 * q_diff + dz.arc @ shape.values)


def hook_integral_ls(shape: ShapeGrid) -> float:
    """Hook integral via the log-energy form log 2 / 2 + Q(h)/2 - int h'(t)(t log|t| - t)."""
    dz = discretization(shape)
    d = shape.slopes
    return float(0.5 * math.log(2.0) - 0.25 * d @ dz.L @ d - d @ dz.ls_lin)


def area_left_of(shape: ShapeGrid, c: float) -> float:
    return float(discretization(shape).partial_weights(c) @ shape.values)


def v_q(x: float, shape: ShapeGrid, qp) -> float:
    """Area penalty eta ([-x]_+^2 / 2 + int_{-inf}^{-x/sqrt 2} h)."""
    qp = as_qparam(qp)
    neg = max(-x, 0.0)
    return qp.eta * (0.5 * neg * neg + area_left_of(shape, -x / SQRT2))


def w_q(kappa: float, shape: ShapeGrid, x: float, qp) -> float:
    """1 + kappa log kappa + 2 kappa I(h) + kappa V(x / sqrt kappa; h)."""
    if kappa <= 0:
        raise DomainError("kappa must be positive")
    qp = as_qparam(qp)
    return (1.0 + kappa * math.log(kappa) + 2.0 * kappa * hook_integral(shape)
            + kappa * v_q(x / math.sqrt(kappa), shape, qp))


def j_eta(shape: ShapeGrid, y: float, eta: float) -> float:
    """-1 + ||v - h||^2 + 2 int h arccosh + eta [-y]_+^2/2 + eta int_{xi >= y/sqrt 2} h.

    Evaluated on the transposed diagram this equals 2 I + V(y) of the
    original one.
    """
    dz = discretization(shape)
    d = shape.slopes
    q_diff = 1.0 + d @ dz.beta - 0.5 * d @ dz.L @ d
    right = float(shape.values @ (dz.step * _trap_weights(len(shape.values)))) \
        - float(dz.partial_weights(y / SQRT2) @ shape.values)
    neg = max(-y, 0.0)
    return -1.0 + q_diff + 2.0 * float(dz.arc @ shape.values) + eta * (0.5 * neg * neg + right)


def _trap_weights(n: int) -> np.ndarray:
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    return w


def kappa_star(qp) -> float:
    """Upper root (> 1) of 1 + kappa log kappa - kappa = eta."""
    qp = as_qparam(qp)
    f = lambda k: 1.0 + k * math.log(k) - k - qp.eta
    lo, hi = 1.0, 2.0
    while f(hi) < 0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# inner convex problem: U(y) = min_h 2 I(h) + V(y; h)
# ---------------------------------------------------------------------------

@dataclass
class SolverOptions:
    left: float = -8.0
    right: float = 8.0
    nodes: int = 801
    max_iter: int = 20000
    grad_tol: float = 1e-7
    kappa_tol: float = 1e-6
    kappa_min: float = 1e-6

    @property
    def step(self) -> float:
        return (self.right - self.left) / (self.nodes - 1)

    def disc(self) -> Discretization:
        return _disc(round(self.left, 12), round(self.step, 15), self.nodes - 1)


@dataclass
class InnerResult:
    value: float
    shape: ShapeGrid
    iterations: int
    history: np.ndarray
    converged: bool


class _Projector:
    """Euclidean projection onto the band box intersected with sum d = 0 and unit area.

    Solved exactly through the two-dimensional concave dual with a damped
    semismooth Newton ascent; the multipliers are warm-started.
    """

    def __init__(self, dz: Discretization):
        self.lo, self.hi = dz.lo, dz.hi
        self.A = np.vstack([np.ones(dz.cells), dz.mid])
        self.b = np.array([0.0, -1.0 / dz.step])
        self.lam = None

    def _primal(self, z, lam):
        return np.clip(z - self.A.T @ lam, self.lo, self.hi)

    def _dual(self, z, lam):
        d = self._primal(z, lam)
        return 0.5 * np.sum((d - z) ** 2) + lam @ (self.A @ d - self.b), d

    def __call__(self, z: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        A, b = self.A, self.b
        if self.lam is None:
            self.lam = np.linalg.solve(A @ A.T, A @ z - b)
        lam = self.lam.copy()
        val, d = self._dual(z, lam)
        scale = 1.0 + np.abs(b).max()
        for _ in range(200):
            r = A @ d - b
            if np.max(np.abs(r)) < tol * scale:
                break
            free = (z - A.T @ lam > self.lo) & (z - A.T @ lam < self.hi)
            Af = A[:, free]
            H = Af @ Af.T + 1e-12 * np.eye(2)
            try:
                step = np.linalg.solve(H, r)
            except np.linalg.LinAlgError:
                step = r
            t = 1.0
            for _ in range(60):
                cand = lam + t * step
                cval, cd = self._dual(z, cand)
                if cval >= val + 1e-4 * t * (r @ step) - 1e-15 * abs(val):
                    break
                t *= 0.5
            lam, val, d = cand, cval, cd
        else:
            raise AccuracyError("projection did not converge", partial=d,
                                diagnostics={"residual": float(np.max(np.abs(A @ d - b)))})
        self.lam = lam
        return d


def _objective_terms(dz: Discretization, y: float, eta: float):
    """Linear coefficient and constant of 2 I + V(y) as a function of slopes."""
    node_w = 2.0 * dz.arc + eta * dz.partial_weights(-y / SQRT2)
    lin = dz.beta + dz.pull_back(node_w)
    neg = max(-y, 0.0)
    return lin, 0.5 * eta * neg * neg


def _initial_slopes(dz: Discretization) -> np.ndarray:
    h = vkls_shape(dz.nodes)
    return np.diff(h) / dz.step


def solve_inner(y: float, qp, opts: SolverOptions | None = None,
                start: np.ndarray | None = None) -> InnerResult:
    """min over discretized shapes of 2 I(h) + V(y; h) by monotone FISTA.

    The iterate is projected onto the admissible slopes each step; the
    objective is recorded and never increases.  Raises AccuracyError (with
    the best value as ``partial``) when the projected-gradient norm does not
    fall below ``opts.grad_tol`` within ``opts.max_iter`` iterations.
    """
    qp = as_qparam(qp)
    opts = opts or SolverOptions()
    dz = opts.disc()
    P = -dz.L
    lin, const = _objective_terms(dz, y, qp.eta)
    proj = _Projector(dz)
    lip = dz.lipschitz()

    def obj(d):
        return 0.5 * d @ (P @ d) + lin @ d + const

    x = proj(_initial_slopes(dz) if start is None else np.asarray(start, dtype=float))
    fx = obj(x)
    yk, t = x.copy(), 1.0
    hist = [fx]
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = P @ yk + lin
        z = proj(yk - g / lip)
        gm = lip * np.max(np.abs(z - yk))
        fz = obj(z)
        x_old = x
        if fz <= fx:
            x, fx = z, fz
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        yk = x + (t / t_new) * (z - x) + ((t - 1.0) / t_new) * (x - x_old)
        t = t_new
        hist.append(fx)
        if gm < opts.grad_tol:
            converged = True
            break
        if fz > fx or (yk - z) @ (x - x_old) > 0:
            # adaptive restart: drop momentum once it points uphill
            yk, t = x.copy(), 1.0
    h = dz.heights(x)
    h[-1] = 0.0
    h = np.maximum(h, 0.0)
    shape = ShapeGrid(opts.left, opts.right, dz.step, h, tol=1e-7)
    res = InnerResult(float(fx), shape, it, np.asarray(hist), converged)
    if not converged:
        raise AccuracyError("inner solver did not converge", partial=res,
                            diagnostics={"y": y, "iterations": it, "grad_map": float(gm)})
    return res


def u_closed_form(y: float, qp) -> float | None:
    """U(y) where the VKLS shape is optimal, else None.

    For y >= 2 the penalty vanishes on VKLS and U = -1; for
    y <= -2 cosh(eta/2) VKLS is optimal with U = -1 + eta (y^2/2 + 1).
    """
    qp = as_qparam(qp)
    if y >= 2.0:
        return -1.0
    if y <= -2.0 * math.cosh(0.5 * qp.eta):
        return -1.0 + qp.eta * (0.5 * y * y + 1.0)
    return None


@dataclass
class FResult:
    value: float
    kappa: float
    shape: ShapeGrid
    history: list


def minimize_f(x: float, qp, opts: SolverOptions | None = None) -> FResult:
    """F(x) by golden section over kappa in (kappa_min, kappa*] of the inner minimum.

    Each kappa evaluation solves the discretized convex shape problem at
    y = x / sqrt(kappa), warm-started from the previous solution.
    """
    qp = as_qparam(qp)
    opts = opts or SolverOptions()
    cache: dict = {}
    state = {"start": None}
    history = []

    def outer(kappa):
        y = x / math.sqrt(kappa)
        res = solve_inner(y, qp, opts, start=state["start"])
        state["start"] = np.diff(res.shape.values) / res.shape.step
        val = 1.0 + kappa * math.log(kappa) + kappa * res.value
        cache[kappa] = res
        history.append((kappa, val))
        return val

    kmax = kappa_star(qp)
    # golden section on log kappa: the optimum can sit near either end
    lk, val = golden_min(lambda u: outer(math.exp(u)), math.log(opts.kappa_min),
                         math.log(kmax), tol=opts.kappa_tol)
    kappa = math.exp(lk)
    return FResult(float(val), kappa, cache[kappa].shape, history)


def _solve_chain(args):
    ys, q, opts = args
    vals, start = [], None
    for y in ys:
        res = solve_inner(float(y), q, opts, start=start)
        start = np.diff(res.shape.values) / res.shape.step
        vals.append(res.value)
    return vals


class UTable:
    """U(y) = min_h 2 I(h) + V(y; h) tabulated on the band where VKLS is not optimal.

    Knots run from y_c = -2 cosh(eta/2) to 2, the two points where the
    optimal shape leaves VKLS; U is C^1 there with U'(y_c) = eta y_c and
    U'(2) = 0, which fixes a clamped cubic spline.  Outside the band the
    closed forms apply, shifted by the discretization offsets measured at
    the knots so that the curve stays continuous.
    """

    def __init__(self, qp, opts: SolverOptions | None = None, y_step: float = 0.05,
                 workers: int = 1):
        self.qp = as_qparam(qp)
        self.opts = opts or SolverOptions()
        self.yc = -2.0 * math.cosh(0.5 * self.qp.eta)
        n = max(int(math.ceil((2.0 - self.yc) / y_step)), 4)
        self.y = np.linspace(self.yc, 2.0, n + 1)
        # chains sweep right to left so each warm start comes from a neighbour
        ys = self.y[::-1]
        workers = max(1, int(workers))
        if workers == 1:
            vals = _solve_chain((ys, self.qp.q, self.opts))
        else:
            from concurrent.futures import ProcessPoolExecutor
            parts = np.array_split(ys, workers)
            with ProcessPoolExecutor(workers) as ex:
                chunks = list(ex.map(_solve_chain, [(p, self.qp.q, self.opts) for p in parts]))
            vals = [v for c in chunks for v in c]
        self.u = np.asarray(vals)[::-1]
        self.spline = CubicSpline(self.y, self.u,
                                  bc_type=((1, self.qp.eta * self.yc), (1, 0.0)))
        self.off_lo = float(self.u[0] - u_closed_form(self.yc, self.qp))
        self.off_hi = float(self.u[-1] + 1.0)

    def __call__(self, y: float) -> float:
        if y <= self.yc:
            return u_closed_form(y, self.qp) + self.off_lo
        if y >= 2.0:
            return -1.0 + self.off_hi
        return float(self.spline(y))


def f_from_u(x: float, u: Callable[[float], float], qp, kappa_min: float = 1e-6,
             tol: float = 1e-10):
    """min over kappa of 1 + kappa log kappa + kappa U(x / sqrt kappa); returns (F, kappa)."""
    qp = as_qparam(qp)
    kmax = kappa_star(qp)
    f = lambda lk: 1.0 + math.exp(lk) * lk + math.exp(lk) * u(x * math.exp(-0.5 * lk))
    lk, val = golden_min(f, math.log(kappa_min), math.log(kmax), tol)
    return val, math.exp(lk)


def f_curve(x_grid, qp, opts: SolverOptions | None = None, table: UTable | None = None,
            y_step: float = 0.05, workers: int = 1) -> RateCurve:
    """F on a grid through a tabulated inner minimum U."""
    qp = as_qparam(qp)
    table = table or UTable(qp, opts, y_step=y_step, workers=workers)
    y_step = float(table.y[1] - table.y[0])
    xs = np.asarray(x_grid, dtype=float)
    vals, kap = np.empty(len(xs)), np.empty(len(xs))
    for i, x in enumerate(xs):
        vals[i], kap[i] = f_from_u(float(x), table, qp)
    opts = table.opts
    meta = {"kind": "F", "q": qp.q, "kappa": kap.tolist(),
            "solver": {"left": opts.left, "right": opts.right, "nodes": opts.nodes,
                       "grad_tol": opts.grad_tol, "y_step": y_step},
            "u_offsets": [float(table.off_lo), float(table.off_hi)]}
    return RateCurve(xs, vals, meta)


def parabola(x, qp):
    qp = as_qparam(qp)
    return (1.0 - qp.q) + 0.5 * qp.eta * np.asarray(x, dtype=float) ** 2


def locate_x_q(curve: RateCurve, qp, tol: float = 1e-3) -> float:
    """Largest grid x with |F(x) - (1-q) - eta x^2/2| < tol among the leading run."""
    gap = np.abs(curve.values - parabola(curve.grid, qp))
    ok = gap < tol
    if not ok[0]:
        return math.nan
    idx = np.argmin(ok) - 1 if not ok.all() else len(ok) - 1
    return float(curve.grid[idx])


# ---------------------------------------------------------------------------
# infimal convolution and deconvolution with a parabola
# ---------------------------------------------------------------------------

def inf_conv(f: RateCurve, eta: float, out_grid) -> RateCurve:
    """inf_y f(y) + eta (x - y)^2 / 2 by the lower envelope of parabolas.

    Samples marked +inf are excluded.  Runs in linear time once the
    envelope is built (Felzenszwalb-Huttenlocher distance transform).
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    m = f.finite
    ys, fs = f.grid[m], f.values[m]
    xs = np.asarray(out_grid, dtype=float)
    if len(ys) == 0:
        return RateCurve(xs, np.full(len(xs), math.inf), {"kind": "inf_conv"})
    # parabola j: eta/2 x^2 - eta y_j x + (f_j + eta/2 y_j^2); intersections in x
    c = fs + 0.5 * eta * ys * ys
    v = [0]
    z = [-math.inf, math.inf]
    for j in range(1, len(ys)):
        while True:
            k = v[-1]
            s = (c[j] - c[k]) / (eta * (ys[j] - ys[k]))
            if s <= z[-2]:
                v.pop()
                z.pop()
                if not v:
                    break
            else:
                break
        if not v:
            v = [j]
            z = [-math.inf, math.inf]
        else:
            v.append(j)
            z[-1] = s
            z.append(math.inf)
    z = np.asarray(z)
    pick = np.asarray(v)[np.searchsorted(z, xs, side="right") - 1]
    out = fs[pick] + 0.5 * eta * (xs - ys[pick]) ** 2
    return RateCurve(xs, out, {"kind": "inf_conv", "eta": eta})


def sup_deconv(f: RateCurve, eta: float, out_grid, finite_from: float | None = None) -> RateCurve:
    """sup_y f(y) - eta (mu - y)^2 / 2 over the piecewise-linear interpolant of f.

    On a segment with slope s the inner function is concave with maximizer
    y = mu + s/eta; the sup is the best of the clipped segment maxima, so the
    result is a max of affine-plus-parabola pieces and is exact for the
    interpolant.  Points ``mu < finite_from`` are returned as +inf.
    """
    if eta <= 0:
        raise DomainError("eta must be positive")
    m = f.finite
    ys, fs = f.grid[m], f.values[m]
    mus = np.asarray(out_grid, dtype=float)
    y0, y1 = ys[:-1], ys[1:]
    sl = np.diff(fs) / np.diff(ys)
    out = np.empty(len(mus))
    for i, mu in enumerate(mus):
        yy = np.clip(mu + sl / eta, y0, y1)
        vals = fs[:-1] + sl * (yy - y0) - 0.5 * eta * (mu - yy) ** 2
        out[i] = max(vals.max(), fs[-1] - 0.5 * eta * (mu - ys[-1]) ** 2)
    if finite_from is not None:
        out[mus < finite_from] = math.inf
    return RateCurve(mus, out, {"kind": "sup_deconv", "eta": eta})


def phi_minus(F: RateCurve, qp, mu_grid) -> RateCurve:
    """Lower-tail rate: sup-deconvolution of F by the eta parabola, +inf for mu < 0."""
    qp = as_qparam(qp)
    out = sup_deconv(F, qp.eta, mu_grid, finite_from=0.0)
    out.meta.update({"kind": "phi_minus", "q": qp.q})
    return out


def lipschitz_ratio(F: RateCurve) -> float:
    """Largest |Delta F' / Delta x| of the sampled curve."""
    return float(np.max(np.abs(F.second_differences())))


def moreau_check(F: RateCurve, phi_m: RateCurve, eta: float, window=(-3.0, 3.0)) -> dict:
    """Consistency report for F = (eta parabola) inf-convolved with phi_minus."""
    back = inf_conv(phi_m, eta, F.grid)
    sel = (F.grid >= window[0]) & (F.grid <= window[1])
    gap = np.abs(F.values[sel] - back.values[sel])
    return {
        "sup_gap": float(gap.max()),
        "lipschitz_ratio": lipschitz_ratio(F),
        "eta": float(eta),
        "convexity_defect_F": F.convexity_defect(),
        "convexity_defect_phi_minus": phi_m.convexity_defect(),
    }


def empty_cplan_log_mass(t: float, qp) -> float:
    """log P(lambda = rho = empty) under cPlan(t(1-q)): -t^2 (1-q) + log (q;q)_inf."""
    from .specialfn import q_pochhammer
    qp = as_qparam(qp)
    return -t * t * (1.0 - qp.q) + math.log(q_pochhammer(qp.q, qp.q))
