"""Discrete Bessel kernel: entries, derivatives, Fredholm determinants, traces.

The kernel on half-integers a, b is

    K_{zeta,gamma}(a, b) = sum_{l in Z + 1/2} w_l J_{a+l}(x) J_{b+l}(x),
    w_l = 1 / (1 + zeta^{-1} q^l),   x = 2 gamma / (1 - q).

Internally half-integers are shifted to integers: row i stands for
a = s + 1/2 + i and column m of the Bessel matrix for l = m - 1/2, so the
Bessel order a + l = s + i + m is an integer.  The truncated kernel is then
``B diag(w) B^T`` with ``B[i, m] = J_{s+i+m}(x)``, which is symmetric and
has spectrum in [0, 1] by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import gammaln, i0e, logsumexp

from .errors import AccuracyError, DomainError, RangeError
from .specialfn import QParam, as_qparam, bessel_j_range, log_reg_inc_beta

DET_TOL = 1e-10
DET_STEP = 8
DET_MAX_DIM = 512
WEIGHT_CUT = 1e-16
BESSEL_CUT = 1e-17
MAX_DERIV = 8


@dataclass(frozen=True)
class KernelSpec:
    zeta: float
    gamma: float
    qp: QParam

    def __post_init__(self):
        if not (self.zeta > 0 and self.gamma > 0):
            raise DomainError("zeta and gamma must be positive")
        object.__setattr__(self, "qp", as_qparam(self.qp))

    @property
    def x(self) -> float:
        """Bessel argument 2 gamma / (1 - q)."""
        return 2.0 * self.gamma / (1.0 - self.qp.q)


def qpng_kernel_spec(t: float, zeta: float, qp) -> KernelSpec:
    """Kernel of the q-PNG identity: zeta -> zeta / sqrt(q), gamma = t (1 - q)."""
    qp = as_qparam(qp)
    return KernelSpec(zeta / math.sqrt(qp.q), t * (1.0 - qp.q), qp)


# ---------------------------------------------------------------------------
# windows and weights
# ---------------------------------------------------------------------------

def bessel_cutoff(x: float, tol: float = BESSEL_CUT) -> int:
    """Smallest K >= x/2 with sum_{k>K} J_k(x)^2 below tol.

    Uses |J_k(x)| <= (x/2)^k / k!, whose ratio (x/2)/(k+1) is below 1/2 once
    k >= x, so the tail is at most twice the first dropped bound squared.
    """
    if x <= 0:
        return 0
    half = 0.5 * x
    k = max(int(math.ceil(x)), 1)
    log_tol = math.log(tol / 2.0)
    while 2.0 * (k + 1) * math.log(half) - 2.0 * math.lgamma(k + 2.0) > log_tol:
        k += 1
    return k


def _bessel_window(x: float, kmax: int) -> np.ndarray:
    """J_k(x) for k = -kmax..kmax."""
    pos = bessel_j_range(kmax, x)
    neg = pos[:0:-1].copy()
    neg[(kmax - np.arange(kmax)) % 2 == 1] *= -1.0  # J_{-k} = (-1)^k J_k
    return np.concatenate([neg, pos])


def _weight_floor(zeta: float, qp: QParam, tol: float = WEIGHT_CUT) -> int:
    # w_{m-1/2} <= zeta q^{1/2 - m} < tol for m below the returned value
    return int(math.floor(0.5 + (math.log(zeta) + math.log(tol)) / qp.eta))


def _log_r(m, qp: QParam):
    # log q^{m - 1/2}
    return -qp.eta * (np.asarray(m, dtype=float) - 0.5)


def _weights(m, zeta: float, qp: QParam, n: int = 0) -> np.ndarray:
    """n-th zeta-derivative of zeta / (zeta + r_m), r_m = q^{m - 1/2}.

    n = 0 gives the weight 1 / (1 + r_m / zeta); n >= 1 gives
    (-1)^{n+1} n! r_m (zeta + r_m)^{-n-1}, evaluated in logs.
    """
    lr = _log_r(m, qp)
    lz = math.log(zeta)
    if n == 0:
        return np.exp(-np.logaddexp(0.0, lr - lz))
    log_abs = math.lgamma(n + 1.0) + lr - (n + 1) * np.logaddexp(lz, lr)
    return (-1.0) ** (n + 1) * np.exp(log_abs)


def _half_to_int(a) -> int:
    two = 2.0 * float(a)
    k = int(round(two))
    if abs(two - k) > 1e-9 or k % 2 == 0:
        raise DomainError(f"{a} is not a half-integer")
    return (k - 1) // 2


# ---------------------------------------------------------------------------
# entries
# ---------------------------------------------------------------------------

def _entry(spec: KernelSpec, a, b, n: int) -> float:
    ia, ib = _half_to_int(a), _half_to_int(b)
    kmax = bessel_cutoff(spec.x)
    jw = _bessel_window(spec.x, kmax)
    # orders ia + m and ib + m must both lie in [-kmax, kmax]
    lo = max(-kmax - ia, -kmax - ib)
    hi = min(kmax - ia, kmax - ib)
    if n == 0:
        lo = max(lo, _weight_floor(spec.zeta, spec.qp))
    if hi < lo:
        return 0.0
    m = np.arange(lo, hi + 1)
    w = _weights(m, spec.zeta, spec.qp, n)
    return float(np.sum(w * jw[ia + m + kmax] * jw[ib + m + kmax]))


def kernel_entry(spec: KernelSpec, a, b) -> float:
    """K_{zeta,gamma}(a, b) for half-integers a, b."""
    return _entry(spec, a, b, 0)


def kernel_deriv_entry(spec: KernelSpec, n: int, a, b) -> float:
    """n-th derivative in spec.zeta of K_{zeta,gamma}(a, b), 1 <= n <= 8.

    For the q-PNG kernel K_{zeta/sqrt(q), t(1-q)} the derivative in the
    unshifted zeta is this value times q^{-n/2}.
    """
    n = int(n)
    if not 1 <= n <= MAX_DERIV:
        raise DomainError("derivative order must be in 1..8")
    return _entry(spec, a, b, n)


# ---------------------------------------------------------------------------
# truncated kernel and determinant
# ---------------------------------------------------------------------------

@dataclass
class TruncatedKernel:
    """K restricted to rows a = s + 1/2, ..., s + dim - 1/2."""

    dim: int
    entries: np.ndarray
    offset: int
    ell_window: tuple
    certified_tail: float
    meta: dict = field(default_factory=dict)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.entries)


def _log_tail_mass(spec: KernelSpec, s: int, dim: int) -> float:
    # sum_{i>=dim} K(i,i) <= zeta q^{s+dim+1/2} / (1-q) * sum_k q^{-k} J_k^2
    # and sum_k z^k J_k(x)^2 at z = 1/q equals I_0(2 x sinh(eta/2))
    qp = spec.qp
    y = 2.0 * spec.x * math.sinh(0.5 * qp.eta)
    log_i0 = math.log(i0e(y)) + y
    return (math.log(spec.zeta) - qp.eta * (s + dim + 0.5)
            - math.log1p(-qp.q) + log_i0)


def truncated_kernel(spec: KernelSpec, s: int, dim: int) -> TruncatedKernel:
    """Dense dim x dim block of the kernel on l^2(s + 1/2, s + 3/2, ...)."""
    s, dim = int(s), int(dim)
    if dim < 1:
        raise DomainError("dim must be positive")
    kmax = bessel_cutoff(spec.x)
    jw = _bessel_window(spec.x, kmax)
    lo = max(-kmax - s - (dim - 1), _weight_floor(spec.zeta, spec.qp))
    hi = kmax - s
    if hi < lo:
        mat = np.zeros((dim, dim))
        window = (lo, lo)
    else:
        m = np.arange(lo, hi + 1)
        orders = s + np.arange(dim)[:, None] + m[None, :]
        inside = np.abs(orders) <= kmax
        bmat = np.where(inside, jw[np.clip(orders + kmax, 0, 2 * kmax)], 0.0)
        w = _weights(m, spec.zeta, spec.qp)
        mat = (bmat * w) @ bmat.T
        mat = 0.5 * (mat + mat.T)
        window = (int(lo), int(hi))
    tail = math.exp(min(_log_tail_mass(spec, s, dim), 700.0))
    return TruncatedKernel(dim, mat, s, window, tail, {"kmax": kmax})


@dataclass
class DetResult:
    value: float
    trunc_err: float
    dim: int

    def __float__(self) -> float:
        return self.value


def _det_identity_minus(mat: np.ndarray) -> float:
    lu, piv = sla.lu_factor(np.eye(len(mat)) - mat, check_finite=False)
    d = np.diag(lu)
    sign = (-1.0) ** np.count_nonzero(piv != np.arange(len(piv)))
    return float(sign * np.prod(d))


def fredholm_det(spec: KernelSpec, s: int = 0, full: bool = False):
    """det(I - K) on l^2(s + 1/2, s + 3/2, ...) by growing dense truncations.

    The dimension grows by 8 until two successive determinants differ by
    less than 1e-10.  Returns the value, or a :class:`DetResult` with the
    truncation estimate when ``full`` is set.  The estimate is the larger of
    the last increment and the certified bound on the dropped diagonal mass.
    """
    s = int(s)
    # rows past the weight cut carry nothing; start near where they matter
    kmax = bessel_cutoff(spec.x)
    build = 64
    big = truncated_kernel(spec, s, build)
    dim = DET_STEP
    prev = _det_identity_minus(big.entries[:dim, :dim])
    while True:
        nxt = dim + DET_STEP
        if nxt > DET_MAX_DIM:
            raise AccuracyError(
                "determinant did not converge by dimension 512", partial=prev,
                diagnostics={"dim": dim, "kmax": kmax, "zeta": spec.zeta,
                             "gamma": spec.gamma, "q": spec.qp.q, "s": s})
        if nxt > build:
            build = min(2 * build, DET_MAX_DIM)
            big = truncated_kernel(spec, s, build)
        cur = _det_identity_minus(big.entries[:nxt, :nxt])
        if abs(cur - prev) < DET_TOL:
            tail = math.exp(min(_log_tail_mass(spec, s, nxt), 0.0))
            value = min(max(cur, 0.0), 1.0)
            if full:
                return DetResult(value, max(abs(cur - prev), tail), nxt)
            return value
        prev, dim = cur, nxt


def shifted_cdf(gamma: float, qp, zeta: float, s: int, full: bool = False):
    """P(lambda_1 + S_zeta <= s) under the cylindric Plancherel measure."""
    return fredholm_det(KernelSpec(zeta, gamma, qp), s, full=full)


def q_laplace(t: float, zeta: float, qp, full: bool = False):
    """E[F_q(zeta q^{-h(0,t)})] = det(I - K_{zeta/sqrt(q), t(1-q)}) on l^2(N')."""
    if zeta == 0:
        return DetResult(1.0, 0.0, 0) if full else 1.0
    qp = as_qparam(qp)
    return shifted_cdf(t * (1.0 - qp.q), qp, zeta / math.sqrt(qp.q), 0, full=full)


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

def trace(spec: KernelSpec, n: int = 0) -> float:
    """sum_{a in N'} of the n-th zeta-derivative kernel on the diagonal.

    With k = a + l the double sum becomes sum_k J_k^2 C_k where C_k is the
    cumulative sum of the weights up to column k, so only one pass is needed.
    """
    n = int(n)
    if not 0 <= n <= MAX_DERIV:
        raise DomainError("derivative order must be in 0..8")
    kmax = bessel_cutoff(spec.x)
    jw = _bessel_window(spec.x, kmax)
    # weights (and derivative weights) decay like q^{-m} as m -> -inf
    lo = min(_weight_floor(spec.zeta, spec.qp, WEIGHT_CUT * 1e-4), -kmax)
    m = np.arange(lo, kmax + 1)
    csum = np.cumsum(_weights(m, spec.zeta, spec.qp, n))
    k = np.arange(-kmax, kmax + 1)
    return float(np.sum(jw ** 2 * csum[k - lo]))


def trace_integral_params(p: float, qp) -> dict:
    """s, n, alpha, delta and Upsilon(p) used by :func:`trace_integral`."""
    qp = as_qparam(qp)
    s = p / qp.eta
    fl = math.floor(s)
    ups = 4.0 * math.sinh(0.5 * p)
    delta = (ups - 2.0 * p) / 4.0
    return {"s": s, "n": int(fl) + 1, "alpha": s - fl, "delta": delta, "upsilon": ups}


def trace_integral(p: float, t: float, qp) -> float:
    """(1/t) log of n! sum_{a,l} e^{p(l+1/2)} J_{a+l}(2t)^2 I_{y_l}(alpha, n).

    Writing m = l + 1/2 and T(m) = sum_{k>=m} J_k(2t)^2 the double sum is
    sum_m e^{pm} I_{y_m}(alpha, n) T(m), with y_m = 1 / (1 + tau^{-1} q^m)
    and log tau = -(Upsilon(p) - delta) t / s.
    """
    if not (p > 0 and t > 0):
        raise DomainError("p and t must be positive")
    qp = as_qparam(qp)
    par = trace_integral_params(p, qp)
    s, n, alpha = par["s"], par["n"], par["alpha"]
    log_tau = -(par["upsilon"] - par["delta"]) * t / s
    x = 2.0 * t
    kmax = bessel_cutoff(x, 1e-300)
    if kmax > 20_000:
        raise RangeError("t too large for the Bessel window")
    jw = _bessel_window(x, kmax)
    k = np.arange(-kmax, kmax + 1)
    # T(m) for m in [-kmax, kmax]; T = 1 below the window
    tail = np.cumsum((jw ** 2)[::-1])[::-1]
    tail = np.minimum(tail / tail[0], 1.0)

    def log_terms(m):
        log_y = -np.logaddexp(0.0, -log_tau - qp.eta * m)
        lb = np.array([log_reg_inc_beta(v, alpha, n) for v in log_y])
        with np.errstate(divide="ignore"):
            lt = np.where(m < -kmax, 0.0, np.log(tail[np.clip(m + kmax, 0, 2 * kmax)]))
        return p * m + lb + lt

    mid = log_terms(k)
    peak = float(np.max(mid))
    # below the window each term is at most e^{pm}; the geometric tail is
    # certified once it drops under e^{-40} of the peak
    lo = -kmax
    while p * lo - math.log1p(-math.exp(-p)) > peak - 40.0:
        lo -= max(kmax, 16)
    extra = np.arange(lo, -kmax)
    total = mid if len(extra) == 0 else np.concatenate([log_terms(extra), mid])
    # the dropped orders above kmax carry at most 1e-300 of Bessel mass
    if p * (kmax + 1) + math.log(1e-300) > peak - 40.0:
        raise AccuracyError("trace integral window not certified", partial=None,
                            diagnostics={"p": p, "t": t, "kmax": kmax})
    return float((gammaln(n + 1.0) + logsumexp(total)) / t)
