"""Exact event-driven simulation of q-PNG from the droplet initial condition.

Coordinates are light-cone: u = (t + x)/sqrt(2), v = (t - x)/sqrt(2).  A NE
ray keeps v fixed and moves in +u, a NW ray keeps u fixed and moves in +v.
The NE ray from (u1, v1) meets the NW ray from (u2, v2) iff u2 > u1 and
v1 > v2, at the point (u2, v1).

Nucleations are swept in increasing u.  When the sweep reaches a nucleation
at (u_j, v_j), the status of every NE ray at u = u_j is already final, so
the new NW ray can climb through the live NE rays above v_j one by one,
flipping an independent q-coin at each meeting: heads both rays continue,
tails both end.  Each collision depends only on events with smaller u on
the NE ray and smaller v on the NW ray, so the sweep respects the time
order u + v of every causal chain.
"""
from __future__ import annotations

import csv
import math
import os
from bisect import bisect_right, insort
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import SeededStream, as_stream
from .errors import AccuracyError, DomainError, RangeError
from .specialfn import f_q_array

SQRT2 = math.sqrt(2.0)
MINUS_INF = -(2**62)  # marker returned by height outside the cone


@dataclass
class SimConfig:
    q: float
    t_max: float
    lam: float | None = None
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.q <= 1.0):
            raise DomainError("q must lie in [0, 1]")
        if self.lam is None:
            self.lam = 2.0 * (1.0 - self.q)
        if self.lam < 0 or self.t_max <= 0:
            raise DomainError("intensity must be nonnegative and t_max positive")
        if int(self.trials) < 1:
            raise DomainError("trials must be at least 1")
        self.trials = int(self.trials)


@dataclass
class RayDiagram:
    """One q-PNG trajectory.

    ``nucleations``: (N, 2) array of (u, v).  ``ne``: rows (v, u_birth, u_death)
    and ``nw``: rows (u, v_birth, v_death), one per nucleation in the sorted
    order of ``nucleations``.  ``crossings``: rows (u, v, outcome) with outcome
    1 for cross and 0 for annihilate.  Rays alive at the edge of the
    simulated region end there.
    """

    nucleations: np.ndarray
    ne: np.ndarray
    nw: np.ndarray
    crossings: np.ndarray
    region: tuple
    meta: dict = field(default_factory=dict)

    def covers(self, x: float, t: float) -> bool:
        u = (t + x) / SQRT2
        v = (t - x) / SQRT2
        kind = self.region[0]
        if kind == "triangle":
            return u + v <= self.region[1] * (1 + 1e-12)
        return u <= self.region[1] * (1 + 1e-12) and v <= self.region[2] * (1 + 1e-12)

    def live_segments(self):
        """List of (kind, birth(u, v), death(u, v)) tuples."""
        segs = []
        for v, ub, ud in self.ne:
            segs.append(("NE", (ub, v), (ud, v)))
        for u, vb, vd in self.nw:
            segs.append(("NW", (u, vb), (u, vd)))
        return segs

    def write_csv(self, path):
        """Trajectory dump with columns event_type,u,v,outcome."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["event_type", "u", "v", "outcome"])
            for u, v in self.nucleations:
                w.writerow(["nucleation", repr(float(u)), repr(float(v)), ""])
            for u, v, o in self.crossings:
                w.writerow(["collision", repr(float(u)), repr(float(v)),
                            "cross" if o else "annihilate"])


def _sweep(points: np.ndarray, q: float, u_lim, v_lim, rng: np.random.Generator):
    """Core sweep; ``u_lim(v)``/``v_lim(u)`` bound the region."""
    n = len(points)
    ne = np.empty((n, 3))
    nw = np.empty((n, 3))
    cross = []
    levels: list = []   # v of live NE rays, sorted
    owners: list = []   # nucleation index of each live NE ray
    ties = 0
    coins = rng.random(max(64, 4 * n))
    ci = 0
    for j in range(n):
        uj, vj = points[j]
        top = v_lim(uj)
        nw[j] = (uj, vj, top)
        idx = bisect_right(levels, vj)
        if idx > 0 and levels[idx - 1] == vj:
            ties += 1
        while idx < len(levels) and levels[idx] <= top:
            vi = levels[idx]
            if ci >= len(coins):
                coins = rng.random(len(coins))
                ci = 0
            heads = coins[ci] < q
            ci += 1
            cross.append((uj, vi, 1 if heads else 0))
            if heads:
                idx += 1
                continue
            i = owners.pop(idx)
            levels.pop(idx)
            ne[i, 2] = uj
            nw[j, 2] = vi
            break
        ne[j] = (vj, uj, u_lim(vj))
        pos = bisect_right(levels, vj)
        levels.insert(pos, vj)
        owners.insert(pos, j)
    cr = np.array(cross, dtype=float).reshape(-1, 3)
    return ne, nw, cr, ties


def _nucleations_triangle(lam, T, gen):
    n = int(gen.poisson(lam * T * T / 2.0))
    pts = gen.random((n, 2)) * T
    flip = pts.sum(axis=1) > T
    pts[flip] = T - pts[flip][:, ::-1]
    return pts


def _nucleations_rect(lam, U, V, gen):
    n = int(gen.poisson(lam * U * V))
    pts = gen.random((n, 2))
    pts[:, 0] *= U
    pts[:, 1] *= V
    return pts


def _order(pts):
    return pts[np.lexsort((pts[:, 1], pts[:, 0]))] if len(pts) else pts.reshape(0, 2)


def simulate(config: SimConfig, rng) -> RayDiagram:
    """Full trajectory on the cone up to time t_max."""
    stream = as_stream(rng)
    gen = stream.gen
    T = SQRT2 * config.t_max
    pts = _order(_nucleations_triangle(config.lam, T, gen))
    ne, nw, cr, ties = _sweep(pts, config.q, lambda v: T - v, lambda u: T - u, gen)
    return RayDiagram(pts, ne, nw, cr, ("triangle", T), {"ties": ties})


def simulate_backward_cone(config: SimConfig, x: float, t: float, rng) -> RayDiagram:
    """Trajectory restricted to the rectangle [0,U] x [0,V] below (x, t).

    Every ray crossing the segment from the origin to (x, t), together with
    all collisions that decide its fate, lies inside this rectangle, so the
    height at (x, t) has the same law as under :func:`simulate`.
    """
    if abs(x) >= t:
        raise DomainError("need |x| < t")
    stream = as_stream(rng)
    gen = stream.gen
    U = (t + x) / SQRT2
    V = (t - x) / SQRT2
    pts = _order(_nucleations_rect(config.lam, U, V, gen))
    ne, nw, cr, ties = _sweep(pts, config.q, lambda v: U, lambda u: V, gen)
    return RayDiagram(pts, ne, nw, cr, ("rect", U, V), {"ties": ties})


def height(diagram: RayDiagram, x: float, t: float) -> int:
    """Number of rays crossing the open segment from (0, 0) to (x, t).

    Returns ``MINUS_INF`` when |x| > t.
    """
    if abs(x) > t:
        return MINUS_INF
    if not diagram.covers(x, t):
        raise RangeError("query point lies beyond the simulated region")
    U = (t + x) / SQRT2
    V = (t - x) / SQRT2
    if U <= 0 or V <= 0:
        return 0
    count = 0
    ne = diagram.ne
    if len(ne):
        v = ne[:, 0]
        uc = v * U / V
        count += int(np.count_nonzero((v > 0) & (v < V) & (ne[:, 1] < uc) & (uc < ne[:, 2])))
    nw = diagram.nw
    if len(nw):
        u = nw[:, 0]
        vc = u * V / U
        count += int(np.count_nonzero((u > 0) & (u < U) & (nw[:, 1] < vc) & (vc < nw[:, 2])))
    return count


# ---------------------------------------------------------------------------
# Monte Carlo drivers
# ---------------------------------------------------------------------------

def default_workers() -> int:
    """Worker count from QPNG_THREADS, else the number of logical cores."""
    env = os.environ.get("QPNG_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _heights_chunk(args):
    q, lam, seed, x, t, start, stop, full = args
    cfg = SimConfig(q=q, t_max=t, lam=lam, seed=seed)
    out = np.empty(stop - start, dtype=np.int64)
    for k, trial in enumerate(range(start, stop)):
        stream = SeededStream(seed, trial)
        d = simulate(cfg, stream) if full else simulate_backward_cone(cfg, x, t, stream)
        out[k] = height(d, x, t)
    return out


def sample_heights(config: SimConfig, x: float, t: float, trials: int | None = None,
                   workers: int | None = None, stream_offset: int = 0,
                   full: bool = False) -> np.ndarray:
    """Heights h(x, t) of independent trials; trial i uses stream id offset + i.

    By default each trial simulates only the backward light-cone rectangle
    of (x, t); ``full`` simulates the whole cone up to time t instead.  The
    result does not depend on ``workers``: chunks are reassembled in trial
    order.
    """
    if not (abs(x) < t <= config.t_max * (1 + 1e-12)):
        raise RangeError("need |x| < t <= t_max")
    trials = config.trials if trials is None else int(trials)
    workers = default_workers() if workers is None else max(1, int(workers))
    lo = stream_offset
    full = bool(full)
    if workers == 1 or trials < 64:
        return _heights_chunk((config.q, config.lam, config.seed, x, t, lo, lo + trials, full))
    edges = np.linspace(lo, lo + trials, 4 * workers + 1).astype(int)
    jobs = [(config.q, config.lam, config.seed, x, t, int(a), int(b), full)
            for a, b in zip(edges[:-1], edges[1:]) if b > a]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        parts = list(ex.map(_heights_chunk, jobs))
    return np.concatenate(parts)


@dataclass
class EmpiricalCDF:
    thresholds: np.ndarray
    p_hat: np.ndarray
    stderr: np.ndarray
    samples: np.ndarray

    @classmethod
    def from_samples(cls, h: np.ndarray, thresholds=None) -> "EmpiricalCDF":
        """CDF at the given integer thresholds, or over [min h, max h] by default."""
        h = np.asarray(h, dtype=np.int64)
        if thresholds is None:
            thr = np.arange(int(h.min()), int(h.max()) + 1, dtype=np.int64)
        else:
            thr = np.asarray(list(thresholds), dtype=np.int64)
        p = (h[None, :] <= thr[:, None]).mean(axis=1)
        se = np.sqrt(p * (1 - p) / len(h))
        return cls(thr, p, se, h)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["threshold", "p_hat", "stderr"])
            for s, p, e in zip(self.thresholds, self.p_hat, self.stderr):
                w.writerow([int(s), repr(float(p)), repr(float(e))])


def mc_cdf(config: SimConfig, x: float, t: float, thresholds=None,
           workers=None) -> EmpiricalCDF:
    """Empirical P(h(x, t) <= s) with binomial standard errors."""
    h = sample_heights(config, x, t, workers=workers)
    return EmpiricalCDF.from_samples(h, thresholds)


def mc_q_laplace(config: SimConfig, zeta: float, t: float, workers=None, x: float = 0.0):
    """Monte Carlo mean of F_q(zeta q^{-h(0, t)}); returns (estimate, stderr)."""
    if zeta == 0:
        return 1.0, 0.0
    if not (0.0 < config.q < 1.0):
        raise DomainError("the q-Laplace transform needs 0 < q < 1")
    h = sample_heights(config, x, t, workers=workers)
    vals = f_q_array(zeta * config.q ** (-h.astype(float)), config.q)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals)))


def mc_mgf(config: SimConfig, p: float, t: float, workers=None, batches: int = 20,
           max_rel_err: float = 0.2):
    """Monte Carlo E[exp(p h(0, t))] with a batch-means error certificate.

    Returns (estimate, stderr).  Raises AccuracyError (with the partial
    estimate attached) when the batch-means relative error exceeds
    ``max_rel_err``.
    """
    if p == 0:
        return 1.0, 0.0
    h = sample_heights(config, 0.0, t, workers=workers).astype(float)
    # scale out the largest exponent to avoid overflow
    shift = p * h.max()
    w = np.exp(p * h - shift)
    nb = max(2, min(batches, len(w) // 2))
    means = np.array([b.mean() for b in np.array_split(w, nb)])
    est = w.mean()
    se = means.std(ddof=1) / math.sqrt(nb)
    rel = se / est
    value = est * math.exp(shift)
    if rel > max_rel_err or not math.isfinite(value):
        raise AccuracyError("moment generating function estimate not certified",
                            partial=(value, se * math.exp(shift)),
                            diagnostics={"relative_error": rel, "batches": nb})
    return value, se * math.exp(shift)
