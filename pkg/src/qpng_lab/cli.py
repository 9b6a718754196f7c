"""Command-line entry point: ``qpng-lab <command> [options]``.

Commands: simulate, fredholm, rate, ode, validate.  Every run writes CSV
data files and a JSON envelope ``{version, command, config, seed, started,
elapsed_s, results}`` into ``--out``.  Options may also come from a flat
``key = value`` file given by ``--config``; explicit flags win over the
file, which wins over the defaults.

Exit codes: 0 success, 1 criterion failure, 2 usage error, 3 numerical
accuracy failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .errors import AccuracyError, DomainError, InputError, QpngError, RangeError, SolverError

EXIT_OK, EXIT_CRITERION, EXIT_USAGE, EXIT_ACCURACY = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# parsing helpers
# ---------------------------------------------------------------------------

def _float_list(text: str) -> list:
    try:
        return [math.inf if v.strip().lower() in ("inf", "infinity") else float(v)
                for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs; ``#`` starts a comment; dashes in keys become underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = val
    return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key = value file with option defaults")
    p.add_argument("--out", default="qpng_out", help="output directory")
    p.add_argument("--seed", type=int, default=0, help="root seed for every random stream")
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: QPNG_THREADS or logical cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qpng-lab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"qpng-lab {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="Monte Carlo of the growth model")
    _common(p)
    p.add_argument("--q", type=float, default=0.3)
    p.add_argument("--lam", type=float, default=None, help="nucleation intensity (default 2(1-q))")
    p.add_argument("--t", type=_float_list, default=[3.0], help="time(s); two values compare")
    p.add_argument("--x", type=_float_list, default=[0.0], help="position(s) paired with --t")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--mode", choices=("cdf", "laplace", "mgf"), default="cdf")
    p.add_argument("--zeta", type=float, default=1.0, help="q-Laplace argument (mode laplace)")
    p.add_argument("--p", type=float, default=0.5, help="exponent (mode mgf)")

    p = sub.add_parser("fredholm", help="determinant sweeps and trace integrals")
    _common(p)
    p.add_argument("--q", type=float, default=0.3)
    p.add_argument("--t", type=float, default=3.0)
    p.add_argument("--zeta-min", type=float, default=1e-3)
    p.add_argument("--zeta-max", type=float, default=1e3)
    p.add_argument("--zeta-points", type=int, default=13)
    p.add_argument("--zeta", type=float, default=1.0, help="zeta of the s-sweep")
    p.add_argument("--s-min", type=int, default=-4)
    p.add_argument("--s-max", type=int, default=16)
    p.add_argument("--trace-p", type=float, default=1.0)
    p.add_argument("--trace-q", type=float, default=0.5)
    p.add_argument("--trace-times", type=_float_list, default=[20.0, 40.0, 80.0])

    p = sub.add_parser("rate", help="upper and lower tail rate functions")
    _common(p)
    p.add_argument("--q", type=float, default=0.5)
    p.add_argument("--x-min", type=float, default=-3.0)
    p.add_argument("--x-max", type=float, default=3.0)
    p.add_argument("--points", type=int, default=121)
    p.add_argument("--mu-min", type=float, default=-1.0)
    p.add_argument("--mu-max", type=float, default=4.0)
    p.add_argument("--mu-points", type=int, default=101)
    p.add_argument("--y-step", type=float, default=0.05, help="U-table spacing")
    p.add_argument("--direct", type=_bool, nargs="?", const=True, default=False,
                   help="minimize over kappa afresh at every x instead of tabulating U")
    p.add_argument("--match", type=_bool, nargs="?", const=True, default=True,
                   help="fit the F_c family to F (conjecture probe)")

    p = sub.add_parser("ode", help="closed-form ODE family")
    _common(p)
    p.add_argument("--c", type=_float_list, default=[2.0, 5.0, math.inf])
    p.add_argument("--x-min", type=float, default=0.05)
    p.add_argument("--x-max", type=float, default=2.0)
    p.add_argument("--points", type=int, default=40)

    p = sub.add_parser("validate", help="acceptance checks with a pass/fail matrix")
    _common(p)
    p.add_argument("--quick", type=_bool, nargs="?", const=True, default=False,
                   help="deterministic subset only")
    p.add_argument("--only", type=_int_list, default=None, help="criterion ids, e.g. 1,9,11")
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("a command is required: simulate, fredholm, rate, ode or validate")
    if getattr(args, "config", None):
        file_vals = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = sorted(set(file_vals) - known)
        if unknown:
            raise UsageError(f"unknown keys in {args.config}: {', '.join(unknown)}")
        file_vals.pop("config", None)
        # string defaults go through each option's type, so flags still win
        sub.set_defaults(**file_vals)
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _num(v) -> str:
    v = float(v)
    return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")


def write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in r])


class Run:
    """Collects results and files for one command and writes the JSON envelope."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.started = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self.t0 = time.perf_counter()
        self.results: dict = {"files": []}

    def path(self, name: str) -> Path:
        p = self.out / f"{self.args.command}_{name}"
        self.results["files"].append(p.name)
        return p

    def config(self) -> dict:
        skip = {"command", "out", "config", "threads"}
        return _clean({k: v for k, v in sorted(vars(self.args).items()) if k not in skip})

    def finish(self, status: str = "ok") -> Path:
        env = {
            "version": __version__,
            "command": self.args.command,
            "config": self.config(),
            "seed": self.args.seed,
            "started": self.started,
            "elapsed_s": round(time.perf_counter() - self.t0, 3),
            "results": _clean(dict(self.results, status=status)),
        }
        p = self.out / f"{self.args.command}_meta.json"
        p.write_text(json.dumps(env, indent=2, sort_keys=True) + "\n")
        return p


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(run: Run) -> int:
    from scipy import stats

    from .qpng_sim import EmpiricalCDF, SimConfig, mc_mgf, mc_q_laplace, sample_heights

    a = run.args
    if len(a.t) != len(a.x) or len(a.t) not in (1, 2):
        raise UsageError("--x and --t take one value each, or two each for comparison")
    if a.trials < 1:
        raise UsageError("--trials must be positive")
    if a.mode != "cdf" and len(a.t) != 1:
        raise UsageError("comparison mode is only available with --mode cdf")
    samples = []
    for k, (x, t) in enumerate(zip(a.x, a.t)):
        cfg = SimConfig(q=a.q, t_max=t, lam=a.lam, trials=a.trials, seed=a.seed)
        tag = f"x{x:g}_t{t:g}"
        if a.mode == "cdf":
            # distinct streams per point so compared samples are independent
            h = sample_heights(cfg, x, t, stream_offset=k * a.trials)
            cdf = EmpiricalCDF.from_samples(h)
            cdf.write_csv(run.path(f"cdf_{tag}.csv"))
            samples.append(h)
            run.results[tag] = {"mean": float(h.mean()), "var": float(h.var(ddof=1)),
                                "min": int(h.min()), "max": int(h.max())}
        elif a.mode == "laplace":
            est, se = mc_q_laplace(cfg, a.zeta, t, x=x)
            write_rows(run.path(f"laplace_{tag}.csv"), ["zeta", "t", "estimate", "stderr"],
                       [(a.zeta, t, est, se)])
            run.results[tag] = {"estimate": est, "stderr": se}
        else:
            est, se = mc_mgf(cfg, a.p, t)
            write_rows(run.path(f"mgf_{tag}.csv"), ["p", "t", "estimate", "stderr"],
                       [(a.p, t, est, se)])
            run.results[tag] = {"estimate": est, "stderr": se}
    if len(samples) == 2:
        ks = stats.ks_2samp(samples[0], samples[1])
        run.results["two_sample_ks"] = {"statistic": float(ks.statistic),
                                        "p_value": float(ks.pvalue)}
        print(f"two-sample KS statistic {ks.statistic:.5f}, p-value {ks.pvalue:.4f}")
    return EXIT_OK


def cmd_fredholm(run: Run) -> int:
    from . import fredholm, ratefn
    from .specialfn import as_qparam

    a = run.args
    qp = as_qparam(a.q)
    if a.zeta_points < 1 or a.zeta_min <= 0 or a.zeta_max < a.zeta_min:
        raise UsageError("need 0 < zeta-min <= zeta-max and zeta-points >= 1")
    gamma = a.t * (1.0 - qp.q)
    rows = []
    for z in np.geomspace(a.zeta_min, a.zeta_max, a.zeta_points):
        res = fredholm.q_laplace(a.t, float(z), qp, full=True)
        # stored with the kernel parameters of the shifted determinant
        rows.append((float(z / math.sqrt(qp.q)), gamma, qp.q, 0, res.value, res.trunc_err, res.dim))
    write_rows(run.path("zeta_sweep.csv"), ["zeta", "gamma", "q", "s", "det", "trunc_err", "dim"], rows)

    srows = []
    for s in range(a.s_min, a.s_max + 1):
        res = fredholm.shifted_cdf(gamma, qp, a.zeta, s, full=True)
        srows.append((a.zeta, gamma, qp.q, s, res.value, res.trunc_err, res.dim))
    dets = np.array([r[4] for r in srows])
    slack = np.array([r[5] for r in srows])
    if np.any(np.diff(dets) < -(slack[1:] + slack[:-1] + 1e-12)):
        raise AccuracyError("CDF in s is not monotone", diagnostics={"det": dets.tolist()})
    write_rows(run.path("s_sweep.csv"), ["zeta", "gamma", "q", "s", "det", "trunc_err", "dim"], srows)

    tq = as_qparam(a.trace_q)
    ups = float(ratefn.upsilon(a.trace_p))
    trows = [(a.trace_p, tq.q, t, fredholm.trace_integral(a.trace_p, t, tq), ups)
             for t in a.trace_times]
    write_rows(run.path("trace.csv"), ["p", "q", "t", "value", "upsilon"], trows)
    run.results.update({"q_laplace": {str(r[0] * math.sqrt(qp.q)): r[4] for r in rows},
                        "trace": {str(r[2]): r[3] for r in trows}, "upsilon": ups})
    for r in trows:
        print(f"t = {r[2]:g}: (1/t) log trace = {r[3]:.6f}   upsilon = {ups:.6f}")
    return EXIT_OK


def cmd_rate(run: Run) -> int:
    from . import ode, ratefn
    from .qpng_sim import default_workers
    from .specialfn import as_qparam

    a = run.args
    qp = as_qparam(a.q)
    if a.points < 3 or a.x_max <= a.x_min or a.mu_points < 3 or a.mu_max <= a.mu_min:
        raise UsageError("need at least three points on increasing x and mu ranges")

    mu_up = np.round(np.arange(2.05, 6.0 + 1e-9, 0.01), 10)
    phi_p = ratefn.RateCurve(mu_up, ratefn.phi_plus(mu_up), {"kind": "phi_plus"})
    dual = ratefn.legendre(ratefn.upsilon, mu_up)
    gap = float(np.max(np.abs(phi_p.values - dual.values)))
    phi_p.write_csv(run.path("phi_plus.csv"))
    print(f"phi_plus vs Legendre(upsilon) max gap: {gap:.3e}")
    run.results["phi_plus_legendre_gap"] = gap

    xs = np.linspace(a.x_min, a.x_max, a.points)
    if a.direct:
        vals = [ratefn.minimize_f(float(x), qp).value for x in xs]
        F = ratefn.RateCurve(xs, np.array(vals), {"kind": "F", "q": qp.q, "route": "direct"})
    else:
        F = ratefn.f_curve(xs, qp, y_step=a.y_step, workers=default_workers())
    F.write_csv(run.path("F.csv"))

    mu = np.linspace(a.mu_min, a.mu_max, a.mu_points)
    phi_m = ratefn.phi_minus(F, qp, mu)
    phi_m.write_csv(run.path("phi_minus.csv"))
    report = ratefn.moreau_check(F, phi_m, qp.eta, window=(max(-3.0, a.x_min), min(3.0, a.x_max)))
    x_q = ratefn.locate_x_q(F, qp)
    run.results.update({"moreau": report, "x_q": x_q, "phi_minus(0)": float(phi_m(0.0))})

    left = xs[xs <= (x_q if math.isfinite(x_q) else a.x_min)]
    write_rows(run.path("parabola.csv"), ["x", "F", "parabola", "gap"],
               [(x, float(F(x)), float(ratefn.parabola(x, qp)),
                 float(F(x)) - float(ratefn.parabola(x, qp))) for x in left])

    inner = F.grid[1:-1]
    write_rows(run.path("ode_residual.csv"), ["x", "residual"],
               [(x, ode.ode_residual(F, x)) for x in inner])

    if a.match:
        rep = ode.match_c(qp, F)
        run.results["match_c"] = rep.as_dict()
        fam = ode.as_family(rep.c)
        over = []
        for x in F.grid:
            if x > 2.0:
                cand = 0.0
            elif x < rep.gluing_point:
                cand = float(ratefn.parabola(x, qp))
            else:
                try:
                    cand = ode.f_c(float(x), fam)
                except (DomainError, SolverError):
                    cand = math.nan
            over.append((x, float(F(x)), cand))
        write_rows(run.path("fc_overlay.csv"), ["x", "F", "F_c"], over)
        print(f"{rep.label}: c = {rep.c:.6g}, gluing point {rep.gluing_point:.4f}, "
              f"rms residual {rep.residual:.2e}")
    print(f"phi_minus(0) = {float(phi_m(0.0)):.6f} (1 - q = {1 - qp.q:.6f}); "
          f"Moreau sup gap {report['sup_gap']:.2e}; x_q ~ {x_q:g}")
    return EXIT_OK


def cmd_ode(run: Run) -> int:
    from . import ode
    from .ratefn import RateCurve

    a = run.args
    if a.points < 2 or not (0.0 < a.x_min < a.x_max <= 2.0):
        raise UsageError("need 0 < x-min < x-max <= 2 and at least two points")
    xs = np.linspace(a.x_min, a.x_max, a.points)
    rows, summary = [], {}
    for c in a.c:
        fam = ode.as_family(c)
        triple = ode.exact_triple(fam)
        vals = np.array([ode.f_c(x, fam) for x in xs])
        RateCurve(xs, vals, {"kind": "F_c", "c": str(fam)}).write_csv(run.path(f"F_c{fam}.csv"))
        res = [ode.ode_residual(triple, x) if x < 2.0 else 0.0 for x in xs]
        gres = [ode.g_system_residual(x, fam) for x in xs]
        rows += [(str(fam), x, r, g) for x, r, g in zip(xs, res, gres)]
        summary[str(fam)] = {"max_residual": float(np.max(np.abs(res))),
                             "max_g_residual": float(np.max(np.abs(gres))),
                             "branch_end": ode.x_min(fam)}
    write_rows(run.path("residuals.csv"), ["c", "x", "residual", "g_system_residual"], rows)
    q2, x2 = ode.gluing_constants()
    grid = np.linspace(-1.0, 2.5, 141)
    RateCurve(grid, ode.f_two(grid), {"kind": "F_2"}).write_csv(run.path("F_2.csv"))
    summary.update({"q2": q2, "x_q2": x2})
    run.results.update(summary)
    print(f"gluing constants: q2 = {q2:.6e}, x_q2 = {x2:.6f}")
    return EXIT_OK


def cmd_validate(run: Run) -> int:
    from .validation import run_all

    a = run.args
    results = run_all(a.only, quick=a.quick, echo=print)
    run.results["criteria"] = [r.as_dict() for r in results]
    run.results["all_passed"] = all(r.passed for r in results)
    return EXIT_OK if run.results["all_passed"] else EXIT_CRITERION


COMMANDS = {"simulate": cmd_simulate, "fredholm": cmd_fredholm, "rate": cmd_rate,
            "ode": cmd_ode, "validate": cmd_validate}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if args.threads is not None:
        if args.threads < 1:
            print("usage error: --threads must be positive", file=sys.stderr)
            return EXIT_USAGE
        os.environ["QPNG_THREADS"] = str(args.threads)
    run = Run(args)
    try:
        code = COMMANDS[args.command](run)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DomainError, RangeError, InputError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        run.results["error"] = str(exc)
        run.finish("usage_error")
        return EXIT_USAGE
    except (AccuracyError, SolverError) as exc:
        print(f"numerical accuracy failure: {exc}", file=sys.stderr)
        run.results["error"] = str(exc)
        run.results["diagnostics"] = getattr(exc, "diagnostics", {})
        run.results["partial_artifacts"] = list(run.results["files"])
        run.finish("accuracy_failure")
        return EXIT_ACCURACY
    except QpngError as exc:
        print(f"error: {exc}", file=sys.stderr)
        run.finish("error")
        return EXIT_ACCURACY
    run.finish("ok" if code == EXIT_OK else "criterion_failure")
    return code


if __name__ == "__main__":
    sys.exit(main())
