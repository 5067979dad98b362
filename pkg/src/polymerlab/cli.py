"""Command line entry point: ``polymerlab <subcommand> [--config FILE] [flags]``.

Flags override keys of the YAML/JSON config file.  With ``--check`` each
subcommand asserts its built-in consistency conditions and exits with
status 1 on failure.  Errors raised by the package exit with status 2.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import PolymerLabError


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).replace(" ", "").split(",") if v]


def _emit_json(obj, out):
    from .harness import atomic_write, json_bytes

    data = json_bytes(obj)
    if out:
        atomic_write(out, data)
    sys.stdout.write(data.decode())


def _emit_csv(rows, out):
    from .harness import atomic_write, csv_bytes

    data = csv_bytes(rows)
    if out:
        atomic_write(out, data)
    else:
        sys.stdout.write(data.decode())


def _finish(checks):
    """Print failed checks; return the exit status."""
    bad = [name for name, ok in checks if not ok]
    for name, ok in checks:
        print(f"check {'PASS' if ok else 'FAIL'}: {name}", file=sys.stderr)
    return 1 if bad else 0


# ------------------------------------------------------------ subcommands
def cmd_calibrate(a):
    from .disorder import calibrate, lambda_of_beta

    c = calibrate(a.N, a.theta, a.R_N, walk=a.walk)
    _emit_json(c.to_dict(), a.out)
    if not a.check:
        return 0
    b = c.beta_N
    resub = math.expm1(lambda_of_beta(2 * b) - 2 * lambda_of_beta(b))
    return _finish([("re-substitution within 1e-12", abs(resub - c.sigma2) <= 1e-12)])


def cmd_kernel(a):
    from .walk import build_kernel_table, collision_mass, llt_deviation, load_walk

    walk = load_walk(a.walk)
    table = build_kernel_table(walk, 2 * a.nmax, slices=a.nmax)
    rows = []
    for n in range(1, a.nmax + 1):
        rows.append(
            {
                "n": n,
                "q_n0": float(table.returns[n]),
                "R_n": collision_mass(table, n),
                "llt_deviation": llt_deviation(table, n),
            }
        )
    _emit_csv(rows, a.out)
    if not a.check:
        return 0
    mass = max(abs(math.fsum(table.slice(n).ravel()) - 1) for n in range(a.nmax + 1))
    return _finish([("slices are probability distributions", mass <= 1e-12), ("q_n(0) > 0 for n >= 2", all(table.returns[2:] > 0))])


def _experiment(a, operation):
    from .harness import ExperimentConfig

    keys = ("walk", "N", "theta", "t", "phi", "psi", "replicas", "seed", "eps_list", "lambda_list", "n_jobs", "tail_tol", "beta", "times", "record_every")
    flags = {k: getattr(a, k, None) for k in keys}
    for k in ("eps_list", "lambda_list", "times"):
        if flags[k] is not None:
            flags[k] = _floats(flags[k])
    flags["out_dir"] = a.out
    flags["operation"] = operation
    base = yaml.safe_load(Path(a.config).read_text()) if a.config else {}
    base = {k.replace("-", "_"): v for k, v in (base or {}).items()}
    base.update({k: v for k, v in flags.items() if v is not None})
    return ExperimentConfig.from_dict(base)


def _run_experiment(a, operation):
    from .harness import run

    cfg = _experiment(a, operation)
    res = run(cfg)
    summary = {"digest": cfg.digest(), "replicas": len(res.rows), "failed": res.failed, "aggregate": res.aggregate}
    if res.extra:
        summary["summary"] = res.extra
    print(json.dumps(_clean(summary), indent=2, sort_keys=True))
    checks = [("no failed replicas", res.ok)]
    return cfg, res, checks


def _clean(o):
    from .harness import _jsonable

    return _jsonable(o)


def cmd_simulate(a):
    cfg, res, checks = _run_experiment(a, "simulate")
    if res.rows:
        checks.append(("semimartingale residual <= 1e-10", max(r["max_residual"] for r in res.rows) <= 1e-10))
        if len(res.rows) > 1:
            agg = res.aggregate["dZ"]
            checks.append(("mean of Z_t - Z_0 within 3 SE of 0", abs(agg["mean"]) <= 3 * agg["se"]))
    return _finish(checks) if a.check else 0


def cmd_variance(a):
    cfg, res, checks = _run_experiment(a, "variance")
    s = res.extra
    if a.summary_out:
        from .harness import atomic_write, json_bytes

        atomic_write(a.summary_out, json_bytes(s))
    if s:
        checks.append(("MC variance within 3 SE of the exact DP value", abs(s["mc_var"] - s["exact_dp"]) <= 3 * s["se"]))
    return _finish(checks) if a.check else 0


def cmd_qv_scan(a):
    cfg, res, checks = _run_experiment(a, "qv-scan")
    return _finish(checks) if a.check else 0


def cmd_peaks(a):
    cfg, res, checks = _run_experiment(a, "peaks")
    return _finish(checks) if a.check else 0


def cmd_renewal(a):
    from .analytics import G_theta
    from .disorder import critical_sigma2
    from .renewal import build_totals
    from .walk import collision_mass_fourier, load_walk

    # the renewal recursion needs only sigma^2, not a realisable +-1 coupling
    s2 = critical_sigma2(a.N, a.theta, collision_mass_fourier(load_walk(a.walk), a.N))
    n_max = a.nmax if a.nmax is not None else a.N
    table = build_totals(s2, a.walk, n_max=n_max)
    scale = s2 * math.log(a.N) / a.N
    rows, errs = [], []
    for n in range(1, n_max + 1):
        pred = scale * G_theta(a.theta, n / a.N)
        err = table.totals[n] / pred - 1
        rows.append({"n": n, "U": float(table.totals[n]), "G_prediction": float(pred), "rel_err": float(err)})
        if 0.1 * a.N - 1e-9 <= n <= a.N + 1e-9:
            errs.append(abs(err))
    _emit_csv(rows, a.out)
    if not a.check:
        return 0
    checks = [("U > 0", bool(np.all(table.totals > 0)))]
    if errs:
        checks.append((f"max relative error on n/N in [0.1, 1] < {a.tol}", max(errs) < a.tol))
    return _finish(checks)


def cmd_specialfn(a):
    from .analytics import tabulate

    grid = tabulate(a.theta, _floats(a.t_grid), a.T)
    _emit_csv(list(grid.rows()), a.out)
    if not a.check:
        return 0
    return _finish(
        [
            ("f_1 > 0", bool(np.all(grid.f1 > 0))),
            ("G_theta <= G_hat", bool(np.all(grid.G <= grid.G_hat))),
        ]
    )


def cmd_oracle(a):
    from .analytics import first_moment_oracle, variance_oracle
    from .polymer import TestFunction

    phi = TestFunction.gaussian(variance=a.a)
    var, info = variance_oracle(phi, a.t, a.theta, return_info=True)
    out = {
        "theta": a.theta,
        "t": a.t,
        "a": a.a,
        "first_moment": first_moment_oracle(phi, "constant", a.t),
        "variance": var,
        "info": info,
    }
    _emit_json(out, a.out)
    if not a.check:
        return 0
    return _finish([("variance finite and positive", math.isfinite(var) and var > 0)])


# ------------------------------------------------------------ parser
DEFAULTS = {
    "calibrate": {"N": 1024, "theta": -4.0, "walk": "default"},
    "kernel": {"walk": "default", "nmax": 64},
    "renewal": {"N": 1024, "theta": 0.0, "walk": "default", "tol": 0.10},
    "specialfn": {"theta": 0.0, "t_grid": "1e-5,1e-4,1e-3,1e-2,0.1,0.5,1,1.5,2"},
    "oracle": {"theta": 0.0, "t": 0.5, "a": 0.25},
}


def _common(p):
    p.add_argument("--config", help="YAML or JSON file with defaults for these flags")
    p.add_argument("--check", action="store_true", help="exit 1 if a consistency assertion fails")
    p.add_argument("--out", help="output file (or directory for Monte Carlo runs)")


def _mc_flags(p, extra=()):
    p.add_argument("--walk")
    p.add_argument("--N", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--beta", type=float, help="fixed disorder strength instead of the critical calibration")
    p.add_argument("--t", type=float)
    p.add_argument("--phi")
    p.add_argument("--psi")
    p.add_argument("--replicas", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-jobs", dest="n_jobs", type=int)
    p.add_argument("--tail-tol", dest="tail_tol", type=float)
    p.add_argument("--times", help="comma list of times with extra Z and QV columns")
    p.add_argument("--record-every", dest="record_every", type=int)
    if "eps" in extra:
        p.add_argument("--eps-list", dest="eps_list")
    if "lambda" in extra:
        p.add_argument("--lambda-list", dest="lambda_list")


def build_parser():
    ap = argparse.ArgumentParser(prog="polymerlab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"polymerlab {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="critical coupling for (N, theta)")
    _common(p)
    p.add_argument("--N", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--walk")
    p.add_argument("--R-N", dest="R_N", type=float)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("kernel", help="q_n(0), R_n and LLT deviations")
    _common(p)
    p.add_argument("--walk")
    p.add_argument("--nmax", type=int)
    p.set_defaults(func=cmd_kernel)

    for name, func, extra in (
        ("simulate", cmd_simulate, ()),
        ("variance", cmd_variance, ()),
        ("qv-scan", cmd_qv_scan, ("eps",)),
        ("peaks", cmd_peaks, ("eps", "lambda")),
    ):
        p = sub.add_parser(name, help=f"Monte Carlo run: {name}")
        _common(p)
        _mc_flags(p, extra)
        if name == "variance":
            p.add_argument("--summary-out", dest="summary_out", help="JSON file for the variance summary")
        p.set_defaults(func=func)

    p = sub.add_parser("renewal", help="renewal function U_N against the G_theta prediction")
    _common(p)
    p.add_argument("--N", type=int)
    p.add_argument("--theta", type=float)
    p.add_argument("--walk")
    p.add_argument("--nmax", type=int)
    p.add_argument("--tol", type=float)
    p.set_defaults(func=cmd_renewal)

    p = sub.add_parser("specialfn", help="tabulate f_1, G_theta and its envelope")
    _common(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--t-grid", dest="t_grid")
    p.add_argument("--T", type=float)
    p.set_defaults(func=cmd_specialfn)

    p = sub.add_parser("oracle", help="continuum first moment and variance for Gaussian phi")
    _common(p)
    p.add_argument("--theta", type=float)
    p.add_argument("--t", type=float)
    p.add_argument("--a", type=float, help="Gaussian variance of phi")
    p.set_defaults(func=cmd_oracle)
    return ap


def _merge_config(a):
    """Fill unset flags from --config, then from the subcommand defaults."""
    if a.command in ("simulate", "variance", "qv-scan", "peaks"):
        return a
    conf = {}
    if a.config:
        conf = yaml.safe_load(Path(a.config).read_text()) or {}
        conf = {k.replace("-", "_"): v for k, v in conf.items()}
    for k, v in {**DEFAULTS.get(a.command, {}), **conf}.items():
        if getattr(a, k, None) is None:
            setattr(a, k, v)
    if getattr(a, "t_grid", None) is not None and not isinstance(a.t_grid, str):
        a.t_grid = ",".join(str(v) for v in a.t_grid)
    return a


def main(argv=None):
    ap = build_parser()
    a = _merge_config(ap.parse_args(argv))
    try:
        return a.func(a)
    except PolymerLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
