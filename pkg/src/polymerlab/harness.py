"""Experiment orchestration and the brute-force enumeration oracle.

A run executes independent replicas (serially or in worker processes),
writes long-format CSV plus a JSON sidecar atomically, and aggregates
per-replica scalars exactly: sums are kept as rationals, so aggregates are
independent of replica order and recomputable bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from fractions import Fraction
from itertools import product
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .disorder import DisorderSpec, calibrate, omega_grid, sigma2_of_beta
from .errors import CalibrationError, ConfigError, OracleSizeError
from .polymer import TestFunction, init_field, simulate_path
from .semimartingale import DecompositionObserver, PeakObserver, RenormalizedQVObserver, observe_path
from .walk import load_walk

OPERATIONS = ("simulate", "variance", "qv-scan", "peaks")
DIGEST_EXCLUDE = ("out_dir", "n_jobs")


# ------------------------------------------------------------ config
@dataclass(frozen=True)
class ExperimentConfig:
    """Monte Carlo experiment description.

    ``beta`` overrides the critical calibration (theta is then ignored),
    which allows beta = 0 runs.  ``times`` adds per-replica columns Z and
    QV at those times.  ``record_every`` thins the per-step series.
    """

    operation: str = "simulate"
    walk: object = "default"
    N: int = 256
    theta: float = 0.0
    t: float = 0.5
    phi: object = "gaussian:var=0.25"
    psi: object = "constant"
    replicas: int = 1
    seed: int = 0
    eps_list: tuple = ()
    lambda_list: tuple = ()
    out_dir: str | None = None
    n_jobs: int = 1
    tail_tol: float = 0.0
    beta: float | None = None
    times: tuple = ()
    record_every: int = 1
    region: object = None
    window: tuple = (0.0, math.inf)

    def __post_init__(self):
        for name in ("eps_list", "lambda_list", "times", "window"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, tuple):
                object.__setattr__(self, name, tuple(float(x) for x in v))
        self.validate()

    def validate(self):
        if self.operation not in OPERATIONS:
            raise ConfigError(f"operation must be one of {OPERATIONS}, got {self.operation!r}")
        if int(self.N) != self.N or self.N < 2:
            raise ConfigError("N must be an integer >= 2")
        if int(self.replicas) != self.replicas or self.replicas < 1:
            raise ConfigError("replicas must be an integer >= 1")
        if self.n_jobs < 1:
            raise ConfigError("n_jobs must be >= 1")
        if not self.t > 0:
            raise ConfigError("t must be positive")
        if self.tail_tol < 0:
            raise ConfigError("tail_tol must be >= 0")
        if self.record_every < 1:
            raise ConfigError("record_every must be >= 1")
        if self.beta is not None and not self.beta >= 0:
            raise ConfigError("beta must be >= 0")
        if any(not 0 < e < 1 for e in self.eps_list):
            raise ConfigError("every eps must lie in (0, 1)")
        if any(not x > 0 for x in self.lambda_list):
            raise ConfigError("every lambda must be positive")
        if any(not 0 < x <= self.t for x in self.times):
            raise ConfigError("times must lie in (0, t]")
        if self.operation in ("qv-scan", "peaks") and not self.eps_list:
            raise ConfigError(f"{self.operation} needs eps_list")
        if self.operation == "peaks" and not self.lambda_list:
            raise ConfigError("peaks needs lambda_list")
        try:
            load_walk(self.walk)
            TestFunction.parse(self.phi)
            TestFunction.parse(self.psi)
            if self.region is not None:
                TestFunction.parse(self.region)
        except (ValueError, KeyError, TypeError, OSError) as exc:
            raise ConfigError(str(exc)) from exc

    # -- construction
    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        d = {k.replace("-", "_"): v for k, v in dict(d).items()}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path, **overrides):
        text = Path(path).read_text()
        data = yaml.safe_load(text) or {}
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a mapping")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(data)

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    # -- identity
    def canonical(self):
        d = {}
        for f in fields(self):
            if f.name in DIGEST_EXCLUDE:
                continue
            v = getattr(self, f.name)
            if f.name in ("phi", "psi", "region") and v is not None:
                v = TestFunction.parse(v).to_dict()
            elif f.name == "walk":
                v = load_walk(v).to_dict()
            elif isinstance(v, tuple):
                v = [_json_float(x) for x in v]
            elif isinstance(v, float):
                v = _json_float(v)
            d[f.name] = v
        return d

    def digest(self):
        blob = json.dumps(self.canonical(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def coupling(self):
        """CriticalCoupling for (N, theta), or None when ``beta`` is set."""
        if self.beta is not None:
            return None
        try:
            return calibrate(self.N, self.theta, walk=self.walk)
        except CalibrationError as exc:
            raise ConfigError(str(exc)) from exc

    def disorder(self, replica):
        return DisorderSpec(int(self.seed), int(replica), float(self.beta or 0.0))


def _json_float(x):
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


# ------------------------------------------------------------ exact aggregation
class ExactMoments:
    """One-pass mean and variance with rational accumulators (order-free, exact sums)."""

    __slots__ = ("n", "s1", "s2")

    def __init__(self):
        self.n = 0
        self.s1 = Fraction(0)
        self.s2 = Fraction(0)

    def add(self, x):
        q = Fraction(float(x))
        self.n += 1
        self.s1 += q
        self.s2 += q * q

    @property
    def mean(self):
        return float(self.s1 / self.n) if self.n else math.nan

    @property
    def var(self):
        if self.n < 2:
            return math.nan
        return float((self.s2 - self.s1 * self.s1 / self.n) / (self.n - 1))

    @property
    def se(self):
        return math.sqrt(self.var / self.n) if self.n >= 2 else math.nan

    def summary(self):
        return {"n": self.n, "mean": self.mean, "var": self.var, "se": self.se}


def aggregate(rows, columns=None):
    """Mean, variance and standard error per scalar column of per-replica rows."""
    if not rows:
        return {}
    columns = columns or [k for k in rows[0] if k != "replica"]
    acc = {c: ExactMoments() for c in columns}
    for r in rows:
        for c in columns:
            acc[c].add(r[c])
    return {c: a.summary() for c, a in acc.items()}


# ------------------------------------------------------------ replicas
def _replica_task(args):
    cfg_dict, replica = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    try:
        return replica, _run_replica(cfg, replica), None
    except Exception as exc:  # reported, not fatal for the other replicas
        return replica, None, f"{type(exc).__name__}: {exc}"


def _path(cfg, replica, coupling):
    return simulate_path(cfg.phi, cfg.N, cfg.t, coupling, cfg.disorder(replica), cfg.walk, cfg.tail_tol)


def _run_replica(cfg, replica):
    """(scalar row, long rows) for one replica."""
    coupling = cfg.coupling()
    dec = DecompositionObserver(cfg.psi)
    observers = [dec]
    if cfg.operation == "qv-scan":
        observers.append(RenormalizedQVObserver(cfg.eps_list, cfg.psi))
    elif cfg.operation == "peaks":
        observers.append(PeakObserver(cfg.lambda_list, cfg.eps_list, cfg.region, cfg.window))
    res = observe_path(_path(cfg, replica, coupling), observers)
    tr = res[0]
    M, QV = tr.M, tr.QV
    n = tr.n_steps
    scal = {
        "replica": replica,
        "Z0": float(tr.Z[0]),
        "Z": float(tr.Z[n]),
        "dZ": float(tr.Z[n] - tr.Z[0]),
        "M": float(M[n]),
        "QV": float(QV[n]),
        "M2_minus_QV": float(M[n] ** 2 - QV[n]),
        "max_residual": float(np.max(np.abs(tr.residual))) if n else 0.0,
    }
    for s in cfg.times:
        k = int(math.floor(cfg.N * s + 1e-9))
        scal[f"Z@{s!r}"] = float(tr.Z[k])
        scal[f"QV@{s!r}"] = float(QV[k])
    long_rows = []
    if cfg.operation in ("simulate", "variance"):
        for k in range(0, n + 1, cfg.record_every):
            long_rows.append({"replica": replica, "k": k, "Z": float(tr.Z[k]), "M": float(M[k]), "QV": float(QV[k])})
    elif cfg.operation == "qv-scan":
        for e, v in res[1].items():
            long_rows.append(
                {"replica": replica, "eps": e, "qv_renorm": float(v), "qv_exact": float(QV[n]), "abs_diff": float(abs(v - QV[n]))}
            )
    else:
        for (lam, e), st in res[1].items():
            long_rows.append(
                {
                    "replica": replica,
                    "lambda": lam,
                    "eps": e,
                    "occupation": float(st.occupation),
                    "area": float(st.area),
                    "band_area": float(st.band_area),
                }
            )
    return scal, long_rows


@dataclass
class RunResult:
    config: ExperimentConfig
    rows: list  # per-replica scalars, ordered by replica
    long_rows: list
    aggregate: dict
    provenance: dict
    failed: list = field(default_factory=list)  # (replica, message)
    extra: dict = field(default_factory=dict)

    @property
    def ok(self):
        return not self.failed

    def column(self, name):
        return np.array([r[name] for r in self.rows])


def run(config, progress=None):
    """Execute all replicas of ``config`` and, if ``out_dir`` is set, write outputs.

    Worker count never changes results: each replica depends only on
    (seed, replica) and rows are reassembled in replica order.
    """
    if not isinstance(config, ExperimentConfig):
        config = ExperimentConfig.from_dict(config)
    coupling = config.coupling()
    t0 = time.perf_counter()
    tasks = [(asdict(config), r) for r in range(config.replicas)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as ex:
            results = list(ex.map(_replica_task, tasks, chunksize=max(1, len(tasks) // (8 * config.n_jobs))))
    else:
        results = []
        for i, task in enumerate(tasks):
            results.append(_replica_task(task))
            if progress is not None:
                progress(i + 1, len(tasks))
    results.sort(key=lambda r: r[0])
    rows, long_rows, failed = [], [], []
    for replica, out, err in results:
        if err is not None:
            failed.append((replica, err))
            continue
        rows.append(out[0])
        long_rows.extend(out[1])
    agg = aggregate(rows)
    prov = {
        "config": config.canonical(),
        "digest": config.digest(),
        "coupling": None if coupling is None else coupling.to_dict(),
        "walk": load_walk(config.walk).to_dict(),
        "version": __version__,
        "failed_replicas": [r for r, _ in failed],
    }
    result = RunResult(config, rows, long_rows, agg, prov, failed)
    if config.operation == "variance":
        result.extra.update(variance_summary(config, result))
    prov["wall_time"] = time.perf_counter() - t0
    if config.out_dir:
        write_outputs(result, config.out_dir)
    return result


def variance_summary(config, result):
    """Exact DP variance next to the MC variance, its SE and the continuum oracle."""
    from .analytics import variance_oracle
    from .renewal import build_totals, discrete_variance_mass

    z = result.column("Z")
    coupling = config.coupling()
    s2 = coupling.sigma2 if coupling is not None else float(sigma2_of_beta(config.beta))
    n = int(math.floor(config.N * config.t + 1e-9))
    table = build_totals(s2, config.walk, n_max=n)
    exact = discrete_variance_mass(config.phi, config.N, config.t, table, config.psi)
    mean = math.fsum(z) / z.size
    dev2 = (z - mean) ** 2
    var = math.fsum(dev2) / (z.size - 1)
    # SE of the sample variance from the spread of squared deviations
    se = math.sqrt(math.fsum((dev2 - math.fsum(dev2) / z.size) ** 2) / (z.size - 1) / z.size)
    theta = config.theta if coupling is not None else None
    try:
        oracle = variance_oracle(config.phi, config.t, theta, config.psi) if theta is not None else None
    except Exception:  # no continuum limit for this input
        oracle = None
    return {"exact_dp": exact, "mc_mean": mean, "mc_var": var, "se": se, "oracle_continuum": oracle}


# ------------------------------------------------------------ persistence
def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_bytes(rows, columns=None):
    buf = io.StringIO()
    if rows:
        columns = columns or list(rows[0])
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue().encode()


def atomic_write(path, data):
    """Write bytes to ``path`` via a temporary file in the same directory and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def json_bytes(obj):
    return (json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n").encode()


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, (np.floating, float)):
        return _json_float(o) if math.isfinite(o) or math.isinf(o) else None
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    return o


LONG_FILE = {"simulate": "series.csv", "variance": "series.csv", "qv-scan": "qv_scan.csv", "peaks": "peaks.csv"}


def write_outputs(result, out_dir):
    """replicas.csv, the long-format CSV, meta.json and timing.json.

    Everything except timing.json is byte-identical across reruns and
    worker counts.
    """
    out = Path(out_dir)
    atomic_write(out / "replicas.csv", csv_bytes(result.rows))
    atomic_write(out / LONG_FILE[result.config.operation], csv_bytes(result.long_rows))
    meta = {k: v for k, v in result.provenance.items() if k != "wall_time"}
    meta["aggregate"] = result.aggregate
    meta["failed"] = [{"replica": r, "error": e} for r, e in result.failed]
    if result.extra:
        meta["summary"] = result.extra
    atomic_write(out / "meta.json", json_bytes(meta))
    atomic_write(out / "timing.json", json_bytes({"wall_time_s": result.provenance.get("wall_time")}))


# ------------------------------------------------------------ enumeration oracle
@dataclass(frozen=True)
class TinyInstance:
    """A configuration small enough for exhaustive enumeration of the disorder.

    ``target`` restricts the enumeration to the space-time cone of paths
    ending at that lattice point at time ``n_steps``; only mean_W is then
    available.
    """

    walk: object
    phi: object
    N: int
    n_steps: int
    beta: float
    psi: object = "constant"
    target: tuple | None = None
    max_sites: int = 20


@dataclass
class OracleResult:
    sites: list
    sigma2: float
    mean_W: dict  # n -> {y: E W_n(y)}
    Z0: float
    mean_Z: list = field(default_factory=list)  # index n = 0..n_steps
    var_Z: list = field(default_factory=list)
    mean_QV: list = field(default_factory=list)
    mean_M2: list = field(default_factory=list)
    mean_dM: list = field(default_factory=list)  # index k - 1


def _initial_points(inst, walk):
    fld = init_field(inst.phi, inst.N, walk=walk)
    xs, ys = fld.lattice_axes()
    pts = []
    for i, x in enumerate(xs):
        for j, y in enumerate(ys):
            if fld.W[i, j] > 0:
                pts.append(((int(x), int(y)), float(fld.W[i, j])))
    return pts


def _paths(inst, walk):
    """All step sequences as (x_0, ..., x_n) with weight phi_N(x_0) prod p."""
    steps = [(tuple(int(v) for v in s), float(p)) for s, p in zip(walk.steps, walk.probs)]
    out = []
    for x0, w0 in _initial_points(inst, walk):
        for seq in product(steps, repeat=inst.n_steps):
            pos, w, xs = x0, w0, [x0]
            for (dx, dy), p in seq:
                pos = (pos[0] + dx, pos[1] + dy)
                w *= p
                xs.append(pos)
            out.append((tuple(xs), w))
    if inst.target is not None:
        tgt = tuple(int(v) for v in inst.target)
        out = [pw for pw in out if pw[0][-1] == tgt]
    return out


def brute_force_oracle(inst):
    """Exact moments by enumerating every +-1 pattern on the space-time sites.

    Partition functions are evaluated as explicit sums over walk paths,
    independently of the transfer-matrix code.
    """
    walk = load_walk(inst.walk)
    paths = _paths(inst, walk)
    sites = sorted({(i, xs[i]) for xs, _ in paths for i in range(1, inst.n_steps + 1)})
    S = len(sites)
    if S > inst.max_sites:
        raise OracleSizeError(f"{S} space-time sites exceed the guard of {inst.max_sites}")
    index = {s: i for i, s in enumerate(sites)}
    spec = DisorderSpec(0, 0, float(inst.beta))
    ep, em = spec.weights
    cfg = np.arange(2**S, dtype=np.int64)
    E = np.where(((cfg[:, None] >> np.arange(S)[None, :]) & 1) == 1, ep, em)
    psi = TestFunction.parse(inst.psi)
    N = inst.N
    sq = 1.0 / math.sqrt(N)
    Z0 = math.fsum(w for _, w in _initial_points(inst, walk)) / N
    W = [dict() for _ in range(inst.n_steps + 1)]
    Wbar = [dict() for _ in range(inst.n_steps + 1)]
    for xs, w in paths:
        prod_v = np.full(2**S, w)
        for n in range(1, inst.n_steps + 1):
            y = xs[n]
            Wbar[n][y] = Wbar[n].get(y, 0.0) + prod_v
            prod_v = prod_v * E[:, index[(n, y)]]
            W[n][y] = W[n].get(y, 0.0) + prod_v
    mean_W = {n: {y: float(np.mean(v)) for y, v in W[n].items()} for n in range(1, inst.n_steps + 1)}
    res = OracleResult(sites, float(sigma2_of_beta(inst.beta)), mean_W, Z0)
    if inst.target is not None:
        return res
    s2 = res.sigma2
    psi_at = lambda y: float(psi(np.array([y[0] * sq, y[1] * sq])))
    Z = [np.full(2**S, Z0)]
    M = np.zeros(2**S)
    QV = np.zeros(2**S)
    res.mean_Z.append(Z0)
    res.var_Z.append(0.0)
    res.mean_QV.append(0.0)
    res.mean_M2.append(0.0)
    for n in range(1, inst.n_steps + 1):
        zn = sum(v * psi_at(y) for y, v in W[n].items()) / N
        dM = sum((W[n][y] - Wbar[n][y]) * psi_at(y) for y in W[n]) / N
        QV = QV + s2 * sum(Wbar[n][y] ** 2 * psi_at(y) ** 2 for y in Wbar[n]) / N**2
        M = M + dM
        Z.append(zn)
        res.mean_Z.append(float(np.mean(zn)))
        res.var_Z.append(float(np.mean((zn - np.mean(zn)) ** 2)))
        res.mean_QV.append(float(np.mean(QV)))
        res.mean_M2.append(float(np.mean(M * M)))
        res.mean_dM.append(float(np.mean(dM)))
    return res


def conditional_increment_oracle(inst, disorder, k):
    """E[dM_k | signs before k] and E[dM_k^2 | signs before k] by enumeration.

    Signs at times < k are read from ``disorder``'s counter-based stream;
    the 2^(#sites at time k) patterns at time k are enumerated.  Also
    returns dM_k at the stream's own time-k signs.
    """
    walk = load_walk(inst.walk)
    full = replace(inst, n_steps=k, target=None)
    paths = _paths(full, walk)
    sites_k = sorted({xs[k] for xs, _ in paths})
    S = len(sites_k)
    if S > inst.max_sites:
        raise OracleSizeError(f"{S} sites at time {k} exceed the guard of {inst.max_sites}")
    ep, em = disorder.weights
    psi = TestFunction.parse(inst.psi)
    sq = 1.0 / math.sqrt(inst.N)

    def e_past(n, y):
        om = int(omega_grid(disorder, n, np.array([y[0]]), np.array([y[1]]))[0])
        return ep if om == 1 else em

    wbar = {}
    for xs, w in paths:
        for n in range(1, k):
            w *= e_past(n, xs[n])
        wbar[xs[k]] = wbar.get(xs[k], 0.0) + w
    cfg = np.arange(2**S, dtype=np.int64)
    bits = ((cfg[:, None] >> np.arange(S)[None, :]) & 1) == 1
    E = np.where(bits, ep, em)
    coef = np.array([wbar[y] * float(psi(np.array([y[0] * sq, y[1] * sq]))) for y in sites_k]) / inst.N
    dM = (E - 1.0) @ coef
    actual = np.array([e_past(k, y) for y in sites_k])
    return {
        "mean": float(np.mean(dM)),
        "second": float(np.mean(dM * dM)),
        "actual": float((actual - 1.0) @ coef),
        "wbar": wbar,
    }
