import json
import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polymerlab import harness
from polymerlab.errors import ConfigError, OracleSizeError
from polymerlab.harness import (
    ExactMoments,
    ExperimentConfig,
    TinyInstance,
    aggregate,
    brute_force_oracle,
    csv_bytes,
    run,
)
from polymerlab.polymer import simulate_path
from polymerlab.semimartingale import DecompositionObserver, observe_path

SMALL = dict(N=32, theta=-3.0, t=0.25, phi="gaussian:var=0.25")


def test_config_validation():
    ExperimentConfig(**SMALL)
    bad = [
        dict(operation="fit"),
        dict(N=1),
        dict(replicas=0),
        dict(t=0.0),
        dict(n_jobs=0),
        dict(tail_tol=-1.0),
        dict(beta=-0.1),
        dict(eps_list=(1.5,)),
        dict(operation="qv-scan"),
        dict(operation="peaks", eps_list=(0.1,)),
        dict(times=(0.5,)),
        dict(phi="blob:r=1"),
    ]
    for kw in bad:
        with pytest.raises(ConfigError):
            ExperimentConfig(**{**SMALL, **kw})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"N": 32, "colour": "red"})


def test_infeasible_theta_is_a_config_error():
    cfg = ExperimentConfig(N=32, theta=0.0, t=0.25)
    with pytest.raises(ConfigError):
        cfg.coupling()


def test_digest_ignores_execution_fields(tmp_path):
    a = ExperimentConfig(**SMALL)
    assert a.digest() == a.with_overrides(n_jobs=4, out_dir=str(tmp_path)).digest()
    assert a.digest() != a.with_overrides(seed=1).digest()
    assert a.digest() != a.with_overrides(phi="gaussian:var=0.5").digest()


def test_from_file_with_overrides(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text("operation: simulate\nN: 32\ntheta: -3.0\nt: 0.25\nreplicas: 2\n")
    cfg = ExperimentConfig.from_file(p, seed=7, replicas=None)
    assert (cfg.N, cfg.replicas, cfg.seed) == (32, 2, 7)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_file(p)


def test_single_replica_equals_direct_call():
    cfg = ExperimentConfig(**SMALL, seed=11)
    res = run(cfg)
    path = simulate_path(cfg.phi, cfg.N, cfg.t, cfg.coupling(), cfg.disorder(0), cfg.walk, cfg.tail_tol)
    tr = observe_path(path, [DecompositionObserver(cfg.psi)])[0]
    n = tr.n_steps
    row = res.rows[0]
    assert row["Z"] == float(tr.Z[n])
    assert row["M"] == float(tr.M[n])
    assert row["QV"] == float(tr.QV[n])
    series = [r for r in res.long_rows if r["replica"] == 0]
    assert [r["Z"] for r in series] == [float(z) for z in tr.Z]


def test_worker_count_does_not_change_outputs(tmp_path):
    base = ExperimentConfig(**SMALL, replicas=6, seed=3, times=(0.125,))
    run(base.with_overrides(out_dir=str(tmp_path / "a"), n_jobs=1))
    run(base.with_overrides(out_dir=str(tmp_path / "b"), n_jobs=2))
    for name in ("replicas.csv", "series.csv", "meta.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert "wall_time_s" in json.loads((tmp_path / "a" / "timing.json").read_text())


def test_meta_contents(tmp_path):
    cfg = ExperimentConfig(**SMALL, replicas=3, out_dir=str(tmp_path))
    res = run(cfg)
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["digest"] == cfg.digest()
    assert meta["coupling"]["beta_N"] == cfg.coupling().beta_N
    assert meta["version"]
    assert "wall_time" not in meta
    assert meta["aggregate"]["Z"]["n"] == 3
    assert meta["aggregate"]["Z"]["mean"] == res.aggregate["Z"]["mean"]
    assert not list(tmp_path.glob(".*"))  # no temporaries left behind


def test_replicas_are_independent_streams():
    res = run(ExperimentConfig(**SMALL, replicas=4))
    z = res.column("Z")
    assert len(set(z.tolist())) == 4
    assert np.all(res.column("Z0") == res.rows[0]["Z0"])


def test_aggregates_are_recomputable_from_rows():
    res = run(ExperimentConfig(**SMALL, replicas=5, seed=2))
    z = res.column("Z")
    assert res.aggregate["Z"]["mean"] == pytest.approx(np.mean(z), rel=1e-14)
    assert res.aggregate["Z"]["var"] == pytest.approx(np.var(z, ddof=1), rel=1e-10)
    assert res.aggregate["Z"]["se"] == pytest.approx(math.sqrt(np.var(z, ddof=1) / 5), rel=1e-10)


@settings(max_examples=30)
@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=40), st.randoms())
def test_aggregate_is_permutation_invariant(xs, rnd):
    rows = [{"replica": i, "x": x} for i, x in enumerate(xs)]
    a = aggregate(rows)["x"]
    rnd.shuffle(rows)
    b = aggregate(rows)["x"]
    assert a == b  # exact rational sums, not just within 1e-12


def test_exact_moments_against_fsum():
    rng = random.Random(5)
    xs = [rng.uniform(-1, 1) * 10 ** rng.randint(-8, 8) for _ in range(200)]
    m = ExactMoments()
    for x in xs:
        m.add(x)
    assert m.mean == pytest.approx(math.fsum(xs) / len(xs), rel=1e-15, abs=1e-300)
    assert ExactMoments().summary()["n"] == 0


def test_failed_replicas_are_reported(monkeypatch, tmp_path):
    real = harness._run_replica

    def flaky(cfg, replica):
        if replica == 1:
            raise RuntimeError("boom")
        return real(cfg, replica)

    monkeypatch.setattr(harness, "_run_replica", flaky)
    res = run(ExperimentConfig(**SMALL, replicas=3, out_dir=str(tmp_path)))
    assert not res.ok
    assert [r["replica"] for r in res.rows] == [0, 2]
    assert res.failed[0][0] == 1 and "boom" in res.failed[0][1]
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["failed_replicas"] == [1]


def test_qv_scan_and_peaks_long_rows():
    mid = dict(SMALL, N=64)
    res = run(ExperimentConfig(**mid, operation="qv-scan", eps_list=(0.4, 0.25)))
    assert {r["eps"] for r in res.long_rows} == {0.4, 0.25}
    assert all(r["abs_diff"] >= 0 for r in res.long_rows)
    res = run(ExperimentConfig(**mid, operation="peaks", eps_list=(0.4,), lambda_list=(0.2, 2.0)))
    assert len(res.long_rows) == 2
    assert all(0 <= r["occupation"] <= 1 for r in res.long_rows)


def test_unresolved_mollifier_is_a_reported_failure():
    res = run(ExperimentConfig(**SMALL, operation="qv-scan", eps_list=(0.25,)))
    assert res.rows == [] and "16.0/N" in res.failed[0][1]


def test_variance_summary_keys():
    res = run(ExperimentConfig(**SMALL, operation="variance", replicas=8))
    s = res.extra
    assert set(s) == {"exact_dp", "mc_mean", "mc_var", "se", "oracle_continuum"}
    assert s["exact_dp"] > 0 and s["se"] > 0


def test_beta_override_zero_is_deterministic():
    res = run(ExperimentConfig(**SMALL, beta=0.0, replicas=3))
    z = res.column("Z")
    assert np.all(z == z[0])
    assert np.all(res.column("QV") == 0.0)


def test_csv_round_trips_floats():
    rows = [{"a": 0.1 + 0.2, "b": 3}]
    text = csv_bytes(rows).decode().splitlines()
    assert text[0] == "a,b"
    assert float(text[1].split(",")[0]) == 0.1 + 0.2


def test_oracle_size_guard():
    inst = TinyInstance("default", "bump:r=0.4", N=4, n_steps=3, beta=0.5, max_sites=20)
    with pytest.raises(OracleSizeError):
        brute_force_oracle(inst)
