import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polymerlab.disorder import critical_sigma2
from polymerlab.errors import UnsupportedTestFunctionError
from polymerlab.polymer import init_field
from polymerlab.renewal import (
    build_totals,
    collision_profile,
    compare_to_G,
    discrete_variance_mass,
    envelope_constant,
    laplace_sum,
    renewal_kfold,
    renewal_totals,
)
from polymerlab.walk import build_kernel_table, collision_mass_fourier, load_walk, return_probabilities


def _s2(N, theta=0.0):
    return critical_sigma2(N, theta, collision_mass_fourier(load_walk(), N))


def test_first_values():
    s2 = 0.3
    tab = build_totals(s2, n_max=8)
    assert tab.U(0) == s2
    assert tab.U(1) == pytest.approx(0.09375 * s2**2, rel=1e-14)


def test_three_fold_hand_expansion():
    s2 = 0.7
    q = return_probabilities(load_walk(), 6)
    q2, q4, q6 = q[2], q[4], q[6]
    # compositions of 3 into 1, 2 and 3 parts
    hand = s2**2 * q6 + 2 * s2**3 * q2 * q4 + s2**4 * q2**3
    assert abs(build_totals(s2, n_max=3).U(3) - hand) <= 1e-14 * hand


@given(st.floats(0.01, 2.0), st.integers(0, 6))
def test_recursion_matches_kfold(s2, n):
    q2 = return_probabilities(load_walk(), 12)[::2]
    U = renewal_totals(s2, q2)
    ref = renewal_kfold(s2, q2, n)
    assert abs(U[n] - ref) <= 1e-13 * ref


def test_totals_positive_and_read_only():
    tab = build_totals(_s2(256), n_max=256)
    assert np.all(tab.totals > 0)
    with pytest.raises(ValueError):
        tab.totals[0] = 1.0


def test_kernel_table_input():
    kt = build_kernel_table(load_walk(), 40, slices=4)
    a = build_totals(0.4, kt, n_max=20)
    b = build_totals(0.4, "default", n_max=20)
    np.testing.assert_allclose(a.totals, b.totals, rtol=1e-13)


def test_spatial_slices_sum_to_totals():
    tab = build_totals(0.5, n_max=24, n_spatial=12)
    assert tab.U(0, (0, 0)) == 0.5 and tab.U(0, (1, 0)) == 0.0
    for n in range(13):
        s = tab.spatial[n]
        assert abs(s.sum() - tab.U(n)) <= 1e-10 * tab.U(n)
        np.testing.assert_allclose(s, s[::-1, ::-1], atol=1e-15)


def test_compare_to_G_shapes():
    N = 256
    tab = build_totals(_s2(N), n_max=N)
    err, n, ratio = compare_to_G(tab, N, 0.0)
    assert n[0] == 26 and n[-1] == N
    assert err == np.abs(ratio - 1).max()
    with pytest.raises(ValueError):
        compare_to_G(build_totals(0.1, n_max=10), N, 0.0)


def test_envelope_constant_stable():
    from polymerlab.analytics import GHat

    hat = GHat.fit(0.0, 1.0)
    Cs = [envelope_constant(build_totals(_s2(N), n_max=N), N, 0.0, 1.0, hat) for N in (512, 1024, 2048)]
    assert max(Cs) / min(Cs) < 1.2
    assert all(1.0 < C < 1.5 for C in Cs)


def test_laplace_sum_properties():
    N = 512
    tab = build_totals(_s2(N), n_max=N)
    lams = [0.0, 1.0, 10.0, 100.0, 1e3]
    vals = [laplace_sum(tab, lam, N) for lam in lams]
    assert np.all(np.diff(vals) < 0)
    big = 5e4
    assert laplace_sum(tab, big, N) == pytest.approx(math.exp(-big / N) * tab.U(1), rel=1e-6)
    with pytest.raises(ValueError):
        laplace_sum(tab, -1.0, N)


def test_collision_profile_direct():
    from itertools import product

    walk = load_walk()
    N, n = 16, 3
    phi = "gaussian:var=0.05"
    A = collision_profile(phi, N, n, walk)
    fld = init_field(phi, N)
    kt = build_kernel_table(walk, 2 * n)
    xs, ys = fld.lattice_axes()
    pts = [((x, y), fld.W[i, j]) for i, x in enumerate(xs) for j, y in enumerate(ys)]
    for i in range(n + 1):
        direct = math.fsum(w1 * w2 * kt.q(2 * i, (b[0] - a[0], b[1] - a[1])) for (a, w1), (b, w2) in product(pts, pts))
        assert abs(A[i] - direct) <= 1e-13 * direct


def test_variance_mass_edge_cases():
    tab = build_totals(0.3, n_max=16)
    assert discrete_variance_mass("gaussian:var=0.25", 16, 0.05, tab) == 0.0
    with pytest.raises(UnsupportedTestFunctionError):
        discrete_variance_mass("gaussian:var=0.25", 16, 0.5, tab, psi="gaussian:var=1")


def test_variance_mass_grows_in_t():
    N = 64
    tab = build_totals(_s2(N, -3.0), n_max=N)
    v = [discrete_variance_mass("gaussian:var=0.25", N, t, tab) for t in (0.25, 0.5, 1.0)]
    assert v[0] < v[1] < v[2]
