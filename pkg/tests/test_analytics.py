import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, special

from polymerlab.analytics import (
    EULER_GAMMA,
    GHat,
    _variance_spatial,
    G_small_t_series,
    G_theta,
    G_theta_spatial,
    cumulative_G,
    f_s,
    first_moment_oracle,
    heat_qv_free,
    mollifier_log_limit,
    phi1_closed_form,
    phi_bound,
    phi_iterated,
    tabulate,
    variance_oracle,
)
from polymerlab.errors import ToleranceError, UnsupportedTestFunctionError
from polymerlab.polymer import TestFunction

# Dickman rho at 2 and 3; rho(2) = 1 - log 2, rho(3) from the standard table
RHO3 = 0.04860838829052


def test_f1_on_unit_interval():
    t = np.linspace(0.01, 1.0, 50)
    np.testing.assert_allclose(f_s(1.0, t), math.exp(-EULER_GAMMA), rtol=1e-14)


@given(st.floats(0.05, 6.0))
def test_f_s_at_one(s):
    assert f_s(s, 1.0) == pytest.approx(s * math.exp(-EULER_GAMMA * s) / special.gamma(s + 1), rel=1e-13)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.5])
def test_f_s_continuous_at_one(s):
    d = [abs(f_s(s, 1 + delta) - f_s(s, 1.0)) for delta in (1e-2, 1e-3, 1e-4, 1e-6)]
    # f_s has an (t - 1)^s cusp at 1, so the gap closes like delta^min(s, 1)
    assert np.all(np.diff(d) < 0) and d[-1] < 5 * 1e-6 ** min(s, 1.0)


def test_f1_is_scaled_dickman():
    g = math.exp(-EULER_GAMMA)
    assert f_s(1.0, 2.0) == pytest.approx(g * (1 - math.log(2)), rel=1e-12)
    assert f_s(1.0, 3.0) == pytest.approx(g * RHO3, rel=1e-5)


@pytest.mark.parametrize("s", [0.5, 1.0, 2.5])
def test_f_s_is_a_density(s):
    head = integrate.quad(lambda t: f_s(s, t), 0, 1, limit=200)[0]
    ts = np.linspace(1, 12, 5633)
    tail = integrate.trapezoid(f_s(s, ts), ts)
    assert head + tail == pytest.approx(1.0, abs=1e-4)
    v = f_s(s, ts)
    assert np.all(v[ts <= 5] > 0)
    # past that the true density is below the marcher's absolute accuracy
    assert np.all(v > -1e-7)


def test_f_s_domain():
    with pytest.raises(ValueError):
        f_s(0.0, 1.0)
    with pytest.raises(ValueError):
        f_s(1.0, -1.0)


@pytest.mark.parametrize("theta", [-1.0, 0.0, 1.0])
def test_G_small_t_law(theta):
    for t in (1e-3, 1e-4, 1e-5):
        L = math.log(1 / t)
        r = t * L * L * G_theta(theta, t)
        assert abs(r - G_small_t_series(theta, t, order=1)) < 5 / L**2
    r = [1e-3 * math.log(1e3) ** 2 * G_theta(theta, 1e-3), 1e-5 * math.log(1e5) ** 2 * G_theta(theta, 1e-5)]
    assert abs(r[1] - 1) < abs(r[0] - 1) or abs(r[1] - 1) < 0.05


def test_G_monotone_in_theta():
    for t in (1e-3, 0.2, 0.9, 1.5):
        v = [G_theta(th, t) for th in (-2.0, -1.0, 0.0, 1.0)]
        assert np.all(np.diff(v) > 0)


def test_G_truncation_control():
    for t in (1e-4, 0.3, 1.0, 1.7):
        v, info = G_theta(0.0, t, return_info=True)
        assert info["doubling_change"] < 1e-10
    with pytest.raises(ToleranceError):
        G_theta(0.0, 0.3, s_max=2.0)


def test_G_envelope():
    hat = GHat.fit(0.0, 1.0)
    t = np.geomspace(1e-9, 1.0, 60)
    assert np.all(G_theta(0.0, t) <= hat(t))
    assert np.all(np.diff(hat(t)) < 0)
    assert hat.c == pytest.approx(4.2985, rel=1e-3)


def test_G_spatial():
    t = 0.3
    G = G_theta(0.5, t)
    assert G_theta_spatial(0.5, t, np.zeros(2)) == pytest.approx(G / (math.pi * t), rel=1e-14)
    mass = integrate.quad(lambda r: 2 * math.pi * r * G_theta_spatial(0.5, t, np.array([r, 0.0])), 0, 10)[0]
    assert mass == pytest.approx(G, rel=1e-10)
    x = np.array([0.2, -0.4])
    assert G_theta_spatial(0.5, t, x) == G_theta_spatial(0.5, t, -x)
    with pytest.raises(ValueError):
        G_theta_spatial(0.5, 0.0, x)


def test_cumulative_G():
    # closed s-integral against quadrature of G in log w; below w = e^-700 the
    # mass is 1/log(1/w) to leading order
    for theta, tau in ((0.0, 0.5), (-2.0, 0.8)):
        f = lambda v: G_theta(theta, math.exp(v)) * math.exp(v)
        ref = sum(integrate.quad(f, a, b, limit=400, epsrel=1e-11)[0] for a, b in ((-700, -60), (-60, math.log(tau))))
        assert cumulative_G(theta, tau) == pytest.approx(ref + 1 / 700, rel=5e-5)
    assert cumulative_G(0.0, 1.3) > cumulative_G(0.0, 1.0)


def _separable_first_moment(phi, psi, t):
    # product of two 1-d double integrals against the heat kernel
    def one(m1, m2):
        f = lambda y, x: (
            math.exp(-((x - m1) ** 2) / (2 * phi.scale))
            * math.exp(-((y - x) ** 2) / (2 * t)) / math.sqrt(2 * math.pi * t)
            * math.exp(-((y - m2) ** 2) / (2 * psi.scale))
        )
        return integrate.dblquad(f, -12, 12, -12, 12, epsabs=1e-13, epsrel=1e-12)[0]

    return phi.height * psi.height * one(phi.center[0], psi.center[0]) * one(phi.center[1], psi.center[1])


def test_first_moment():
    phi = TestFunction.gaussian((0.1, 0.0), 0.2)
    psi = TestFunction.gaussian((0.0, 0.3), 0.5, height=1.0)
    assert first_moment_oracle(phi, "constant", 0.7) == pytest.approx(phi.integral(), rel=1e-15)
    closed = first_moment_oracle(phi, psi, 0.4, method="closed")
    grid = first_moment_oracle(phi, psi, 0.4, method="grid")
    assert abs(closed - grid) <= 1e-8
    assert closed == pytest.approx(_separable_first_moment(phi, psi, 0.4), rel=1e-10)
    # t -> 0 gives int phi psi
    bump = TestFunction.bump(radius=0.5)
    direct = first_moment_oracle(bump, psi, 0.0, method="grid", h=1 / 512)
    assert first_moment_oracle(bump, psi, 1e-8, method="grid", h=1 / 512) == pytest.approx(direct, rel=1e-6)


def test_variance_oracle_values():
    phi = TestFunction.gaussian(variance=0.25)
    assert variance_oracle(phi, 0.5, 0.0) == pytest.approx(0.6169823460874803, rel=1e-9)
    assert variance_oracle(phi, 0.5, -4.0) == pytest.approx(0.196640542077373, rel=1e-9)
    assert variance_oracle(phi, 0.0, 0.0) == 0.0
    assert variance_oracle(phi, 1e-6, 0.0) < 1e-4


def test_variance_oracle_monotone():
    phi = TestFunction.gaussian(variance=0.25)
    vt = [variance_oracle(phi, t, 0.0) for t in (0.1, 0.3, 0.6, 1.0)]
    vth = [variance_oracle(phi, 0.5, th) for th in (-2.0, -1.0, 0.0, 1.0)]
    assert np.all(np.diff(vt) > 0) and np.all(np.diff(vth) > 0)


def test_variance_oracle_branches_agree():
    # the swapped-order Gaussian formula and the nested quadrature at t <= 1
    from polymerlab import analytics

    phi = TestFunction.gaussian(variance=0.25)
    K = analytics._gauss_weight(phi)
    nested = K * K * integrate.quad(lambda u: cumulative_G(0.0, 0.5 - u) / (0.25 + u), 0, 0.5, epsrel=1e-9)[0]
    assert variance_oracle(phi, 0.5, 0.0) == pytest.approx(nested, rel=1e-7)


def test_variance_spatial_route_matches_gaussian_closed_form():
    g = TestFunction.gaussian(variance=0.25)
    for theta in (0.0, -4.0):
        assert _variance_spatial(g, 0.5, theta) == pytest.approx(variance_oracle(g, 0.5, theta), rel=1e-6)
    bump = TestFunction.bump(radius=1.0)
    v = variance_oracle(bump, 0.5, 0.0)
    assert v > 0 and variance_oracle(bump, 0.8, 0.0) > v
    with pytest.raises(UnsupportedTestFunctionError):
        variance_oracle(bump, 0.5, 0.0, psi="gaussian:var=1")


def test_phi_iterated_base_and_closed_form():
    u = np.geomspace(1e-6, 50, 40)
    assert phi_iterated(0, 1.0, 0.3) == 1.0
    np.testing.assert_allclose(phi_iterated(1, 1.0, u), phi1_closed_form(u), rtol=0, atol=1e-8)


def test_phi_iterated_scaling():
    u = np.geomspace(1e-3, 10, 12)
    for k in (1, 2, 3):
        for t in (0.25, 3.0):
            np.testing.assert_allclose(phi_iterated(k, t, u), phi_iterated(k, 1.0, u / t), rtol=1e-8)


def test_phi_iterated_written_scaling_fails_beyond_one():
    # u / t^k (as sometimes written) only coincides with u / t at k = 1
    u = np.array([0.5])
    assert abs(phi_iterated(2, 0.25, u)[0] - phi_iterated(2, 1.0, u / 0.25**2)[0]) > 1e-2


def test_phi_bound_grid():
    v = np.geomspace(1e-8, 0.999, 60)
    for k in range(0, 7):
        vals = phi_iterated(k, 1.0, v) if k else np.ones_like(v)
        assert np.all(vals <= phi_bound(k, v))


def test_phi_iterated_errors():
    with pytest.raises(ToleranceError):
        phi_iterated(9, 1.0, 0.5)
    with pytest.raises(ValueError):
        phi_iterated(1, 1.0, 0.0)


def test_mollifier_constant():
    eps = [0.1, 1e-3, 1e-6]
    out = mollifier_log_limit("constant", np.zeros(2), 1.0, eps)
    for e, v in out:
        assert v == pytest.approx((math.log(1 + e) - math.log(e)) / -math.log(e), rel=1e-13)
    assert out[-1][1] < out[0][1]  # -> 1 from above


def test_mollifier_gaussian_monotone():
    psi = TestFunction.gaussian(variance=0.5, height=1.0)
    x = np.array([0.1, 0.2])
    eps = [10.0**-k for k in range(1, 9)]
    vals = np.array([v for _, v in mollifier_log_limit(psi, x, 1.0, eps)])
    target = float(psi(x))
    assert np.all(np.diff(np.abs(vals - target)) < 0)
    assert np.all(vals <= 2 * psi.sup_norm())


def test_mollifier_bump_polar_matches_bound():
    psi = TestFunction.bump(radius=1.0)
    x = np.zeros(2)
    vals = np.array([v for _, v in mollifier_log_limit(psi, x, 1.0, [1e-2, 1e-4, 1e-6])])
    assert np.all(np.diff(np.abs(vals - 1.0)) < 0)
    # polar quadrature reproduces the Gaussian branch when psi is Gaussian-like
    g = TestFunction.gaussian(variance=0.3, height=1.0)
    ind = TestFunction.parse({"kind": "bump", "r": 50.0})
    assert mollifier_log_limit(ind, x, 1.0, [0.01])[0][1] == pytest.approx(
        mollifier_log_limit("constant", x, 1.0, [0.01])[0][1], rel=1e-3
    )
    assert mollifier_log_limit(g, x, 1.0, [0.01])[0][1] < 1.0


def test_heat_qv_free():
    assert heat_qv_free(1.0, 0.25, 0.1) == pytest.approx(math.log(1.35 / 1.1) / math.log(10), rel=1e-15)


def test_tabulate():
    grid = tabulate(0.0, [1e-4, 0.5, 1.0, 1.5])
    rows = list(grid.rows())
    assert [r["t"] for r in rows] == [1e-4, 0.5, 1.0, 1.5]
    assert all(r["f_1"] > 0 for r in rows)
    assert math.isnan(rows[-1]["asymptotic_ratio"])
    assert np.all(grid.G <= grid.G_hat)
