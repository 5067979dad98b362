import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from polymerlab import _hash
from polymerlab.disorder import (
    DisorderSpec,
    calibrate,
    critical_sigma2,
    lambda_of_beta,
    max_feasible_theta,
    omega_grid,
    sigma2_of_beta,
    weight_at,
    weights_grid,
)
from polymerlab.errors import CalibrationError


def test_lambda_values():
    assert lambda_of_beta(0.0) == 0.0
    assert lambda_of_beta(1.0) == pytest.approx(0.4337808304830271, rel=1e-15)


@given(st.floats(0.0, 8.0))
def test_variance_identity(beta):
    lhs = math.expm1(lambda_of_beta(2 * beta) - 2 * lambda_of_beta(beta))
    assert abs(lhs - math.tanh(beta) ** 2) <= 1e-12
    assert sigma2_of_beta(beta) == pytest.approx(math.tanh(beta) ** 2, abs=1e-15)


def test_calibrate_closed_form():
    c = calibrate(64, 0.0, R_N=4.0)
    assert c.sigma2 == 0.25
    assert c.beta_N == pytest.approx(math.atanh(0.5), rel=1e-15)
    assert c.beta_N == pytest.approx(0.549306, abs=1e-6)


@pytest.mark.parametrize("N", [64, 1024])
@pytest.mark.parametrize("theta", [-1.0, 0.0, 1.0])
def test_calibrate_round_trip(N, theta):
    # R_N = 4 keeps every target inside (0, 1)
    c = calibrate(N, theta, R_N=4.0)
    b = c.beta_N
    assert abs(math.expm1(lambda_of_beta(2 * b) - 2 * lambda_of_beta(b)) - c.sigma2) <= 1e-12
    assert c.sigma2 == pytest.approx((1 + theta / math.log(N)) / 4.0, rel=1e-15)


def test_calibrate_monotone_in_target():
    betas = [calibrate(256, th, R_N=2.0).beta_N for th in np.linspace(-5.5, 0, 12)]
    assert np.all(np.diff(betas) > 0)
    assert betas[0] < 0.1


def test_calibrate_errors():
    with pytest.raises(CalibrationError):
        calibrate(64, -10.0, R_N=4.0)  # target <= 0
    with pytest.raises(CalibrationError):
        calibrate(256, 0.0)  # R_N < 1 at desk N: target > 1
    with pytest.raises(ValueError):
        critical_sigma2(1, 0.0, 1.0)


def test_feasibility_boundary():
    th = max_feasible_theta(256)
    calibrate(256, th - 1e-6)
    with pytest.raises(CalibrationError):
        calibrate(256, th + 1e-6)


def test_weights_are_two_point():
    spec = DisorderSpec(7, 3, 0.8)
    ep, em = spec.weights
    vals = {weight_at(spec, n, (x, y)) for n in range(1, 5) for x in range(-4, 4) for y in range(-4, 4)}
    assert vals == {ep, em}
    assert 0.5 * (ep + em) == pytest.approx(1.0, abs=1e-15)


def test_vector_matches_reference():
    spec = DisorderSpec(11, 2, 0.5)
    x1, x2 = np.meshgrid(np.arange(-70, 70), np.arange(-130, 3), indexing="ij")
    grid = weights_grid(spec, 9, x1, x2)
    ref = np.array([[weight_at(spec, 9, (a, b)) for a, b in zip(ra, rb)] for ra, rb in zip(x1, x2)])
    np.testing.assert_array_equal(grid, ref)


def test_numba_matches_reference():
    spec = DisorderSpec(5, 1, 0.3)
    ep, em = spec.weights
    ones = np.ones((6, 400))
    out = np.empty_like(ones)
    _hash.apply_signs(ones, -3, -200, spec.time_key(4), ep, em, out)
    for i, x1 in enumerate(range(-3, 3)):
        for j, x2 in enumerate(range(-200, 200)):
            assert out[i, j] == weight_at(spec, 4, (x1, x2))


def test_determinism_independent_of_box():
    spec = DisorderSpec(3, 0, 0.4)
    small = omega_grid(spec, 2, *np.meshgrid(np.arange(0, 5), np.arange(0, 5), indexing="ij"))
    big = omega_grid(spec, 2, *np.meshgrid(np.arange(-10, 20), np.arange(-10, 20), indexing="ij"))
    np.testing.assert_array_equal(small, big[10:15, 10:15])


def _sample(spec, n_sites=10**6):
    x1, x2 = np.meshgrid(np.arange(1000), np.arange(1000), indexing="ij")
    return weights_grid(spec, 1, x1, x2).ravel()[:n_sites]


def test_moments_of_weights():
    beta = 0.7
    e = _sample(DisorderSpec(2024, 0, beta))
    se = e.std(ddof=1) / math.sqrt(e.size)
    assert abs(e.mean() - 1) <= 3 * se
    xi2 = (e - 1) ** 2
    # (e - 1)^2 = tanh^2 beta for both signs, so the band degenerates to rounding
    assert abs(xi2.mean() - math.tanh(beta) ** 2) <= 3 * xi2.std(ddof=1) / math.sqrt(e.size) + 1e-12
    xi3 = (e - 1) ** 3
    assert abs(xi3.mean()) <= 4 * xi3.std(ddof=1) / math.sqrt(e.size)


def test_replica_streams_balanced_and_independent():
    s0 = omega_grid(DisorderSpec(1, 0, 0.1), 1, *np.meshgrid(np.arange(1000), np.arange(1000), indexing="ij"))
    s1 = omega_grid(DisorderSpec(1, 1, 0.1), 1, *np.meshgrid(np.arange(1000), np.arange(1000), indexing="ij"))
    n = s0.size
    for s in (s0, s1):
        assert abs(s.mean()) <= 4 / math.sqrt(n)
    assert abs((s0 * s1).mean()) <= 4 / math.sqrt(n)


def test_spec_validation():
    with pytest.raises(ValueError):
        DisorderSpec(0, -1)
    with pytest.raises(ValueError):
        DisorderSpec(0, 0, -0.1)
    with pytest.raises(ValueError):
        weight_at(DisorderSpec(0), 0, (0, 0))
