"""Bernoulli disorder, its cumulant function and critical-window calibration."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import _hash
from .errors import CalibrationError
from .walk import collision_mass_fourier, load_walk


def lambda_of_beta(beta):
    """log E[exp(beta * omega)] = log cosh(beta) for omega = +-1."""
    beta = np.asarray(beta, dtype=float)
    # log cosh b = |b| + log1p(exp(-2|b|)) - log 2, stable for large |b|
    a = np.abs(beta)
    out = a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)
    return float(out) if out.ndim == 0 else out


def sigma2_of_beta(beta):
    """Var(e) = exp(lambda(2b) - 2 lambda(b)) - 1 = tanh(b)^2."""
    return np.tanh(beta) ** 2


def critical_sigma2(N, theta, R_N):
    """Target variance (1 / R_N) (1 + theta / log N) of the critical window."""
    if N < 2:
        raise ValueError("N must be >= 2")
    return (1.0 + theta / math.log(N)) / R_N


@dataclass(frozen=True)
class DisorderSpec:
    """Identifies one disorder realisation: a pure function of (seed, replica)."""

    seed: int
    replica: int = 0
    beta: float = 0.0

    def __post_init__(self):
        if self.replica < 0:
            raise ValueError("replica must be >= 0")
        if not (self.beta >= 0 and math.isfinite(self.beta)):
            raise ValueError("beta must be finite and >= 0")

    @property
    def weights(self):
        """(e_plus, e_minus) = exp(+-beta - lambda(beta))."""
        lam = lambda_of_beta(self.beta)
        return math.exp(self.beta - lam), math.exp(-self.beta - lam)

    def key(self):
        return _hash.replica_key(self.seed, self.replica)

    def time_key(self, n):
        return np.uint64(_hash.time_key(self.key(), n))

    def with_replica(self, replica):
        return DisorderSpec(self.seed, replica, self.beta)


@dataclass(frozen=True)
class CriticalCoupling:
    N: int
    theta: float
    R_N: float
    sigma2: float
    beta_N: float

    def to_dict(self):
        return asdict(self)


def calibrate(N, theta, R_N=None, walk="default"):
    """Critical-window coupling beta_N = artanh(sqrt(target)).

    ``R_N`` defaults to the exact collision mass of ``walk``.  Raises
    CalibrationError when the target variance lies outside (0, 1), where
    the +-1 law has no solution.
    """
    if R_N is None:
        R_N = collision_mass_fourier(load_walk(walk), N)
    target = critical_sigma2(N, theta, R_N)
    if not target > 0:
        raise CalibrationError(
            f"target variance {target:.6g} <= 0 at N={N}, theta={theta}: theta too negative"
        )
    if not target < 1:
        raise CalibrationError(
            f"target variance {target:.6g} >= 1 at N={N}, theta={theta} (R_N={R_N:.6g}); "
            "+-1 disorder needs theta < log(N) * (R_N - 1)"
        )
    beta = math.atanh(math.sqrt(target))
    return CriticalCoupling(int(N), float(theta), float(R_N), float(target), beta)


def max_feasible_theta(N, R_N=None, walk="default"):
    """Supremum of theta for which calibration succeeds at this N."""
    if R_N is None:
        R_N = collision_mass_fourier(load_walk(walk), N)
    return math.log(N) * (R_N - 1.0)


def weight_at(spec, n, x):
    """e_{n,x} for lattice point x = (x1, x2); reference implementation."""
    if n < 1:
        raise ValueError("weights are indexed by n >= 1")
    ep, em = spec.weights
    return ep if _hash.sign_bit(spec.seed, spec.replica, n, int(x[0]), int(x[1])) else em


def weights_grid(spec, n, x1, x2):
    """Vectorised e_{n,x} on broadcast integer arrays x1, x2."""
    ep, em = spec.weights
    bits = _hash.sign_bits_np(spec.seed, spec.replica, n, x1, x2)
    return np.where(bits == 1, ep, em)


def omega_grid(spec, n, x1, x2):
    """The underlying signs omega_{n,x} in {-1, +1}."""
    return 2 * _hash.sign_bits_np(spec.seed, spec.replica, n, x1, x2).astype(np.int64) - 1
