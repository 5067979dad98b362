"""Weighted renewal functions U_N by exact dynamic programming and the discrete variance.

U(0) = sigma^2 and U(n) = sigma^2 sum_{m<n} U(m) q_{2(n-m)}(0); the spatial
version replaces q_{2j}(0) by the squared kernel q_j(x)^2 convolved in space.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sfft

from .errors import KernelResourceError, UnsupportedTestFunctionError
from .polymer import TestFunction, init_field
from .walk import DEFAULT_MEMORY_CAP, KernelTable, load_walk, return_probabilities

SPATIAL_MAX = 512


@dataclass(frozen=True)
class RenewalTable:
    """U_N(n) for n = 0..n_max, optionally U_N(n, x) for n <= n_spatial.

    ``spatial[n]`` is a centred array whose [c, c] entry is x = 0.
    """

    sigma2: float
    totals: np.ndarray
    walk: object
    spatial: dict = field(default_factory=dict, repr=False)

    @property
    def n_max(self):
        return self.totals.shape[0] - 1

    @property
    def n_spatial(self):
        return max(self.spatial) if self.spatial else -1

    def U(self, n, x=None):
        if x is None:
            return float(self.totals[n])
        s = self.spatial[n]
        c = s.shape[0] // 2
        i, j = int(x[0]) + c, int(x[1]) + c
        if 0 <= i < s.shape[0] and 0 <= j < s.shape[1]:
            return float(s[i, j])
        return 0.0


def _sigma2(coupling):
    return float(getattr(coupling, "sigma2", coupling))


def _returns(kernel, n):
    """q_j(0) for j = 0..n from a KernelTable, or from a walk via Fourier sums."""
    if isinstance(kernel, KernelTable) and kernel.n_max >= n:
        return kernel.returns[: n + 1], kernel.walk
    walk = kernel.walk if isinstance(kernel, KernelTable) else load_walk(kernel)
    return return_probabilities(walk, n), walk


def renewal_totals(sigma2, q2):
    """Solve U(n) = sigma2 (delta_{n0} + sum_{m<n} U(m) q2[n-m]) for n < len(q2).

    ``q2[j]`` is q_{2j}(0); q2[0] is ignored.
    """
    n_max = q2.shape[0] - 1
    U = np.empty(n_max + 1)
    U[0] = sigma2
    for n in range(1, n_max + 1):
        U[n] = sigma2 * np.dot(U[:n], q2[n:0:-1])
    return U


def build_totals(coupling, kernel="default", n_max=None, n_spatial=0, memory_cap=DEFAULT_MEMORY_CAP):
    """RenewalTable with U(0..n_max) and, if n_spatial > 0, spatial slices.

    ``coupling`` is a CriticalCoupling or a plain sigma^2; ``kernel`` a
    KernelTable with n_max >= 2 n_max, or anything :func:`load_walk` accepts.
    """
    s2 = _sigma2(coupling)
    if n_max is None:
        n_max = getattr(coupling, "N", None)
        if n_max is None:
            raise ValueError("n_max is required when coupling carries no N")
    n_max = int(n_max)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    if not 0 <= n_spatial <= min(SPATIAL_MAX, n_max):
        raise ValueError(f"n_spatial must lie in 0..{min(SPATIAL_MAX, n_max)}")
    q, walk = _returns(kernel, 2 * n_max)
    U = renewal_totals(s2, np.asarray(q[::2], dtype=float))
    U.setflags(write=False)
    spatial = _spatial(s2, walk, n_spatial, memory_cap) if n_spatial > 0 else {}
    return RenewalTable(s2, U, walk, spatial)


def _spatial(s2, walk, n_sp, memory_cap):
    """U(n, x) for n <= n_sp in Fourier space; the torus exceeds every support."""
    r = walk.radius
    M = sfft.next_fast_len(2 * n_sp * r + 1)
    h = M // 2 + 1
    need = 2 * (n_sp + 1) * M * h * 16
    if need > memory_cap:
        raise KernelResourceError(f"spatial renewal slices need {need / 2**20:.0f} MiB > cap")
    k = 2 * np.pi * np.arange(M) / M
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    ch = walk.char(K1, K2)
    Qh = np.empty((n_sp + 1, M, h), dtype=complex)
    pw = np.ones_like(ch)
    Qh[0] = 0.0
    for j in range(1, n_sp + 1):
        pw = pw * ch
        qj = sfft.ifft2(pw).real
        Qh[j] = sfft.rfft2(qj * qj)
    Uh = np.empty_like(Qh)
    Uh[0] = s2  # transform of s2 delta_0
    for n in range(1, n_sp + 1):
        Uh[n] = s2 * np.einsum("mij,mij->ij", Uh[:n], Qh[n:0:-1])
    out = {}
    for n in range(n_sp + 1):
        u = sfft.irfft2(Uh[n], s=(M, M))
        c = n * r
        u = np.roll(u, (c, c), axis=(0, 1))[: 2 * c + 1, : 2 * c + 1]
        u = np.maximum(u, 0.0)
        u.setflags(write=False)
        out[n] = u
    return out


def renewal_kfold(sigma2, q2, n):
    """U(n) from the explicit k-fold sum over 0 < n_1 < ... < n_k < n.

    Exponential cost; for validating the recursion at small n only.
    """
    from itertools import combinations

    if n == 0:
        return sigma2
    total = 0.0
    for k in range(0, n):
        for cut in combinations(range(1, n), k):
            pts = (0,) + cut + (n,)
            prod = 1.0
            for a, b in zip(pts[:-1], pts[1:]):
                prod *= q2[b - a]
            total += sigma2 ** (k + 2) * prod
    return total


# ------------------------------------------------------------ comparisons
def _G(theta):
    from .analytics import G_theta

    return lambda t: G_theta(theta, t)


def compare_to_G(table, N, theta, G=None, delta=0.1, T=1.0):
    """max over delta N <= n <= T N of |U(n) / ((sigma^2 log N / N) G_theta(n/N)) - 1|.

    Returns (max_error, n, ratio) with the per-n ratios U / prediction.
    """
    G = _G(theta) if G is None else G
    n = np.arange(int(math.ceil(delta * N - 1e-9)), int(math.floor(T * N + 1e-9)) + 1)
    if n[-1] > table.n_max:
        raise ValueError(f"table stops at n={table.n_max}, need {n[-1]}")
    scale = table.sigma2 * math.log(N) / N
    pred = scale * np.array([G(v / N) for v in n])
    ratio = table.totals[n] / pred
    return float(np.max(np.abs(ratio - 1))), n, ratio


def envelope_constant(table, N, theta, T=1.0, G_hat=None):
    """Smallest C with U(n) <= C (sigma^2 log N / N) G_hat(n / N) for 1 <= n <= T N."""
    from .analytics import GHat

    hat = GHat.fit(theta, T) if G_hat is None else G_hat
    n = np.arange(1, int(math.floor(T * N + 1e-9)) + 1)
    pred = table.sigma2 * math.log(N) / N * hat(n / N)
    return float(np.max(table.totals[n] / pred))


def laplace_sum(table, lam, N, T=1.0):
    """sum_{u=1}^{N T} e^(-lam u / N) U(u)."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n = np.arange(1, int(math.floor(N * T + 1e-9)) + 1)
    if n.size and n[-1] > table.n_max:
        raise ValueError(f"table stops at n={table.n_max}, need {n[-1]}")
    return math.fsum(np.exp(-lam * n / N) * table.totals[n])


def collision_profile(phi, N, n_max, walk="default"):
    """A_i = sum_{x, x'} phi_N(x) phi_N(x') q_{2i}(x' - x) for i = 0..n_max.

    Computed as ||phi_N * q_i||^2 by Parseval on a torus that holds every
    support (or is alias-free to ~1e-17 when that is cheaper).
    """
    walk = load_walk(walk)
    fld = init_field(phi, N, walk=walk)
    W0 = fld.W
    width = max(W0.shape)
    r = walk.radius
    exact = width + 2 * n_max * r
    safe = width + 2 * int(math.ceil(12 * math.sqrt(max(walk.cov_scale * n_max, 1.0)))) + 16
    M = sfft.next_fast_len(min(exact, safe))
    ph = sfft.fft2(W0, s=(M, M))
    k = 2 * np.pi * np.arange(M) / M
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    ch2 = (walk.char(K1, K2) ** 2).ravel()
    pw = (np.abs(ph) ** 2).ravel() / (M * M)
    A = np.empty(n_max + 1)
    A[0] = math.fsum(pw)
    for i in range(1, n_max + 1):
        pw = pw * ch2
        A[i] = pw.sum()
        if i % 32 == 0:
            keep = np.abs(pw) > 1e-60
            if not keep.all():
                pw, ch2 = pw[keep], ch2[keep]
    return A


def discrete_variance_mass(phi, N, t, table, psi="constant", kernel=None):
    """Var Z_{N;t}(phi, 1) = (1/N^2) sum_{1 <= i <= j <= Nt} A_i U(j - i).

    A_i is :func:`collision_profile`; only constant psi is supported.
    """
    psi = TestFunction.parse(psi)
    if not psi.is_constant:
        raise UnsupportedTestFunctionError("exact variance formula needs a constant psi")
    n = int(math.floor(N * t + 1e-9))
    if n <= 0:
        return 0.0
    if n > table.n_max:
        raise ValueError(f"table stops at n={table.n_max}, need {n}")
    walk = kernel.walk if isinstance(kernel, KernelTable) else table.walk
    A = collision_profile(phi, N, n, walk)
    C = np.cumsum(table.totals[: n + 1])
    # sum_i A_i sum_{j=i}^{n} U(j - i) = sum_i A_i C(n - i)
    return psi.height**2 * math.fsum(A[1:] * C[n - 1 :: -1]) / N**2
