"""Random-walk step laws on Z^2, n-step kernels and heat-kernel comparisons."""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from functools import cached_property, reduce
from pathlib import Path

import numpy as np
import yaml
from scipy import fft as sfft

from ._kernels import spread_compensated
from .errors import InvalidWalkError, KernelResourceError

DEFAULT_MEMORY_CAP = 512 * 2**20
_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StepDistribution:
    """Finite-support step law of a symmetric random walk on Z^2.

    Parameters
    ----------
    steps : (k, 2) integer array of nonzero-probability steps.
    probs : (k,) array of probabilities.

    The constructor rejects laws that are not normalised, not symmetric,
    not irreducible, periodic, or whose covariance is not a multiple of
    the identity.
    """

    steps: np.ndarray
    probs: np.ndarray
    name: str = "custom"
    cov_scale: float = field(init=False)
    radius: int = field(init=False)

    def __post_init__(self):
        steps = np.array(self.steps, dtype=np.int64).reshape(-1, 2)
        probs = np.array(self.probs, dtype=float).reshape(-1)
        if steps.shape[0] != probs.shape[0] or steps.shape[0] == 0:
            raise InvalidWalkError("steps and probs must be non-empty and aligned")
        if not np.all(np.isfinite(probs)) or np.any(probs <= 0):
            raise InvalidWalkError("probabilities must be finite and positive")
        if abs(math.fsum(probs) - 1.0) > _TOL:
            raise InvalidWalkError(f"probabilities sum to {math.fsum(probs)!r}, not 1")
        lookup = {}
        for s, p in zip(map(tuple, steps), probs):
            if s in lookup:
                raise InvalidWalkError(f"duplicate step {s}")
            lookup[s] = p
        for (a, b), p in lookup.items():
            if abs(lookup.get((-a, -b), 0.0) - p) > _TOL:
                raise InvalidWalkError(f"law is not symmetric at step {(a, b)}")
        if _lattice_index(steps) != 1:
            raise InvalidWalkError("steps do not generate Z^2 (walk is reducible)")
        radius = int(np.abs(steps).max())
        if _period(steps, radius) != 1:
            raise InvalidWalkError("walk is periodic")
        cov = (steps.T * probs) @ steps
        if abs(cov[0, 0] - cov[1, 1]) > _TOL or abs(cov[0, 1]) > _TOL:
            raise InvalidWalkError(f"covariance {cov.tolist()} is not a multiple of I")
        steps.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "cov_scale", float(cov[0, 0]))
        object.__setattr__(self, "radius", radius)

    @cached_property
    def stencil(self):
        """Contiguous (dx, dy, p) arrays for the compiled kernels."""
        return (
            np.ascontiguousarray(self.steps[:, 0]),
            np.ascontiguousarray(self.steps[:, 1]),
            np.ascontiguousarray(self.probs),
        )

    @property
    def covariance(self):
        return (self.steps.T * self.probs) @ self.steps

    def one_minus_char(self, k1, k2):
        """1 - E[exp(i k.S_1)], computed without cancellation near k = 0."""
        k1 = np.asarray(k1, dtype=float)
        k2 = np.asarray(k2, dtype=float)
        out = np.zeros(np.broadcast(k1, k2).shape)
        for (a, b), p in zip(self.steps, self.probs):
            out += 2.0 * p * np.sin(0.5 * (a * k1 + b * k2)) ** 2
        return out

    def char(self, k1, k2):
        return 1.0 - self.one_minus_char(k1, k2)

    def to_dict(self):
        return {
            "name": self.name,
            "steps": [[int(a), int(b), float(p)] for (a, b), p in zip(self.steps, self.probs)],
        }


def _lattice_index(steps):
    # index of the subgroup generated by the steps = gcd of all 2x2 minors
    g = 0
    for i in range(len(steps)):
        for j in range(i + 1, len(steps)):
            g = math.gcd(g, int(steps[i, 0] * steps[j, 1] - steps[i, 1] * steps[j, 0]))
    return g


def _period(steps, radius):
    """gcd of the return times n <= 2 * support diameter."""
    diam = 2 * radius
    nmax = 2 * diam
    size = 2 * nmax * radius + 1
    c = nmax * radius
    reach = np.zeros((size, size), dtype=bool)
    reach[c, c] = True
    times = []
    for n in range(1, nmax + 1):
        new = np.zeros_like(reach)
        for a, b in steps:
            new |= np.roll(np.roll(reach, a, axis=0), b, axis=1)
        reach = new
        if reach[c, c]:
            times.append(n)
    return reduce(math.gcd, times, 0)


def default_unit_covariance_walk():
    """Walk with P(+-e_i)=1/8, P(+-1,+-1)=1/16, P(+-2e_i)=1/16; covariance I."""
    steps, probs = [], []
    for s in [(1, 0), (-1, 0), (0, 1), (0, -1)]:
        steps.append(s)
        probs.append(1 / 8)
    for s in [(1, 1), (1, -1), (-1, 1), (-1, -1), (2, 0), (-2, 0), (0, 2), (0, -2)]:
        steps.append(s)
        probs.append(1 / 16)
    return StepDistribution(np.array(steps), np.array(probs), name="default")


def load_walk(spec="default"):
    """Walk from ``"default"``, a YAML/JSON file, a mapping or a step list.

    File or mapping layout::

        steps:
          - [1, 0, 0.125]
          - [-1, 0, 0.125]
          ...
    """
    if isinstance(spec, StepDistribution):
        return spec
    if spec is None or spec == "default":
        return default_unit_covariance_walk()
    if isinstance(spec, (str, Path)):
        path = Path(spec)
        data = yaml.safe_load(path.read_text())
        name = path.stem
    else:
        data, name = spec, "custom"
    if isinstance(data, dict):
        if data.get("name") == "default" and "steps" not in data:
            return default_unit_covariance_walk()
        name = data.get("name", name)
        data = data["steps"]
    arr = np.array(data, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidWalkError("walk steps must be rows of [dx, dy, probability]")
    steps = arr[:, :2]
    if not np.all(steps == np.round(steps)):
        raise InvalidWalkError("step coordinates must be integers")
    return StepDistribution(steps.astype(np.int64), arr[:, 2], name=name)


# ------------------------------------------------------------------ kernels
def _fourier_returns(phi, weights, n_max):
    out = np.empty(n_max + 1)
    out[0] = 1.0
    pw = weights.copy()
    for n in range(1, n_max + 1):
        pw *= phi
        out[n] = pw.sum()
        if n % 32 == 0:
            # |phi| <= 1, so entries this small can never contribute again
            keep = np.abs(pw) > 1e-60
            if not keep.all():
                pw, phi = pw[keep], phi[keep]
    return out


def _half_grid(M):
    # k-grid on [0, 2pi)^2 reduced by k -> -k; weights count mirrored points
    j1 = np.arange(M // 2 + 1)
    w1 = np.where((j1 == 0) | (j1 == M // 2), 1.0, 2.0)
    k = 2 * np.pi * np.arange(M) / M
    K1, K2 = np.meshgrid(2 * np.pi * j1 / M, k, indexing="ij")
    W = np.broadcast_to(w1[:, None], K1.shape)
    # the j1 = 0 and j1 = M/2 rows are themselves symmetric under k2 -> -k2,
    # so counting each point once there is exact
    return K1.ravel(), K2.ravel(), W.ravel() / M**2


def fourier_grid_size(walk, n):
    """Trapezoid grid size giving exact or alias-free (< 1e-17) n-step sums."""
    exact = 2 * n * walk.radius + 2
    safe = int(math.ceil(12.0 * math.sqrt(max(walk.cov_scale * n, 1.0)))) + 16
    M = max(16, min(exact, safe))
    return M + (M % 2)


def return_probabilities(walk, n_max):
    """q_n(0) for n = 0..n_max by the periodic trapezoid rule in Fourier space.

    The rule is exact for small n and has aliasing error below 1e-17 otherwise.
    """
    M = fourier_grid_size(walk, n_max)
    k1, k2, w = _half_grid(M)
    return _fourier_returns(walk.char(k1, k2), w, int(n_max))


def collision_mass_fourier(walk, N):
    """R_N = sum_{n=1}^N q_{2n}(0) via the closed geometric sum in Fourier space."""
    if N < 0:
        raise ValueError("N must be >= 0")
    if N == 0:
        return 0.0
    M = fourier_grid_size(walk, 2 * N)
    k1, k2, w = _half_grid(M)
    om = walk.one_minus_char(k1, k2)
    x = om * (2.0 - om)  # 1 - phi^2
    phi2 = 1.0 - x
    with np.errstate(divide="ignore", invalid="ignore"):
        geo = -np.expm1(N * np.log1p(-np.minimum(x, 1.0))) / x
    geo = np.where(x > 0, geo, float(N))
    return math.fsum(w * phi2 * geo)


def kernel_slice_fft(walk, n):
    """q_n on the box [-n r, n r]^2 by an alias-free FFT (absolute error ~1e-17)."""
    r = walk.radius
    L = 2 * n * r + 1
    M = sfft.next_fast_len(L)
    k = 2 * np.pi * np.arange(M) / M
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    q = sfft.ifft2(walk.char(K1, K2) ** n).real
    q = np.roll(q, (n * r, n * r), axis=(0, 1))[:L, :L]
    return np.maximum(q, 0.0)


class KernelTable:
    """n-step transition kernels q_n of a walk, n = 0..n_max.

    ``returns[n]`` holds q_n(0) for every n.  Exact slices (iterated
    convolution with compensated summation) are stored for n up to
    ``n_slices``; other slices are produced on request by FFT and cached.
    Slices are centred arrays of shape (2 n r + 1, 2 n r + 1).
    """

    def __init__(self, walk, n_max, returns, slices):
        self.walk = walk
        self.n_max = int(n_max)
        returns = np.asarray(returns, dtype=float)
        returns.setflags(write=False)
        self.returns = returns
        for s in slices.values():
            s.setflags(write=False)
        self._slices = dict(slices)
        self._lock = threading.Lock()

    @property
    def n_slices(self):
        return max(self._slices) if self._slices else -1

    def slice(self, n):
        if not 0 <= n <= self.n_max:
            raise ValueError(f"n={n} outside 0..{self.n_max}")
        s = self._slices.get(n)
        if s is None:
            s = kernel_slice_fft(self.walk, n)
            s.setflags(write=False)
            with self._lock:
                self._slices.setdefault(n, s)
        return s

    def q(self, n, x):
        s = self.slice(n)
        c = n * self.walk.radius
        i, j = int(x[0]) + c, int(x[1]) + c
        if 0 <= i < s.shape[0] and 0 <= j < s.shape[1]:
            return float(s[i, j])
        return 0.0


def slice_bytes(walk, n_slices):
    r = walk.radius
    return sum((2 * n * r + 1) ** 2 * 8 for n in range(n_slices + 1))


def build_kernel_table(walk, n_max, slices=True, memory_cap=DEFAULT_MEMORY_CAP):
    """Build q_n for n <= n_max.

    slices : True stores every exact slice, an int m stores n <= m, False none.
    Raises KernelResourceError if the stored slices exceed ``memory_cap`` bytes.
    """
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    n_slices = n_max if slices is True else (-1 if slices is False else min(int(slices), n_max))
    need = slice_bytes(walk, n_slices) if n_slices >= 0 else 0
    if need > memory_cap:
        raise KernelResourceError(
            f"{n_slices + 1} slices need {need / 2**20:.1f} MiB > cap {memory_cap / 2**20:.1f} MiB"
        )
    stored = {}
    if n_slices >= 0:
        r = walk.radius
        sx, sy, sp = walk.stencil
        cur = np.ones((1, 1))
        stored[0] = cur
        for n in range(1, n_slices + 1):
            nxt = np.empty((cur.shape[0] + 2 * r, cur.shape[1] + 2 * r))
            spread_compensated(cur, sx, sy, sp, r, nxt)
            stored[n] = nxt
            cur = nxt
    returns = return_probabilities(walk, n_max)
    for n, s in stored.items():
        c = n * walk.radius
        returns[n] = s[c, c]
    return KernelTable(walk, n_max, returns, stored)


def collision_mass(table, N):
    """R_N = sum_{n=1}^N q_{2n}(0) from a table with n_max >= 2N."""
    if N < 0 or 2 * N > table.n_max:
        raise ValueError(f"N={N} needs n_max >= {2 * N}, table has {table.n_max}")
    return math.fsum(table.returns[2 : 2 * N + 1 : 2])


def heat_kernel(t, x, cov_scale=1.0):
    """p_{ct}(x) = exp(-|x|^2 / (2ct)) / (2 pi c t) for points x of shape (..., 2)."""
    if not t > 0:
        raise ValueError("t must be positive")
    if not cov_scale > 0:
        raise ValueError("cov_scale must be positive")
    x = np.asarray(x, dtype=float)
    v = cov_scale * t
    return np.exp(-(x[..., 0] ** 2 + x[..., 1] ** 2) / (2 * v)) / (2 * np.pi * v)


def llt_deviation(table, n):
    """sup_x |q_n(x) - p_{cn}(x)| over the support box of q_n."""
    if not 1 <= n <= table.n_max:
        raise ValueError(f"n={n} outside 1..{table.n_max}")
    q = table.slice(n)
    c = n * table.walk.radius
    ax = np.arange(-c, c + 1, dtype=float)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    p = heat_kernel(n, np.stack([X, Y], axis=-1), table.walk.cov_scale)
    return float(np.abs(q - p).max())
