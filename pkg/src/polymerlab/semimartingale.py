"""Semimartingale decomposition of the pairing process and quadratic variations.

For a test function psi the pairing Z_k = Z_{N;k/N}(phi, psi) satisfies,
path by path,

    Z_{k+1} - Z_k = (1/N) Z_k(Delta_N psi) + dM_k,
    dM_k = (1/N) sum_y Wbar_{k+1}(y) psi_N(y) (e_{k+1,y} - 1),

with predictable quadratic variation increments
(sigma^2 / N^2) sum_y Wbar_{k+1}(y)^2 psi_N(y)^2.

Path statistics are collected by observers fed one field at a time, so a
single simulated path can serve several estimators.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DisorderMismatchError, GridTooCoarseError
from .polymer import (
    BUMP_MASS,
    LatticeCache,
    TestFunction,
    _bump_profile,
    discrete_laplacian_block,
    simulate_path,
)

MIN_EPS_LATTICE = 16.0  # eps >= 16 / N
MAX_SPACING = 0.25  # z-grid spacing <= sqrt(eps) / 4
DILATION = 5.0  # z-domain = support box dilated by 5 sqrt(eps)


def discrete_laplacian(psi, N, x, walk="default"):
    """N (sum_y q_1(x, y) psi(y / sqrt N) - psi(x / sqrt N)) at lattice point x."""
    from .walk import load_walk

    walk = load_walk(walk)
    if not callable(psi):
        psi = TestFunction.parse(psi)
    x = np.asarray(x, dtype=float)
    s = 1.0 / math.sqrt(N)
    here = psi(x * s)
    acc = np.zeros(np.shape(here))
    for step, p in zip(walk.steps, walk.probs):
        acc = acc + p * psi((x + step) * s)
    return N * (acc - here)


def _stream_id(fld):
    d = fld.disorder
    return (d.seed, d.replica, d.beta, fld.N)


# ------------------------------------------------------------ observers
class PathObserver:
    """Receives consecutive fields of one path."""

    def start(self, fld):
        pass

    def update(self, prev, fld):
        raise NotImplementedError

    def result(self):
        raise NotImplementedError


def observe_path(path, observers):
    """Feed every field of ``path`` to each observer; return their results."""
    prev = None
    for fld in path:
        if prev is None:
            for o in observers:
                o.start(fld)
        else:
            for o in observers:
                o.update(prev, fld)
        prev = fld
    return [o.result() for o in observers]


def _precrop(fld):
    pre = fld.meta.get("precrop")
    if pre is None:
        return fld.x0, fld.y0, fld.Wbar, fld.W
    return pre


@dataclass
class DecompositionTrace:
    """Per-step pieces of the decomposition for one path.

    ``Z`` has n + 1 entries, ``drift``, ``dM``, ``dQV`` and ``residual`` have
    n.  ``drift[k]`` already includes the 1/N time step.  ``residual`` is
    the identity defect relative to the largest of |Z_k|, |Z_{k+1}|,
    |drift_k|, |dM_k|.  ``tail_loss`` is the mass removed by tail cropping.
    """

    N: int
    sigma2: float
    psi: TestFunction
    stream: tuple
    Z: np.ndarray
    drift: np.ndarray
    dM: np.ndarray
    dQV: np.ndarray
    residual: np.ndarray
    tail_loss: np.ndarray

    @property
    def M(self):
        return np.concatenate([[0.0], np.cumsum(self.dM)])

    @property
    def QV(self):
        return np.concatenate([[0.0], np.cumsum(self.dQV)])

    @property
    def n_steps(self):
        return self.dM.shape[0]


class DecompositionObserver(PathObserver):
    def __init__(self, psi):
        self.psi = TestFunction.parse(psi)

    def start(self, fld):
        self.N = fld.N
        self.sigma2 = fld.sigma2
        self.stream = _stream_id(fld)
        psi, N, walk = self.psi, fld.N, fld.walk
        self._flat = psi.is_constant
        self._psi = LatticeCache(lambda x0, y0, h, w: psi.lattice_values(N, x0, y0, h, w))
        self._lap = LatticeCache(lambda x0, y0, h, w: discrete_laplacian_block(psi, N, walk, x0, y0, h, w))
        self._rows = []
        self.Z0 = self._pair(fld.x0, fld.y0, fld.W)

    def _pair(self, x0, y0, W):
        if self._flat:
            return self.psi.height * W.sum() / self.N
        return _kernels.weighted_sum(W, self._psi.block(x0, y0, *W.shape)) / self.N

    def update(self, prev, fld):
        N = self.N
        x0, y0, wbar, wnew = _precrop(fld)
        if self._flat:
            c = self.psi.height
            a, b, q = _kernels.step_sums_flat(wbar, wnew)
            a, b, q = c * a, c * b, c * c * q
            drift = 0.0
        else:
            psi = self._psi.block(x0, y0, *wbar.shape)
            a, b, q = _kernels.step_sums(wbar, wnew, psi)
            lap = self._lap.block(prev.x0, prev.y0, *prev.W.shape)
            drift = _kernels.weighted_sum(prev.W, lap) / N / N
        z_prev = self._rows[-1][0] if self._rows else self.Z0
        z_pre = b / N
        dM = (b - a) / N
        dqv = self.sigma2 * q / (N * N)
        scale = max(abs(z_prev), abs(z_pre), abs(drift), abs(dM), 1e-300)
        res = (z_pre - z_prev - drift - dM) / scale
        z_post = self._pair(fld.x0, fld.y0, fld.W) if "precrop" in fld.meta else z_pre
        self._rows.append((z_post, drift, dM, dqv, res, z_pre - z_post))

    def result(self):
        rows = np.array(self._rows).reshape(-1, 6)
        return DecompositionTrace(
            self.N,
            self.sigma2,
            self.psi,
            self.stream,
            np.concatenate([[self.Z0], rows[:, 0]]),
            rows[:, 1],
            rows[:, 2],
            rows[:, 3],
            rows[:, 4],
            rows[:, 5],
        )


def decompose(phi, psi, N, t, coupling=None, disorder=None, walk="default", tail_tol=0.0):
    """Decomposition trace of one path up to step floor(N t)."""
    path = simulate_path(phi, N, t, coupling, disorder, walk, tail_tol)
    return observe_path(path, [DecompositionObserver(psi)])[0]


def qv_process(trace, t=None):
    """Running <M>_k, or its value at k = floor(N t) when ``t`` is given."""
    qv = trace.QV
    if t is None:
        return qv
    return float(qv[int(math.floor(trace.N * t + 1e-9))])


class CrossVariationObserver(PathObserver):
    """Running (sigma^2 / N^2) sum_k sum_y Wbar_k^2 psi1 psi2 on one path."""

    def __init__(self, psi1, psi2):
        self.psi1 = TestFunction.parse(psi1)
        self.psi2 = TestFunction.parse(psi2)

    def start(self, fld):
        N = fld.N
        p1, p2 = self.psi1, self.psi2
        self.N, self.sigma2 = N, fld.sigma2
        self.stream = _stream_id(fld)
        self._prod = LatticeCache(
            lambda x0, y0, h, w: p1.lattice_values(N, x0, y0, h, w) * p2.lattice_values(N, x0, y0, h, w)
        )
        self._inc = []

    def update(self, prev, fld):
        x0, y0, wbar, _ = _precrop(fld)
        prod = self._prod.block(x0, y0, *wbar.shape)
        self._inc.append(self.sigma2 * _kernels.weighted_sum(wbar * wbar, prod) / self.N**2)

    def result(self):
        return CrossTrace(self.stream, np.concatenate([[0.0], np.cumsum(self._inc)]))


@dataclass
class CrossTrace:
    stream: tuple
    values: np.ndarray


def cross_qv(trace1, trace2, path=None):
    """Cross variation of the martingales of two traces on the same disorder.

    With ``path`` (an iterable of fields of that disorder stream) the
    cross variation is evaluated directly; otherwise it is recovered from
    the per-step quadratic variations by polarisation, which requires
    the traces to be for psi1 + psi2 and psi1 - psi2.
    """
    if trace1.stream != trace2.stream:
        raise DisorderMismatchError(f"streams differ: {trace1.stream} vs {trace2.stream}")
    if path is not None:
        return observe_path(path, [CrossVariationObserver(trace1.psi, trace2.psi)])[0].values
    return 0.25 * (trace1.QV - trace2.QV)


def cross_qv_path(psi1, psi2, phi, N, t, coupling=None, disorder=None, walk="default", tail_tol=0.0):
    path = simulate_path(phi, N, t, coupling, disorder, walk, tail_tol)
    return observe_path(path, [CrossVariationObserver(psi1, psi2)])[0].values


# ------------------------------------------------------------ mollifiers
def _gauss1d(d, eps):
    return np.exp(-(d * d) / (2 * eps)) / math.sqrt(2 * math.pi * eps)


def mollified_density(fld, eps, z, mollifier="heat", bar=False):
    """(1/N) sum_y W(y) m_eps(y / sqrt N - z) at points z of shape (..., 2).

    m_eps is the heat kernel p_eps or, for ``mollifier="bump"``, the
    normalised bump f_eps(x) = eps^-1 f(x / sqrt eps).
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    W = fld.Wbar if bar else fld.W
    z = np.asarray(z, dtype=float)
    shape = z.shape[:-1]
    z = z.reshape(-1, 2)
    s = 1.0 / math.sqrt(fld.N)
    xs, ys = fld.lattice_axes()
    xs, ys = xs * s, ys * s
    out = np.empty(z.shape[0])
    if mollifier == "heat":
        for i0 in range(0, z.shape[0], 256):
            zz = z[i0 : i0 + 256]
            g1 = _gauss1d(xs[None, :] - zz[:, :1], eps)
            g2 = _gauss1d(ys[None, :] - zz[:, 1:], eps)
            out[i0 : i0 + 256] = np.einsum("ma,ab,mb->m", g1, W, g2)
    elif mollifier == "bump":
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        for i, (a, b) in enumerate(z):
            rho2 = ((X - a) ** 2 + (Y - b) ** 2) / eps
            out[i] = (W * _bump_profile(rho2)).sum() / (BUMP_MASS * eps)
    else:
        raise ValueError(f"unknown mollifier {mollifier!r}")
    return (out / fld.N).reshape(shape)


@dataclass(frozen=True)
class ZGrid:
    """Tensor grid z1 x z2 with uniform spacing h."""

    z1: np.ndarray
    z2: np.ndarray
    h: float


def heat_grid(fld, eps, spacing=MAX_SPACING, dilation=DILATION, bar=True):
    """Heat-mollified density of (W)bar on a grid covering the dilated support box.

    Returns (ZGrid, D) with D[i, j] the density at (z1[i], z2[j]).
    """
    if spacing > MAX_SPACING:
        raise GridTooCoarseError(f"spacing {spacing} sqrt(eps) exceeds {MAX_SPACING} sqrt(eps)")
    W = fld.Wbar if bar else fld.W
    s = 1.0 / math.sqrt(fld.N)
    xs, ys = fld.lattice_axes()
    xs, ys = xs * s, ys * s
    se = math.sqrt(eps)
    h = spacing * se
    pad = dilation * se
    z1 = np.arange(xs[0] - pad, xs[-1] + pad + 0.5 * h, h)
    z2 = np.arange(ys[0] - pad, ys[-1] + pad + 0.5 * h, h)
    A = _gauss1d(z1[:, None] - xs[None, :], eps)
    B = _gauss1d(z2[:, None] - ys[None, :], eps)
    D = (A @ W) @ B.T / fld.N
    return ZGrid(z1, z2, h), D


def _check_eps(eps, N):
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if eps * N < MIN_EPS_LATTICE * (1 - 1e-12):
        raise ValueError(f"eps={eps} below {MIN_EPS_LATTICE}/N: mollifier does not resolve the lattice")


class RenormalizedQVObserver(PathObserver):
    """(4 pi / log(1/eps)) (1/N) sum_k h^2 sum_z D_k(z)^2 psi(z)^2 for each eps.

    D_k is the heat-mollified density of Wbar_k, k = 1..n.
    """

    def __init__(self, eps_list, psi="constant", spacing=MAX_SPACING, dilation=DILATION):
        if spacing > MAX_SPACING:
            raise GridTooCoarseError(f"spacing {spacing} sqrt(eps) exceeds {MAX_SPACING} sqrt(eps)")
        self.eps_list = [float(e) for e in eps_list]
        self.psi = TestFunction.parse(psi)
        self.spacing = spacing
        self.dilation = dilation

    def start(self, fld):
        for e in self.eps_list:
            _check_eps(e, fld.N)
        self.N = fld.N
        self._acc = {e: 0.0 for e in self.eps_list}

    def update(self, prev, fld):
        for e in self.eps_list:
            g, D = heat_grid(fld, e, self.spacing, self.dilation)
            if self.psi.is_constant:
                v = self.psi.height**2 * np.einsum("ij,ij->", D, D)
            else:
                Z1, Z2 = np.meshgrid(g.z1, g.z2, indexing="ij")
                p = self.psi(np.stack([Z1, Z2], axis=-1))
                v = np.einsum("ij,ij->", D * D, p * p)
            self._acc[e] += v * g.h**2 / self.N

    def result(self):
        return {e: 4 * math.pi / math.log(1 / e) * a for e, a in self._acc.items()}


def qv_renormalized(path, eps, psi="constant", t=None, spacing=MAX_SPACING, dilation=DILATION):
    """Renormalised QV estimator along a path of fields.

    ``eps`` may be a float or a list; a list returns a dict eps -> value.
    If ``t`` is given, fields beyond step floor(N t) are ignored.
    """
    many = np.ndim(eps) > 0
    obs = RenormalizedQVObserver(eps if many else [eps], psi, spacing, dilation)
    if t is not None:
        path = _truncate(path, t)
    res = observe_path(path, [obs])[0]
    return res if many else res[float(eps)]


def _truncate(path, t):
    for fld in path:
        if fld.n > math.floor(fld.N * t + 1e-9):
            break
        yield fld


# ------------------------------------------------------------ peaks
def bump_density_lattice(fld, eps, bar=True):
    """Bump-mollified density at the lattice points of the box dilated by the bump.

    Returns (x0, y0, D) with D[i, j] the density at lattice (x0 + i, y0 + j).
    """
    from scipy.signal import fftconvolve

    W = fld.Wbar if bar else fld.W
    N = fld.N
    R = int(math.floor(math.sqrt(eps * N)))
    ax = np.arange(-R, R + 1)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    K = _bump_profile((X * X + Y * Y) / (eps * N)) / (BUMP_MASS * eps)
    D = fftconvolve(W, K, mode="full") / N
    return fld.x0 - R, fld.y0 - R, np.maximum(D, 0.0)


@dataclass
class PeakStats:
    occupation: float
    area: float
    band_area: float
    total: float


class PeakObserver(PathObserver):
    """Space-time measure of the peak set {D >= lam log(1/eps)} inside region A.

    D is the bump-mollified density of Wbar_k on the lattice grid
    (spacing 1/sqrt N), integrated over time steps k with s < k/N <= t.
    ``band_area`` is the measure of {log(1/eps)/lam <= D < lam log(1/eps)}.
    """

    def __init__(self, lam_list, eps_list, region=None, window=(0.0, math.inf)):
        self.lam_list = [float(x) for x in lam_list]
        self.eps_list = [float(e) for e in eps_list]
        for e in self.eps_list:
            if not 0 < e < 0.5:
                raise ValueError("eps must lie in (0, 1/2)")
        for lam in self.lam_list:
            if not lam > 0:
                raise ValueError("lambda must be positive")
        self.region = None if region is None else TestFunction.parse(region)
        self.window = window

    def start(self, fld):
        self.N = fld.N
        self._acc = {(lam, e): [0.0, 0.0, 0.0, 0.0] for lam in self.lam_list for e in self.eps_list}

    def update(self, prev, fld):
        u = fld.n / self.N
        if not (self.window[0] < u <= self.window[1] + 1e-12):
            return
        cell = 1.0 / self.N / self.N  # dt * dz with dz = 1/N
        for e in self.eps_list:
            x0, y0, D = bump_density_lattice(fld, e)
            if self.region is not None:
                mask = self.region.lattice_values(self.N, x0, y0, *D.shape) > 0
                D = np.where(mask, D, 0.0)
            L = math.log(1 / e)
            total = D.sum()
            for lam in self.lam_list:
                hi = D >= lam * L
                band = (D >= L / lam) & ~hi
                a = self._acc[(lam, e)]
                a[0] += D[hi].sum() * cell
                a[1] += hi.sum() * cell
                a[2] += band.sum() * cell
                a[3] += total * cell

    def result(self):
        return {k: PeakStats(*v) for k, v in self._acc.items()}


def peak_measure(path, lam, eps, region=None, window=(0.0, math.inf)):
    """(occupation, area) of the peak set for a single (lambda, eps)."""
    st = observe_path(path, [PeakObserver([lam], [eps], region, window)])[0][(float(lam), float(eps))]
    return st.occupation, st.area
