"""Transfer-matrix evolution of polymer partition-function fields.

A field at time n holds W_n(y) = sum_x phi_N(x) Z_{0,n}(x, y) on an integer
box of the lattice, together with the pre-weight field Wbar_n (the one-step
average of W_{n-1} before the time-n disorder is applied).  Fields run
forward in time; the 1/N normalisation is applied only when pairing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate

from . import _kernels
from ._hash import apply_signs
from .disorder import DisorderSpec
from .errors import EmptySupportError, OverflowGuardError
from .walk import load_walk

OVERFLOW_GUARD = 1e300
GAUSSIAN_CUTOFF = 10.0  # window half-width in standard deviations


def _bump_profile(rho2):
    out = np.zeros_like(rho2)
    inside = rho2 < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


# integral of exp(1 - 1/(1 - |u|^2)) over the unit disc
BUMP_MASS = math.pi * integrate.quad(lambda w: math.exp(1.0 - 1.0 / w), 0.0, 1.0, epsabs=1e-15)[0]


@dataclass(frozen=True)
class TestFunction:
    """Test function on R^2 evaluated at macroscopic points.

    Use the constructors :meth:`constant`, :meth:`gaussian`, :meth:`bump`
    and :meth:`indicator`.  ``scale`` is the window half-width (constant),
    the variance (gaussian) or the radius (bump).
    """

    __test__ = False  # not a pytest class

    kind: str
    center: tuple = (0.0, 0.0)
    scale: float | None = None
    height: float = 1.0
    upper: tuple | None = None

    # -- constructors
    @classmethod
    def constant(cls, value=1.0, window=None):
        return cls("constant", (0.0, 0.0), None if window is None else float(window), float(value))

    @classmethod
    def gaussian(cls, center=(0.0, 0.0), variance=1.0, height=None):
        """exp(-|u-c|^2 / 2v) scaled to a probability density unless ``height`` is given."""
        if not variance > 0:
            raise ValueError("variance must be positive")
        h = 1.0 / (2 * math.pi * variance) if height is None else float(height)
        return cls("gaussian", tuple(map(float, center)), float(variance), h)

    @classmethod
    def bump(cls, center=(0.0, 0.0), radius=1.0, height=1.0):
        """height * exp(1 - 1/(1 - |u-c|^2/R^2)) on the open disc of radius R."""
        if not radius > 0:
            raise ValueError("radius must be positive")
        return cls("bump", tuple(map(float, center)), float(radius), float(height))

    @classmethod
    def indicator(cls, lower, upper, height=1.0):
        """height on the half-open rectangle [lower, upper)."""
        lo, hi = tuple(map(float, lower)), tuple(map(float, upper))
        if not (hi[0] > lo[0] and hi[1] > lo[1]):
            raise ValueError("indicator rectangle is empty")
        return cls("indicator", lo, None, float(height), hi)

    # -- evaluation
    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        x, y = u[..., 0], u[..., 1]
        if self.kind == "constant":
            return np.full(x.shape, self.height)
        dx, dy = x - self.center[0], y - self.center[1]
        if self.kind == "gaussian":
            return self.height * np.exp(-(dx * dx + dy * dy) / (2 * self.scale))
        if self.kind == "bump":
            return self.height * _bump_profile((dx * dx + dy * dy) / self.scale**2)
        if self.kind == "indicator":
            inside = (x >= self.center[0]) & (x < self.upper[0]) & (y >= self.center[1]) & (y < self.upper[1])
            return np.where(inside, self.height, 0.0)
        raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def is_constant(self):
        return self.kind == "constant"

    def window(self):
        """Macroscopic (xmin, xmax, ymin, ymax) outside which f vanishes, or None."""
        cx, cy = self.center
        if self.kind == "constant":
            if self.scale is None:
                return None
            return (-self.scale, self.scale, -self.scale, self.scale)
        if self.kind == "gaussian":
            r = GAUSSIAN_CUTOFF * math.sqrt(self.scale)
        elif self.kind == "bump":
            r = self.scale
        else:
            return (cx, self.upper[0], cy, self.upper[1])
        return (cx - r, cx + r, cy - r, cy + r)

    def integral(self):
        if self.kind == "gaussian":
            return self.height * 2 * math.pi * self.scale
        if self.kind == "bump":
            return self.height * BUMP_MASS * self.scale**2
        if self.kind == "indicator":
            return self.height * (self.upper[0] - self.center[0]) * (self.upper[1] - self.center[1])
        if self.scale is None:
            return math.inf
        return self.height * (2 * self.scale) ** 2

    def sup_norm(self):
        return abs(self.height)

    def lattice_values(self, N, x0, y0, h, w):
        """f((x0 + i) / sqrt N, (y0 + j) / sqrt N) on an h x w block."""
        if self.kind == "constant":
            return np.full((h, w), self.height)
        s = 1.0 / math.sqrt(N)
        xs = (x0 + np.arange(h)) * s
        ys = (y0 + np.arange(w)) * s
        if self.kind == "gaussian":
            gx = np.exp(-((xs - self.center[0]) ** 2) / (2 * self.scale))
            gy = np.exp(-((ys - self.center[1]) ** 2) / (2 * self.scale))
            return self.height * np.outer(gx, gy)
        if self.kind == "indicator":
            ix = ((xs >= self.center[0]) & (xs < self.upper[0])).astype(float)
            iy = ((ys >= self.center[1]) & (ys < self.upper[1])).astype(float)
            return self.height * np.outer(ix, iy)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        return self(np.stack([X, Y], axis=-1))

    # -- text form
    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "constant":
            d["value"] = self.height
            if self.scale is not None:
                d["window"] = self.scale
        elif self.kind == "gaussian":
            d.update(cx=self.center[0], cy=self.center[1], var=self.scale, height=self.height)
        elif self.kind == "bump":
            d.update(cx=self.center[0], cy=self.center[1], r=self.scale, height=self.height)
        else:
            d.update(x0=self.center[0], y0=self.center[1], x1=self.upper[0], y1=self.upper[1], height=self.height)
        return d

    @classmethod
    def parse(cls, spec):
        """From ``"kind:key=val,..."`` or a mapping with a ``kind`` entry.

        Keys: constant(value, window); gaussian(cx, cy, var, height);
        bump(cx, cy, r, height); indicator(x0, y0, x1, y1, height).
        """
        if isinstance(spec, TestFunction):
            return spec
        if isinstance(spec, str):
            kind, _, rest = spec.partition(":")
            kw = {}
            for item in filter(None, (p.strip() for p in rest.split(","))):
                k, _, v = item.partition("=")
                kw[k.strip()] = float(v)
        else:
            kw = dict(spec)
            kind = kw.pop("kind")
        kind = kind.strip()
        c = (kw.pop("cx", 0.0), kw.pop("cy", 0.0))
        if kind == "constant":
            out = cls.constant(kw.pop("value", 1.0), kw.pop("window", None))
        elif kind == "gaussian":
            out = cls.gaussian(c, kw.pop("var", 1.0), kw.pop("height", None))
        elif kind == "bump":
            out = cls.bump(c, kw.pop("r", 1.0), kw.pop("height", 1.0))
        elif kind == "indicator":
            out = cls.indicator(
                (kw.pop("x0"), kw.pop("y0")), (kw.pop("x1"), kw.pop("y1")), kw.pop("height", 1.0)
            )
        else:
            raise ValueError(f"unknown test function kind {kind!r}")
        if kw:
            raise ValueError(f"unused test function keys {sorted(kw)}")
        return out


class LatticeCache:
    """Values of a lattice function on growing boxes, recomputed only on growth.

    ``evaluate(x0, y0, h, w)`` must return the h x w block at origin (x0, y0).
    """

    def __init__(self, evaluate, grow=0.25):
        self._evaluate = evaluate
        self._grow = grow
        self._box = None
        self._vals = None

    def block(self, x0, y0, h, w):
        b = self._box
        if b is None or x0 < b[0] or y0 < b[1] or x0 + h > b[0] + b[2] or y0 + w > b[1] + b[3]:
            mh = int(self._grow * h) + 4
            mw = int(self._grow * w) + 4
            if b is not None:
                lo0, lo1 = min(b[0], x0 - mh), min(b[1], y0 - mw)
                hi0 = max(b[0] + b[2], x0 + h + mh)
                hi1 = max(b[1] + b[3], y0 + w + mw)
            else:
                lo0, lo1, hi0, hi1 = x0 - mh, y0 - mw, x0 + h + mh, y0 + w + mw
            self._box = b = (lo0, lo1, hi0 - lo0, hi1 - lo1)
            self._vals = np.ascontiguousarray(self._evaluate(*b))
        i, j = x0 - b[0], y0 - b[1]
        return self._vals[i : i + h, j : j + w]


def discrete_laplacian_block(psi, N, walk, x0, y0, h, w):
    """Delta_N psi = N (sum_s p(s) psi_N(y + s) - psi_N(y)) on a block."""
    if psi.is_constant:
        return np.zeros((h, w))
    r = walk.radius
    big = psi.lattice_values(N, x0 - r, y0 - r, h + 2 * r, w + 2 * r)
    avg = np.zeros((h, w))
    for (a, b), p in zip(walk.steps, walk.probs):
        avg += p * big[r + a : r + a + h, r + b : r + b + w]
    return N * (avg - big[r : r + h, r : r + w])


@dataclass(frozen=True, eq=False)
class PolymerField:
    """State of the field recursion at time ``n``.

    ``W`` and ``Wbar`` share the box whose [0, 0] entry is lattice point
    (x0, y0).  At n = 0, ``Wbar`` is None.
    """

    n: int
    x0: int
    y0: int
    W: np.ndarray
    Wbar: np.ndarray | None
    N: int
    walk: object
    disorder: DisorderSpec
    coupling: object = None
    tail_tol: float = 0.0
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def box(self):
        return (self.x0, self.y0, self.W.shape[0], self.W.shape[1])

    @property
    def sigma2(self):
        return math.tanh(self.disorder.beta) ** 2

    def lattice_axes(self):
        h, w = self.W.shape
        return np.arange(self.x0, self.x0 + h), np.arange(self.y0, self.y0 + w)


def init_field(phi, N, coupling=None, disorder=None, walk="default", tail_tol=0.0):
    """Field at n = 0: W_0(y) = phi(y / sqrt N) on the exact nonzero box.

    If ``coupling`` is given its beta_N replaces the disorder's beta.
    ``tail_tol`` > 0 enables cropping of boundary rows and columns whose
    entries all fall below tail_tol * max|W| after each step.
    """
    phi = TestFunction.parse(phi)
    walk = load_walk(walk)
    if disorder is None:
        disorder = DisorderSpec(seed=0)
    if coupling is not None:
        disorder = replace(disorder, beta=coupling.beta_N)
    win = phi.window()
    if win is None:
        raise EmptySupportError("initial test function needs a bounded window")
    s = math.sqrt(N)
    i0, i1 = math.ceil(win[0] * s), math.floor(win[1] * s)
    j0, j1 = math.ceil(win[2] * s), math.floor(win[3] * s)
    if i1 < i0 or j1 < j0:
        raise EmptySupportError("window contains no lattice point")
    vals = phi.lattice_values(N, i0, j0, i1 - i0 + 1, j1 - j0 + 1)
    if np.any(vals < 0):
        raise ValueError("initial test function must be nonnegative")
    a0, a1, b0, b1 = _kernels.trim_bounds(vals, 0.0)
    if a1 == 0:
        raise EmptySupportError("initial test function vanishes on every lattice point of its window")
    W = np.ascontiguousarray(vals[a0:a1, b0:b1])
    return PolymerField(0, i0 + a0, j0 + b0, W, None, int(N), walk, disorder, coupling, float(tail_tol))


def step(fld):
    """Advance one time step: Wbar_{n+1} = W_n * q_1, W_{n+1} = e_{n+1} Wbar_{n+1}."""
    walk = fld.walk
    r = walk.radius
    sx, sy, sp = walk.stencil
    h, w = fld.W.shape
    wbar = np.empty((h + 2 * r, w + 2 * r))
    _kernels.spread(fld.W, sx, sy, sp, r, wbar)
    x0, y0 = fld.x0 - r, fld.y0 - r
    n = fld.n + 1
    beta = fld.disorder.beta
    if beta == 0.0:
        wnew = wbar
        cmax = float(np.abs(wbar).max()) if fld.tail_tol > 0 else 0.0
    else:
        ep, em = fld.disorder.weights
        wnew = np.empty_like(wbar)
        cmax = apply_signs(wbar, x0, y0, fld.disorder.time_key(n), ep, em, wnew)
        if not cmax <= OVERFLOW_GUARD:
            raise OverflowGuardError(f"field entry {cmax:.3g} exceeds {OVERFLOW_GUARD:g} at step {n}")
    meta = {}
    if fld.tail_tol > 0:
        a0, a1, b0, b1 = _kernels.trim_bounds(wnew, fld.tail_tol * cmax)
        if a1 > 0 and (a0 > 0 or b0 > 0 or a1 < wnew.shape[0] or b1 < wnew.shape[1]):
            # the uncropped step is kept so identity checks stay exact
            meta["precrop"] = (x0, y0, wbar, wnew)
            wbar = np.ascontiguousarray(wbar[a0:a1, b0:b1])
            wnew = wbar if beta == 0.0 else np.ascontiguousarray(wnew[a0:a1, b0:b1])
            x0 += a0
            y0 += b0
    return PolymerField(n, x0, y0, wnew, wbar, fld.N, walk, fld.disorder, fld.coupling, fld.tail_tol, meta)


def evolve(fld, n_steps):
    """Yield the fields after each of ``n_steps`` steps."""
    for _ in range(n_steps):
        fld = step(fld)
        yield fld


def simulate_path(phi, N, t, coupling=None, disorder=None, walk="default", tail_tol=0.0):
    """Yield fields n = 0, 1, ..., floor(N t)."""
    fld = init_field(phi, N, coupling, disorder, walk, tail_tol)
    yield fld
    yield from evolve(fld, int(math.floor(N * t + 1e-9)))


def pair(fld, psi, bar=False):
    """Z_{N; n/N}(phi, psi) = (1/N) sum_y W_n(y) psi(y / sqrt N).

    With ``bar=True`` the pre-weight field Wbar is paired instead.
    """
    psi = TestFunction.parse(psi)
    W = fld.Wbar if bar else fld.W
    if W is None:
        raise ValueError("no pre-weight field at n = 0")
    if psi.is_constant:
        return psi.height * math.fsum(W.ravel()) / fld.N
    vals = psi.lattice_values(fld.N, fld.x0, fld.y0, *W.shape)
    return _kernels.weighted_sum(W, vals) / fld.N


@dataclass(frozen=True)
class DensitySnapshot:
    """Atomic measure (1/N) sum_y W(y) delta_{y / sqrt N}."""

    points: np.ndarray  # (m, 2) macroscopic positions
    masses: np.ndarray  # (m,)

    @property
    def total_mass(self):
        return math.fsum(self.masses)

    def __len__(self):
        return self.masses.shape[0]


def density_snapshot(fld):
    xs, ys = fld.lattice_axes()
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    s = 1.0 / math.sqrt(fld.N)
    pts = np.stack([X.ravel() * s, Y.ravel() * s], axis=1)
    return DensitySnapshot(pts, fld.W.ravel() / fld.N)
