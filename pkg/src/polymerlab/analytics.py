"""Continuum special functions and quadrature oracles.

Dickman-type densities f_s, the renewal limit G_theta and its envelope,
first-moment and variance limits for Gaussian or bump initial data, the
iterated kernels phi_t^(k) and the log-renormalised mollifier limit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicSpline

from .errors import ToleranceError
from .polymer import TestFunction

EULER_GAMMA = float(np.euler_gamma)
VOLTERRA_STEP = 1.0 / 512
TAIL_REL = 1e-14  # integrand bound at S_max relative to its peak
DOUBLING_TOL = 1e-10
PHI_K_MAX = 8


# ------------------------------------------------------------ f_s
def _c(s):
    return np.exp(-EULER_GAMMA * s - special.gammaln(s + 1.0))


def _closed_I(s, x):
    """int_0^x f_s(a) (1 + a)^(-s) da for 0 <= x <= 1, in closed form."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return _c(s) * np.where(x > 0, x**s, 0.0) * special.hyp2f1(s, s, s + 1.0, -x)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GRADE_LEVELS = 40


def _g_head(s, a):
    """f_s(a) (1 + a)^(-s) for 1 <= a <= 2, closed form; s has shape (k, 1)."""
    f = s * a ** (s - 1) * (_c(s) - _closed_I(s, a - 1.0))
    return f * (1.0 + a) ** -s


def _gl(s, lo, hi):
    """Gauss-Legendre integral of _g_head over panels [lo_i, hi_i]."""
    mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
    a = mid[:, None] + half[:, None] * _GL_X[None, :]
    vals = _g_head(s[:, None, None], a[None])
    return np.einsum("kpq,q->kp", vals, _GL_W) * half[None, :]


def _head_cum(s, h, m1):
    """int_1^(1+m h) f_s(a) (1+a)^(-s) da for m = 0..m1, shape (k, m1 + 1).

    f_s has an (a - 1)^s cusp at a = 1, so the first panel is graded
    geometrically; the others are smooth enough for plain 16-point panels.
    """
    edges = 1.0 + h * np.arange(m1 + 1)
    P = _gl(s, edges[:-1], edges[1:])
    g_hi = 1.0 + h * 0.5 ** np.arange(_GRADE_LEVELS + 1)
    P[:, 0] = _gl(s, g_hi[1:], g_hi[:-1]).sum(axis=1)
    # bounded integrand on the last sliver
    P[:, 0] += (g_hi[-1] - 1.0) * _g_head(s[:, None], np.array([1.0]))[:, 0]
    return np.concatenate([np.zeros((s.shape[0], 1)), np.cumsum(P, axis=1)], axis=1)


def _f_grid(s, x_max, h=VOLTERRA_STEP):
    """f_s(1 + j h) for j = 0..J with J h >= x_max; s is a 1-d array.

    Returns (F, h, C) with F of shape (len(s), J + 1) and C[:, m] the
    integral of f_s(a) (1+a)^(-s) over [1, 1 + m h].  The integral term is
    exact on [0, 2] and marched with the trapezoid rule beyond.
    """
    m1 = int(round(1.0 / h))
    if abs(m1 * h - 1.0) > 1e-14:
        raise ValueError("1/h must be an integer")
    s = np.asarray(s, dtype=float)
    J = max(int(math.ceil(x_max / h - 1e-12)), 0)
    tj = 1.0 + h * np.arange(J + 1)
    c = _c(s)
    F = np.empty((s.shape[0], J + 1))
    head = min(J, m1)
    xs = h * np.arange(head + 1)
    I_head = _closed_I(s[:, None], xs[None, :])
    F[:, : head + 1] = s[:, None] * tj[None, : head + 1] ** (s[:, None] - 1) * (c[:, None] - I_head)
    C = np.zeros((s.shape[0], max(J - m1, 0) + 1))
    if J > m1:
        I1 = _closed_I(s, 1.0)
        n_exact = min(J - m1, m1)
        C[:, : n_exact + 1] = _head_cum(s, h, m1)[:, : n_exact + 1]
        for j in range(m1 + 1, J + 1):
            m = j - m1
            if m > m1:
                g0 = F[:, m - 1] * (2.0 + (m - 1) * h) ** -s
                g1 = F[:, m] * (2.0 + m * h) ** -s
                C[:, m] = C[:, m - 1] + 0.5 * h * (g0 + g1)
            F[:, j] = s * tj[j] ** (s - 1) * (c - I1 - C[:, m])
    return F, h, C


def f_s(s, t, h=VOLTERRA_STEP):
    """Dickman-type density f_s(t).

    Closed form on (0, 1]; for t > 1 the Volterra continuation
    f_s(t) = s t^(s-1) (e^(-gamma s)/Gamma(s+1) - int_0^(t-1) f_s(a) (1+a)^(-s) da)
    is marched on a uniform grid of step ``h``.  The kernel exponent is s
    (the Dickman-subordinator density; it integrates to 1 in t).
    """
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(s_arr <= 0):
        raise ValueError("s must be positive")
    if np.any(t_arr <= 0):
        raise ValueError("t must be positive")
    out = np.empty(np.broadcast_shapes(s_arr.shape, t_arr.shape))
    S, T = np.broadcast_arrays(s_arr, t_arr)
    low = T <= 1
    out[low] = S[low] * T[low] ** (S[low] - 1) * _c(S[low])
    if np.any(~low):
        for sv in np.unique(S[~low]):
            sel = (~low) & (S == sv)
            out[sel] = _f_beyond_one(np.array([sv]), T[sel], h)[0]
    if np.ndim(s) == 0 and np.ndim(t) == 0:
        return float(out.reshape(-1)[0])
    return out


def _f_beyond_one(s, t, h):
    """f_s(t) for t > 1 at arbitrary t, rows for each s."""
    t = np.asarray(t, dtype=float)
    x = t - 1.0
    F, h, C = _f_grid(s, float(x.max()), h)
    c = _c(s)
    out = np.empty((s.shape[0], t.shape[0]))
    near = x <= 1
    if np.any(near):
        I = _closed_I(s[:, None], x[near][None, :])
        out[:, near] = s[:, None] * t[near][None, :] ** (s[:, None] - 1) * (c[:, None] - I)
    if np.any(~near):
        I1 = _closed_I(s, 1.0)
        m1 = int(round(1.0 / h))
        for i in np.nonzero(~near)[0]:
            a = x[i]
            m = min(int(math.floor((a - 1.0) / h + 1e-12)), C.shape[1] - 1)
            a_m = 1.0 + m * h
            if a - a_m <= 1e-12:
                part = 0.0
            elif m == 0:
                part = _head_cum_partial(s, a)
            elif a <= 2.0:
                part = _gl(s, np.array([a_m]), np.array([a]))[:, 0]
            else:
                frac = (a - a_m) / h
                Fa = F[:, m] * (1 - frac) + F[:, m + 1] * frac
                part = 0.5 * (a - a_m) * (F[:, m] * (1.0 + a_m) ** -s + Fa * (1.0 + a) ** -s)
            out[:, i] = s * t[i] ** (s - 1) * (c - I1 - C[:, m] - part)
    return out


def _head_cum_partial(s, a):
    """int_1^a of the head integrand for 1 < a <= 1 + h, graded toward 1."""
    w = a - 1.0
    hi = 1.0 + w * 0.5 ** np.arange(_GRADE_LEVELS + 1)
    val = _gl(s, hi[1:], hi[:-1]).sum(axis=1)
    return val + (hi[-1] - 1.0) * _g_head(s[:, None], np.array([1.0]))[:, 0]


# ------------------------------------------------------------ G_theta
def _log_integrand_bound(theta, t, s):
    # log of e^((theta - gamma) s) s t^(s-1) / Gamma(s+1)
    return (theta - EULER_GAMMA) * s + math.log(max(s, 1e-300)) + (s - 1) * math.log(t) - special.gammaln(s + 1)


def _s_max(theta, t):
    """Smallest power-of-two S >= 8 beyond which the integrand is below TAIL_REL of its peak."""
    grid = np.linspace(1e-6, 64, 4001)
    logs = np.array([_log_integrand_bound(theta, t, s) for s in grid[::40]])
    peak = logs.max()
    S = 8.0
    while _log_integrand_bound(theta, max(t, 1.0), S) - peak > math.log(TAIL_REL) or S < 8:
        S *= 2
        if S > 1e5:
            raise ToleranceError("no finite s-truncation found")
    return S


def _G_small(theta, t, S):
    L = -math.log(t)
    pts = sorted({p for p in (0.25 / max(L, 1e-3), 1.0 / max(L, 1e-3), 4.0 / max(L, 1e-3), 1.0, 4.0, 16.0) if p < S})

    def f(s):
        return math.exp((theta - EULER_GAMMA) * s - s * L + L - special.gammaln(s + 1)) * s

    val, err = integrate.quad(f, 0.0, S, points=pts, limit=400, epsabs=0.0, epsrel=1e-13)
    return val, err


def _gl_panels(a, b, width, order=16):
    x, w = np.polynomial.legendre.leggauss(order)
    n = max(int(math.ceil((b - a) / width)), 1)
    edges = np.linspace(a, b, n + 1)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = 0.5 * (hi - lo) * x[None, :] + 0.5 * (hi + lo)
    weights = 0.5 * (hi - lo) * w[None, :]
    return nodes.ravel(), weights.ravel()


def _G_large(theta, t, S, width=0.5):
    s, w = _gl_panels(0.0, S, width)
    vals = _f_beyond_one(s, np.array([t]), VOLTERRA_STEP)[:, 0]
    return float(np.sum(w * np.exp(theta * s) * vals))


def G_theta(theta, t, s_max=None, return_info=False):
    """G_theta(t) = int_0^inf e^(theta s) f_s(t) ds.

    For t <= 1 an adaptive quadrature of the closed-form integrand; beyond
    1 a composite Gauss-Legendre rule over s of the marched f_s.  The
    s-truncation is verified by doubling; a change above 1e-10 relative
    raises ToleranceError.  Arrays of t are evaluated pointwise.
    """
    if np.ndim(t) > 0:
        res = [G_theta(theta, tt, s_max, return_info) for tt in np.asarray(t, dtype=float).ravel()]
        if return_info:
            return res
        return np.array(res).reshape(np.shape(t))
    t = float(t)
    if not t > 0:
        raise ValueError("t must be positive")
    S = s_max if s_max is not None else _s_max(theta, t)
    if t <= 1:
        v1, e1 = _G_small(theta, t, S)
        v2, _ = _G_small(theta, t, 2 * S)
    else:
        v1 = _G_large(theta, t, S)
        v2 = _G_large(theta, t, 2 * S)
        e1 = abs(v1 - _G_large(theta, t, S, width=0.25))
    change = abs(v2 - v1) / abs(v2)
    if change > DOUBLING_TOL:
        raise ToleranceError(f"G_theta({theta}, {t}): doubling S_max changes value by {change:.2e}")
    if return_info:
        return v1, {"S_max": S, "doubling_change": change, "quad_error": e1}
    return v1


def G_small_t_series(theta, t, order=2):
    """Leading terms of t (log 1/t)^2 G_theta(t) as t -> 0.

    1 + 2 theta / L + (3 theta^2 - pi^2 / 2) / L^2 with L = log(1/t),
    truncated after ``order`` corrections.
    """
    L = math.log(1.0 / t)
    terms = [1.0, 2 * theta / L, (3 * theta**2 - math.pi**2 / 2) / L**2]
    return sum(terms[: order + 1])


def G_theta_spatial(theta, t, x):
    """G_theta(t, x) = G_theta(t) p_{t/2}(x)."""
    if not t > 0:
        raise ValueError("t must be positive")
    x = np.asarray(x, dtype=float)
    r2 = np.sum(x * x, axis=-1)
    return G_theta(theta, t) * np.exp(-r2 / t) / (math.pi * t)


@dataclass
class GHat:
    """Decreasing envelope c / (t log(e^2 T / t)^2) of G_theta on (0, T].

    ``c`` is the supremum of G_theta(t) t log(e^2 T / t)^2, located on a
    log grid, refined by bounded search and inflated by ``margin``.
    """

    theta: float
    T: float
    c: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.c / (t * np.log(math.e**2 * self.T / t) ** 2)

    @classmethod
    def fit(cls, theta, T=1.0, t_min=1e-12, n_grid=121, margin=1e-6):
        from scipy.optimize import minimize_scalar

        def ratio(lt):
            t = math.exp(lt)
            return G_theta(theta, t) * t * math.log(math.e**2 * T / t) ** 2

        lts = np.linspace(math.log(t_min), math.log(T), n_grid)
        r = np.array([ratio(lt) for lt in lts])
        i = int(np.argmax(r))
        best = r[i]
        lo, hi = lts[max(i - 1, 0)], lts[min(i + 1, n_grid - 1)]
        if hi > lo:
            opt = minimize_scalar(lambda lt: -ratio(lt), bounds=(lo, hi), method="bounded", options={"xatol": 1e-8})
            best = max(best, -opt.fun)
        return cls(float(theta), float(T), best * (1 + margin))


def G_hat(theta, T, t):
    return GHat.fit(theta, T)(t)


# ------------------------------------------------------------ first moment
def _gauss_weight(f):
    # gaussian f = K p_v(. - c) with K = height * 2 pi v
    return f.height * 2 * math.pi * f.scale


def first_moment_oracle(phi, psi, t, method="auto", h=None):
    """int int phi(x) p_t(y - x) psi(y) dx dy.

    ``method="closed"`` needs a constant psi or Gaussian phi and psi;
    ``"grid"`` uses FFT heat smoothing of phi and a Riemann sum;
    ``"auto"`` picks the closed form when available.
    """
    phi, psi = TestFunction.parse(phi), TestFunction.parse(psi)
    if not t >= 0:
        raise ValueError("t must be nonnegative")
    closed = psi.is_constant or (phi.kind == "gaussian" and psi.kind == "gaussian")
    if method == "auto":
        method = "closed" if closed else "grid"
    if method == "closed":
        if psi.is_constant:
            return psi.height * phi.integral()
        if not closed:
            raise ValueError("no closed form for this pair")
        v = phi.scale + psi.scale + t
        d = np.subtract(psi.center, phi.center)
        return _gauss_weight(phi) * _gauss_weight(psi) * math.exp(-d @ d / (2 * v)) / (2 * math.pi * v)
    win = phi.window()
    pad = 10 * math.sqrt(t) + 1e-12
    span = max(win[1] - win[0], win[3] - win[2])
    if h is None:
        h = span / 256
    n = int(math.ceil((span + 2 * pad) / h)) + 1
    n += n % 2
    x = win[0] - pad + h * np.arange(n)
    y = win[2] - pad + h * np.arange(n)
    X, Y = np.meshgrid(x, y, indexing="ij")
    U = np.stack([X, Y], axis=-1)
    ph = phi(U)
    if t > 0:
        k = 2 * math.pi * np.fft.fftfreq(n, d=h)
        K1, K2 = np.meshgrid(k, k, indexing="ij")
        ph = np.real(np.fft.ifft2(np.fft.fft2(ph) * np.exp(-0.5 * t * (K1**2 + K2**2))))
    return float(np.sum(ph * psi(U)) * h * h)


# ------------------------------------------------------------ variance
def _cum_G_small(theta, tau, S):
    """int_0^tau G_theta(w) dw for tau <= 1."""
    if tau <= 0:
        return 0.0
    lt = math.log(tau)
    f = lambda s: math.exp((theta - EULER_GAMMA) * s + s * lt - special.gammaln(s + 1))
    return integrate.quad(f, 0.0, S, limit=400, epsabs=0.0, epsrel=1e-12)[0]


def cumulative_G(theta, tau):
    """int_0^tau G_theta(w) dw."""
    S = _s_max(theta, min(max(tau, 1e-300), 1.0))
    if tau <= 1:
        return _cum_G_small(theta, tau, S)
    extra = integrate.quad(lambda w: G_theta(theta, w), 1.0, tau, limit=200, epsrel=1e-9)[0]
    return _cum_G_small(theta, 1.0, S) + extra


def _variance_gaussian(theta, a, t, S):
    # int_0^inf ds e^((theta-gamma)s)/Gamma(s+1) int_0^t (t-u)^s/(a+u) du, t <= 1
    c = a + t
    z = t / c

    def f(s):
        inner = t ** (s + 1) / ((s + 1) * c) * special.hyp2f1(1.0, s + 1.0, s + 2.0, z)
        return math.exp((theta - EULER_GAMMA) * s - special.gammaln(s + 1)) * inner

    return integrate.quad(f, 0.0, S, limit=400, epsabs=0.0, epsrel=1e-12)


def _phi_l2_smoothed(phi, us, n=256):
    """A(u) = int Phi_u(x)^2 dx for u in ``us`` by FFT on a padded grid."""
    win = phi.window()
    pad = 8 * math.sqrt(max(us)) + 1e-12
    span = max(win[1] - win[0], win[3] - win[2]) + 2 * pad
    h = span / n
    x = win[0] - pad + h * np.arange(n)
    y = win[2] - pad + h * np.arange(n)
    X, Y = np.meshgrid(x, y, indexing="ij")
    F = np.abs(np.fft.fft2(phi(np.stack([X, Y], axis=-1))) * h * h) ** 2
    k = 2 * math.pi * np.fft.fftfreq(n, d=h)
    K1, K2 = np.meshgrid(k, k, indexing="ij")
    k2 = K1**2 + K2**2
    # Parseval on the grid: int |Phi_u|^2 = (1/(n h)^2) sum |hat phi|^2 e^{-u |k|^2}
    return np.array([np.sum(F * np.exp(-u * k2)) for u in us]) / (n * h) ** 2


def _variance_spatial(phi, t, theta, n=200):
    """4 pi int_0^t A(u) C(t - u) du with C(tau) = int_0^tau G_theta."""
    us = np.concatenate([[0.0], np.geomspace(1e-6 * t, t, n)])
    spl_a = CubicSpline(us, _phi_l2_smoothed(phi, us))
    # C has a 1/log(1/tau) onset, so tabulate it on a grid graded toward 0
    taus = us
    spl_c = CubicSpline(taus, [cumulative_G(theta, tau) for tau in taus])
    brk = list(t - np.geomspace(1e-6 * t, 0.5 * t, 12))
    f = lambda u: spl_a(u) * spl_c(max(t - u, 0.0))
    return 4 * math.pi * integrate.quad(f, 0.0, t, points=brk, limit=400, epsrel=1e-8)[0]


def variance_oracle(phi, t, theta, psi="constant", return_info=False):
    """Limit variance of Z_t(phi, 1).

    Gaussian phi = K p_a gives K^2 int_0^t du/(a+u) int_0^(t-u) G_theta;
    for t <= 1 the order of integration is swapped so the inner u-integral
    has a closed hypergeometric form.  Other phi use the spatial reduction
    4 pi int_0^t A(u) int_0^(t-u) G_theta, with A(u) = ||Phi_u||^2.
    """
    from .errors import UnsupportedTestFunctionError

    phi = TestFunction.parse(phi)
    psi = TestFunction.parse(psi)
    if not psi.is_constant:
        raise UnsupportedTestFunctionError("variance oracle needs a constant psi")
    if t <= 0:
        return (0.0, {}) if return_info else 0.0
    c2 = psi.height**2
    S = _s_max(theta, min(t, 1.0))
    if phi.kind == "gaussian" and t <= 1:
        K = _gauss_weight(phi)
        v1, e1 = _variance_gaussian(theta, phi.scale, t, S)
        v2, _ = _variance_gaussian(theta, phi.scale, t, 2 * S)
        if abs(v2 - v1) > DOUBLING_TOL * abs(v2):
            raise ToleranceError("variance oracle: s-truncation not converged")
        val = c2 * K * K * v1
        info = {"method": "gaussian-closed-inner", "S_max": S, "quad_error": c2 * K * K * e1}
    elif phi.kind == "gaussian":
        K, a = _gauss_weight(phi), phi.scale
        val = c2 * K * K * integrate.quad(lambda u: cumulative_G(theta, t - u) / (a + u), 0.0, t, limit=200, epsrel=1e-8)[0]
        info = {"method": "gaussian-nested"}
    else:
        val = c2 * _variance_spatial(phi, t, theta)
        info = {"method": "spatial-reduction"}
    return (val, info) if return_info else val


# ------------------------------------------------------------ iterated kernels
PHI_Y_SPAN = 150.0
PHI_PANEL = 2.0
PHI_ORDER = 16


@dataclass
class _PhiPlan:
    t: float
    s: np.ndarray
    w: np.ndarray  # quadrature weights for ds, i.e. includes the Jacobian s
    vals: list = field(default_factory=list)  # vals[k] = phi_t^(k) at nodes s


_plans = {}


def _phi_plan(t):
    key = float(t)
    plan = _plans.get(key)
    if plan is None:
        y, w = _gl_panels(math.log(t) - PHI_Y_SPAN, math.log(t), PHI_PANEL, PHI_ORDER)
        s = np.exp(y)
        plan = _PhiPlan(key, s, w * s, [np.ones_like(s)])
        _plans[key] = plan
    return plan


def _phi_apply(plan, prev, u):
    # int_0^t (s (s + u))^(-1/2) prev(s) ds at the points u
    u = np.asarray(u, dtype=float)
    k = plan.w[None, :] / np.sqrt(plan.s[None, :] * (plan.s[None, :] + u.reshape(-1, 1)))
    return (k @ prev).reshape(u.shape)


def phi_iterated(k, t, u):
    """phi_t^(k)(u) = int_0^t (s (s + u))^(-1/2) phi_t^(k-1)(s) ds, phi^(0) = 1.

    Nystrom scheme in y = log s on [log t - 150, log t] with composite
    16-point Gauss-Legendre panels of width 2.
    """
    if not isinstance(k, (int, np.integer)) or k < 0:
        raise ValueError("k must be a nonnegative integer")
    if k > PHI_K_MAX:
        raise ToleranceError(f"k={k} exceeds the supported depth {PHI_K_MAX}")
    if not t > 0:
        raise ValueError("t must be positive")
    u_arr = np.asarray(u, dtype=float)
    if np.any(u_arr <= 0):
        raise ValueError("u must be positive")
    if k == 0:
        return np.ones_like(u_arr) if u_arr.ndim else 1.0
    plan = _phi_plan(t)
    while len(plan.vals) < k:
        plan.vals.append(_phi_apply(plan, plan.vals[-1], plan.s))
    out = _phi_apply(plan, plan.vals[k - 1], u_arr)
    return float(out) if u_arr.ndim == 0 else out


def phi1_closed_form(u):
    """phi_1^(1)(u) = 2 log((1 + sqrt(1 + u)) / sqrt(u))."""
    u = np.asarray(u, dtype=float)
    return 2 * np.log((1 + np.sqrt(1 + u)) / np.sqrt(u))


def phi_bound(k, v):
    """32^k e / sqrt(v), the envelope for phi_1^(k) on (0, 1)."""
    return 32.0**k * math.e / np.sqrt(v)


# ------------------------------------------------------------ mollifier limit
def _log_kernel(r2, t, eps):
    """int_0^t p_{(s+eps)/2}(z) / (s + eps) ds at |z|^2 = r2."""
    r2 = np.asarray(r2, dtype=float)
    small = r2 < 1e-8 * eps
    safe = np.where(small, 1.0, r2)
    # (e^{-r2/(t+eps)} - e^{-r2/eps}) / (pi r2), written with expm1 for accuracy
    a = np.exp(-safe / (t + eps))
    b = -np.expm1(-safe / eps + safe / (t + eps))
    val = a * b / (math.pi * safe)
    return np.where(small, (1.0 / eps - 1.0 / (t + eps)) / math.pi, val)


def mollifier_log_limit(psi, x, t, eps_list, n_angle=64):
    """(eps, (-1/log eps) int dz int_0^t ds p_{(s+eps)/2}(z - x) psi(z) / (s + eps)) pairs.

    Constant psi is exact, Gaussian psi reduces to a one-dimensional
    quadrature, other psi use polar quadrature around x.
    """
    psi = TestFunction.parse(psi)
    x = np.asarray(x, dtype=float)
    out = []
    for eps in eps_list:
        eps = float(eps)
        if not 0 < eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        norm = -1.0 / math.log(eps)
        if psi.is_constant:
            v = psi.height * math.log1p(t / eps)
        elif psi.kind == "gaussian":
            K, var = _gauss_weight(psi), psi.scale
            d2 = float(np.sum((x - np.asarray(psi.center)) ** 2))

            def f(y):
                w = math.exp(y)
                vv = 0.5 * w + var
                return K * math.exp(-d2 / (2 * vv)) / (2 * math.pi * vv)

            v = integrate.quad(f, math.log(eps), math.log(t + eps), limit=200, epsabs=0.0, epsrel=1e-11)[0]
        else:
            ang = 2 * math.pi * np.arange(n_angle) / n_angle
            dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)

            def g(r):
                avg = np.mean(psi(x[None, :] + r * dirs))
                return 2 * math.pi * r * float(_log_kernel(r * r, t, eps)) * avg

            win = psi.window()
            rmax = max(abs(win[0] - x[0]), abs(win[1] - x[0])) + max(abs(win[2] - x[1]), abs(win[3] - x[1]))
            rmax = min(rmax, 12 * math.sqrt(t + eps) + rmax)
            brk = [p for p in (math.sqrt(eps), math.sqrt(t + eps)) if p < rmax]
            v = integrate.quad(g, 0.0, rmax, points=brk or None, limit=400, epsrel=1e-9)[0]
        out.append((eps, norm * v))
    return out


def heat_qv_free(a, t, eps):
    """Renormalised mollified QV at beta = 0, constant psi, phi = K p_a with K = 1.

    With no disorder the field is the heat flow of phi, so the smoothed
    density at time s is p_{a+s+eps} and the integral is closed form:
    log((a + t + eps) / (a + eps)) / log(1/eps).
    """
    return math.log((a + t + eps) / (a + eps)) / math.log(1.0 / eps)


# ------------------------------------------------------------ tabulation
@dataclass
class SpecialFnGrid:
    """Tabulated f_1, G_theta and its envelope on a t grid, with quadrature metadata."""

    theta: float
    T: float
    t: np.ndarray
    f1: np.ndarray
    G: np.ndarray
    G_hat: np.ndarray
    ratio: np.ndarray  # t log(1/t)^2 G_theta(t), nan for t >= 1
    c_hat: float
    meta: dict

    def rows(self):
        for i in range(self.t.shape[0]):
            yield {
                "t": float(self.t[i]),
                "f_1": float(self.f1[i]),
                "G_theta": float(self.G[i]),
                "G_hat": float(self.G_hat[i]),
                "asymptotic_ratio": float(self.ratio[i]),
            }


def tabulate(theta, t_grid, T=None):
    t = np.asarray(sorted(set(float(v) for v in t_grid)))
    if np.any(t <= 0):
        raise ValueError("t grid must be positive")
    T = float(t.max()) if T is None else float(T)
    G = np.array(G_theta(theta, t))
    hat = GHat.fit(theta, T)
    L = np.log(1.0 / np.where(t < 1, t, np.nan))
    return SpecialFnGrid(
        float(theta),
        T,
        t,
        np.asarray(f_s(1.0, t)),
        G,
        hat(t),
        t * L * L * G,
        hat.c,
        {
            "volterra_step": VOLTERRA_STEP,
            "tail_rel": TAIL_REL,
            "doubling_tol": DOUBLING_TOL,
            "S_max": [_s_max(theta, min(v, 1.0)) for v in t],
        },
    )
