"""Compiled inner loops shared by the kernel tables and the field simulator."""
import numba as nb
import numpy as np


@nb.njit(cache=True)
def spread(src, sx, sy, sp, r, out):
    """out[i + r + sx, j + r + sy] += sp * src[i, j] for each step (sx, sy).

    ``out`` must have shape (h + 2r, w + 2r); it is overwritten.
    """
    h, w = src.shape
    H, Wd = out.shape
    for i in range(H):
        for j in range(Wd):
            out[i, j] = 0.0
    for s in range(sx.shape[0]):
        ox = r + sx[s]
        oy = r + sy[s]
        p = sp[s]
        for i in range(h):
            row = out[ox + i]
            srow = src[i]
            for j in range(w):
                row[oy + j] += p * srow[j]


@nb.njit(cache=True)
def spread_compensated(src, sx, sy, sp, r, out):
    """Same as :func:`spread` but each output cell is a Neumaier sum."""
    h, w = src.shape
    H, Wd = out.shape
    comp = np.zeros((H, Wd))
    for i in range(H):
        for j in range(Wd):
            out[i, j] = 0.0
    for s in range(sx.shape[0]):
        ox = r + sx[s]
        oy = r + sy[s]
        p = sp[s]
        for i in range(h):
            for j in range(w):
                v = p * src[i, j]
                a = out[ox + i, oy + j]
                t = a + v
                if abs(a) >= abs(v):
                    comp[ox + i, oy + j] += (a - t) + v
                else:
                    comp[ox + i, oy + j] += (v - t) + a
                out[ox + i, oy + j] = t
    for i in range(H):
        for j in range(Wd):
            out[i, j] += comp[i, j]


@nb.njit(cache=True)
def trim_bounds(a, thr):
    """Smallest index box [i0, i1) x [j0, j1) holding every |a| > thr."""
    h, w = a.shape
    i0, i1, j0, j1 = h, -1, w, -1
    for i in range(h):
        for j in range(w):
            if abs(a[i, j]) > thr:
                if i < i0:
                    i0 = i
                if i > i1:
                    i1 = i
                if j < j0:
                    j0 = j
                if j > j1:
                    j1 = j
    if i1 < 0:
        return 0, 0, 0, 0
    return i0, i1 + 1, j0, j1 + 1


@nb.njit(cache=True)
def step_sums(wbar, wnew, psi):
    """(sum wbar*psi, sum wnew*psi, sum (wbar*psi)^2) in one sweep."""
    h, w = wbar.shape
    a = 0.0
    b = 0.0
    c = 0.0
    for i in range(h):
        for j in range(w):
            u = wbar[i, j] * psi[i, j]
            a += u
            b += wnew[i, j] * psi[i, j]
            c += u * u
    return a, b, c


@nb.njit(cache=True)
def step_sums_flat(wbar, wnew):
    """:func:`step_sums` with psi == 1."""
    h, w = wbar.shape
    a = 0.0
    b = 0.0
    c = 0.0
    for i in range(h):
        for j in range(w):
            u = wbar[i, j]
            a += u
            b += wnew[i, j]
            c += u * u
    return a, b, c


@nb.njit(cache=True)
def weighted_sum(a, b):
    h, w = a.shape
    s = 0.0
    for i in range(h):
        for j in range(w):
            s += a[i, j] * b[i, j]
    return s
