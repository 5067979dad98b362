"""Counter-based 64-bit hashing for the disorder field.

Every sign is a pure function of (seed, replica, n, x1, x2).  Signs along
the second coordinate are packed 64 to a hash word: the word for
``(n, x1, x2 >> 6)`` is computed once and bit ``x2 & 63`` picks the sign.

Three implementations are kept in lock-step: plain Python integers (the
reference), numpy uint64 arrays, and numba kernels used by the simulator.
"""
import numba as nb
import numpy as np

MASK = 0xFFFFFFFFFFFFFFFF

_C_SEED = 0x243F6A8885A308D3
_C_REP = 0x13198A2E03707344
_C_TIME = 0x9E3779B97F4A7C15
_C_ROW = 0xD6E8FEB86659FD93
_C_BLOCK = 0xA0761D6478BD642F


def mix64(z):
    """splitmix64 finaliser on a Python int."""
    z &= MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def replica_key(seed, replica):
    k0 = mix64((seed & MASK) ^ _C_SEED)
    return mix64(k0 ^ mix64((replica + _C_REP) & MASK))


def time_key(key, n):
    return mix64(key ^ mix64((n * _C_TIME) & MASK))


def row_key(kn, x1):
    return mix64(kn ^ (((x1 & MASK) * _C_ROW) & MASK))


def sign_bit(seed, replica, n, x1, x2):
    """Reference sign bit (1 means omega = +1)."""
    kx = row_key(time_key(replica_key(seed, replica), n), x1)
    word = mix64(kx ^ ((((x2 >> 6) & MASK) * _C_BLOCK) & MASK))
    return (word >> (x2 & 63)) & 1


# ---------------------------------------------------------------- numpy
def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def sign_bits_np(seed, replica, n, x1, x2):
    """Vectorised sign bits for integer arrays ``x1``, ``x2`` (broadcast)."""
    kn = np.uint64(time_key(replica_key(seed, replica), n))
    x1 = np.asarray(x1, dtype=np.int64)
    x2 = np.asarray(x2, dtype=np.int64)
    with np.errstate(over="ignore"):
        kx = _mix64_np(kn ^ (x1.astype(np.uint64) * np.uint64(_C_ROW)))
        word = _mix64_np(kx ^ ((x2 >> 6).astype(np.uint64) * np.uint64(_C_BLOCK)))
    return ((word >> (x2 & 63).astype(np.uint64)) & np.uint64(1)).astype(np.int8)


# ---------------------------------------------------------------- numba
@nb.njit(inline="always")
def _mix64_nb(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


@nb.njit(cache=True)
def apply_signs(wbar, x0, y0, kn, w_plus, w_minus, out):
    """out = e * wbar on the box whose [0, 0] entry sits at lattice (x0, y0).

    Returns the largest absolute entry written.
    """
    h, w = wbar.shape
    cmax = 0.0
    for i in range(h):
        kx = _mix64_nb(kn ^ (np.uint64(x0 + i) * np.uint64(_C_ROW)))
        j = 0
        while j < w:
            y = y0 + j
            blk = y >> 6
            word = _mix64_nb(kx ^ (np.uint64(blk) * np.uint64(_C_BLOCK)))
            jend = min(w, (blk + 1) * 64 - y0)
            while j < jend:
                bit = (word >> np.uint64((y0 + j) & 63)) & np.uint64(1)
                v = wbar[i, j] * (w_plus if bit else w_minus)
                out[i, j] = v
                a = abs(v)
                if a > cmax:
                    cmax = a
                j += 1
    return cmax
