"""Counter-based normal variates (Philox4x64-10 plus Box-Muller).

Every draw is a pure function of ``(seed, stream, step, path)``, so paths can
be simulated in any order or in parallel and still agree bit for bit.
"""
from __future__ import annotations

import numpy as np

M0 = np.uint64(0xD2E7470EE14C6C93)
M1 = np.uint64(0xCA5A826395121157)
W0 = np.uint64(0x9E3779B97F4A7C15)
W1 = np.uint64(0xBB67AE8584CAA73B)
ROUNDS = 10

# stream tags separate independent uses of the same user seed
STREAM_REFLECTED = 1
STREAM_GAME = 2
STREAM_STOPPED = 3

_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)


def _mulhilo(a: np.uint64, b: np.ndarray):
    """Full 64x64 -> 128 bit product split into (hi, lo)."""
    a_lo, a_hi = a & _LO32, a >> _S32
    b_lo, b_hi = b & _LO32, b >> _S32
    ll = a_lo * b_lo
    lh = a_lo * b_hi
    hl = a_hi * b_lo
    hh = a_hi * b_hi
    mid = (ll >> _S32) + (lh & _LO32) + (hl & _LO32)
    hi = hh + (lh >> _S32) + (hl >> _S32) + (mid >> _S32)
    lo = a * b  # wraps modulo 2**64
    return hi, lo


def philox4x64(counter, key):
    """Philox4x64-10 block function.

    ``counter`` is a sequence of four uint64 arrays (broadcastable), ``key``
    a pair of uint64 scalars.  Returns four uint64 arrays.
    """
    with np.errstate(over="ignore"):
        x0, x1, x2, x3 = (np.asarray(c, dtype=np.uint64) for c in np.broadcast_arrays(*counter))
        k0, k1 = np.uint64(key[0]), np.uint64(key[1])
        for r in range(ROUNDS):
            if r:
                k0 = k0 + W0
                k1 = k1 + W1
            hi0, lo0 = _mulhilo(M0, x0)
            hi1, lo1 = _mulhilo(M1, x2)
            x0, x1, x2, x3 = hi1 ^ x1 ^ k0, lo1, hi0 ^ x3 ^ k1, lo0
    return x0, x1, x2, x3


def uniforms_from_words(w: np.ndarray) -> np.ndarray:
    """Top 53 bits to a double in [0, 1)."""
    return (w >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def normal_pair(seed: int, stream: int, step: int, paths) -> tuple:
    """Two independent standard normals per path for one time step."""
    paths = np.asarray(paths, dtype=np.uint64)
    w0, w1, _, _ = philox4x64((np.uint64(step), paths, np.uint64(0), np.uint64(0)), (seed, stream))
    u1 = uniforms_from_words(w0)
    u2 = uniforms_from_words(w1)
    r = np.sqrt(-2.0 * np.log1p(-u1))
    th = 2.0 * np.pi * u2
    return r * np.cos(th), r * np.sin(th)
