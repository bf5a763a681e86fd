"""Counter-based coin streams.

Every coin in a simulation is addressed by ``(seed, stream, site, visit)``.
Its uniform comes from one Philox4x32-10 block keyed by the 64-bit seed,
with counter ``(site, (visit - 1) // 2, stream_lo, stream_hi)``; each block
yields two 53-bit uniforms that serve two consecutive visits.  Nothing is
stored, so a coin stack can be realised lazily in any order and a trajectory
does not depend on how replications are scheduled across threads.
"""

from concurrent.futures import ThreadPoolExecutor

import numba as nb
import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SH32 = np.uint64(32)
_SH21 = np.uint64(21)
_SH11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

MASK64 = (1 << 64) - 1


@nb.njit(inline="always")
def _philox(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SH32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SH32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return c0, c1, c2, c3


@nb.njit(cache=True, nogil=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10; 32-bit words carried in uint64."""
    return _philox(c0, c1, c2, c3, k0, k1)


@nb.njit(inline="always")
def _unit(hi, lo):
    return ((hi << _SH21) | (lo >> _SH11)) * _INV53


@nb.njit(inline="always")
def coin_pair(k0, k1, s0, s1, site, block):
    """Both uniforms of one block: visits ``2*block + 1`` and ``2*block + 2``."""
    w0, w1, w2, w3 = _philox(
        np.uint64(np.uint32(site)), np.uint64(np.uint32(block)), s0, s1, k0, k1
    )
    return _unit(w0, w1), _unit(w2, w3)


@nb.njit(inline="always")
def coin_uniform(k0, k1, s0, s1, site, visit):
    """Uniform in [0, 1) for the ``visit``-th coin (1-based) at ``site``."""
    a, b = coin_pair(k0, k1, s0, s1, site, (visit - 1) >> 1)
    return a if (visit - 1) & 1 == 0 else b


@nb.njit(cache=True, nogil=True)
def _fill(k0, k1, s0, s1, site, first_visit, out):
    for i in range(out.size):
        out[i] = coin_uniform(k0, k1, s0, s1, site, first_visit + i)


def split_key(seed, stream):
    """``(k0, k1, s0, s1)``: 32-bit halves of the seed and the stream."""
    if seed < 0 or stream < 0:
        raise ValueError("seed and stream must be non-negative")
    seed &= MASK64
    stream &= MASK64
    return (
        np.uint64(seed & 0xFFFFFFFF),
        np.uint64(seed >> 32),
        np.uint64(stream & 0xFFFFFFFF),
        np.uint64(stream >> 32),
    )


def uniforms(seed, stream, site, first_visit, count):
    """Python-level access to a run of coin uniforms at one site."""
    out = np.empty(count)
    _fill(*split_key(seed, stream), np.int64(site), np.int64(first_visit), out)
    return out


def chunked(total, chunk):
    return [(lo, min(lo + chunk, total)) for lo in range(0, total, chunk)]


def run_chunks(fn, total, chunk, threads):
    """Apply ``fn(lo, hi)`` to fixed chunks of ``range(total)``.

    Chunk boundaries do not depend on ``threads`` and every chunk writes only
    its own slice of preallocated output, so results are identical for any
    worker count.
    """
    spans = chunked(total, chunk)
    if threads <= 1 or len(spans) <= 1:
        for lo, hi in spans:
            fn(lo, hi)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for fut in [pool.submit(fn, lo, hi) for lo, hi in spans]:
            fut.result()
