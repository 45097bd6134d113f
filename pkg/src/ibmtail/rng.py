"""Counter-based random streams.

Every normal variate is addressed by ``(seed, stream_id, path, draw)``: the
pair ``(seed, stream_id)`` is the Philox-4x64-10 key, ``path`` and the draw
block index form the counter. Paths are therefore independent of how work is
partitioned across blocks or threads, and any single path can be regenerated
on its own.

Uniforms use the top 53 bits of each 64-bit word, shifted to the open interval
(0, 1), and are mapped to normals with Wichura's AS241 (PPND16) inverse CDF.
Both steps are plain double-precision arithmetic, so streams are reproducible
across platforms.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

_MASK64 = (1 << 64) - 1

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_TWO_M53 = 2.0**-53


@nb.njit(inline="always")
def _mulhilo(a, b):
    lo = a * b
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    t = a_lo * b_lo
    mid1 = a_hi * b_lo + (t >> _S32)
    mid2 = a_lo * b_hi + (mid1 & _LO32)
    hi = a_hi * b_hi + (mid1 >> _S32) + (mid2 >> _S32)
    return hi, lo


@nb.njit(nogil=True)
def philox4x64(c0, c1, c2, c3, k0, k1, out):
    """Ten-round Philox-4x64 block function; writes four words into ``out``."""
    for i in range(10):
        if i > 0:
            k0 = k0 + _W0
            k1 = k1 + _W1
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    out[0] = c0
    out[1] = c1
    out[2] = c2
    out[3] = c3


@nb.njit(nogil=True)
def ndtri(p):
    """Standard normal quantile, AS241 (PPND16), ~1e-16 relative accuracy."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((r * 2509.0809287301226727 + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((r * 5226.495278852545925 + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    if q < 0.0:
        r = p
    else:
        r = 1.0 - p
    r = np.sqrt(-np.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((r * 7.7454501427834140764e-4 + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((r * 1.05075007164441684324e-9 + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((r * 2.01033439929228813265e-7 + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((r * 2.04426310338993978564e-15 + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    if q < 0.0:
        return -val
    return val


@nb.njit(inline="always")
def word_to_uniform(x):
    return ((x >> _S11) + 0.5) * _TWO_M53


@nb.njit(nogil=True)
def fill_normals(k0, k1, path, block, raw, out):
    """Four normals from counter ``(block, path, 0, 0)``."""
    philox4x64(np.uint64(block), np.uint64(path), np.uint64(0), np.uint64(0),
               k0, k1, raw)
    for i in range(4):
        out[i] = ndtri(word_to_uniform(raw[i]))


@nb.njit(nogil=True)
def _normals_block(k0, k1, path_offset, n_paths, draw_offset, n_draws, out):
    raw = np.empty(4, np.uint64)
    buf = np.empty(4)
    for i in range(n_paths):
        path = path_offset + i
        j = 0
        block = draw_offset // 4
        pos = draw_offset % 4
        fill_normals(k0, k1, path, block, raw, buf)
        while j < n_draws:
            if pos == 4:
                block += 1
                pos = 0
                fill_normals(k0, k1, path, block, raw, buf)
            out[i, j] = buf[pos]
            pos += 1
            j += 1


@nb.njit(nogil=True)
def _uniform_words(k0, k1, path_offset, n_paths, n_blocks, out):
    raw = np.empty(4, np.uint64)
    for i in range(n_paths):
        for b in range(n_blocks):
            philox4x64(np.uint64(b), np.uint64(path_offset + i), np.uint64(0),
                       np.uint64(0), k0, k1, raw)
            for k in range(4):
                out[i, 4 * b + k] = raw[k]


@dataclass(frozen=True)
class RngStream:
    """Addressable stream of standard normals.

    Draw ``j`` of path ``i`` depends only on ``(seed, stream_id, i, j)``.
    """

    seed: int
    stream_id: int = 0

    @property
    def key(self) -> tuple[np.uint64, np.uint64]:
        return np.uint64(self.seed & _MASK64), np.uint64(self.stream_id & _MASK64)

    def substream(self, k: int) -> "RngStream":
        """A stream with a distinct key, for an independent experiment."""
        return RngStream(self.seed, (self.stream_id + 0x9E3779B97F4A7C15 * (k + 1)) & _MASK64)

    def normals(self, n_paths: int, n_draws: int, path_offset: int = 0,
                draw_offset: int = 0) -> np.ndarray:
        """Array ``(n_paths, n_draws)``; row i is path ``path_offset + i``."""
        if n_paths < 0 or n_draws < 0 or path_offset < 0 or draw_offset < 0:
            raise ValueError("counts and offsets must be nonnegative")
        out = np.empty((n_paths, n_draws))
        k0, k1 = self.key
        _normals_block(k0, k1, path_offset, n_paths, draw_offset, n_draws, out)
        return out

    def raw_words(self, n_paths: int, n_blocks: int, path_offset: int = 0) -> np.ndarray:
        """Raw 64-bit Philox output, four words per block."""
        out = np.empty((n_paths, 4 * n_blocks), np.uint64)
        k0, k1 = self.key
        _uniform_words(k0, k1, path_offset, n_paths, n_blocks, out)
        return out
