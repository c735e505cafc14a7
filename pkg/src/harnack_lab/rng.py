"""Counter-based Gaussian noise for reproducible ensembles.

Every standard normal used by the simulator is a pure function of the key
``(seed, path, step, mode, stream)``.  The uniforms come from Philox4x32-10
(Salmon et al., SC'11) and are mapped to normals by the inverse normal CDF,
so a value never depends on how many paths are processed together, in which
order, or on how many threads run the kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.special import ndtri

__all__ = ["philox4x32", "uniforms", "normals", "NoisePlan", "STREAMS"]

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)

# Named sub-streams so different uses of one seed never share increments.
STREAMS = {
    "increments": 0,
    "exact": 1,
    "start": 2,
    "invariant": 3,
    "pairs": 4,
}


@nb.njit(cache=True, inline="always")
def _philox_block(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r > 0:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        hi0 = p0 >> _S32
        lo0 = p0 & _MASK
        hi1 = p1 >> _S32
        lo1 = p1 & _MASK
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


@nb.njit(cache=True)
def _philox_many(ctr, key):
    out = np.empty_like(ctr)
    k0 = np.uint64(key[0])
    k1 = np.uint64(key[1])
    for i in range(ctr.shape[0]):
        r = _philox_block(
            np.uint64(ctr[i, 0]), np.uint64(ctr[i, 1]),
            np.uint64(ctr[i, 2]), np.uint64(ctr[i, 3]), k0, k1,
        )
        out[i, 0] = r[0]
        out[i, 1] = r[1]
        out[i, 2] = r[2]
        out[i, 3] = r[3]
    return out


def philox4x32(counter, key):
    """Raw Philox4x32-10 blocks.

    ``counter`` is an ``(N, 4)`` array of 32-bit words and ``key`` a pair of
    32-bit words; returns the ``(N, 4)`` output words as ``uint64``.
    """
    ctr = np.atleast_2d(np.asarray(counter, dtype=np.uint64)) & _MASK
    k = np.asarray(key, dtype=np.uint64) & _MASK
    return _philox_many(ctr, k)


@nb.njit(cache=True, parallel=True)
def _uniform_kernel(k0, k1, path0, npaths, step, nmodes, stream, mode0):
    out = np.empty((npaths, nmodes), dtype=np.float64)
    npairs = (mode0 + nmodes + 1) // 2 - mode0 // 2
    first_pair = mode0 // 2
    scale = 1.0 / 9007199254740992.0  # 2**-53
    for i in nb.prange(npaths):
        c0 = np.uint64(path0 + i) & _MASK
        c1 = np.uint64(step) & _MASK
        c3 = np.uint64(stream) & _MASK
        for q in range(npairs):
            pair = first_pair + q
            r0, r1, r2, r3 = _philox_block(
                c0, c1, np.uint64(pair) & _MASK, c3, np.uint64(k0), np.uint64(k1)
            )
            ua = ((r0 >> np.uint64(5)) * np.uint64(67108864) + (r1 >> np.uint64(6)))
            ub = ((r2 >> np.uint64(5)) * np.uint64(67108864) + (r3 >> np.uint64(6)))
            ma = 2 * pair - mode0
            mb = ma + 1
            if 0 <= ma < nmodes:
                out[i, ma] = (np.float64(ua) + 0.5) * scale
            if 0 <= mb < nmodes:
                out[i, mb] = (np.float64(ub) + 0.5) * scale
    return out


def _split_seed(seed: int) -> tuple[int, int]:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return seed & 0xFFFFFFFF, seed >> 32


def uniforms(seed, path0, npaths, step, nmodes, stream=0, mode0=0):
    """Open-interval uniforms for paths ``path0 .. path0+npaths-1``.

    Mode ``k`` (0-based) of a path always reads the same word pair of the
    block with counter ``(path, step, k // 2, stream)``, so truncating or
    extending the number of modes leaves the shared modes unchanged.
    """
    if npaths < 0 or nmodes < 0:
        raise ValueError("npaths and nmodes must be non-negative")
    k0, k1 = _split_seed(seed)
    return _uniform_kernel(
        np.int64(k0), np.int64(k1), np.int64(path0), np.int64(npaths),
        np.int64(step), np.int64(nmodes), np.int64(stream), np.int64(mode0),
    )


def normals(seed, path0, npaths, step, nmodes, stream=0, mode0=0):
    """Standard normals obtained by inverse-CDF transform of :func:`uniforms`."""
    return ndtri(uniforms(seed, path0, npaths, step, nmodes, stream, mode0))


@dataclass(frozen=True)
class NoisePlan:
    """Seeded description of the Gaussian increments of an ensemble.

    ``path_offset`` shifts the global path index, which lets a plan describe
    a disjoint block of a larger ensemble without changing any values.
    """

    seed: int
    paths: int
    path_offset: int = 0
    stream: int = STREAMS["increments"]

    def __post_init__(self):
        if self.paths < 1:
            raise ValueError("a noise plan needs at least one path")

    def increments(self, step, nmodes, start=0, stop=None):
        stop = self.paths if stop is None else stop
        return normals(self.seed, self.path_offset + start, stop - start, step, nmodes, self.stream)

    def with_stream(self, name_or_id) -> "NoisePlan":
        sid = STREAMS[name_or_id] if isinstance(name_or_id, str) else int(name_or_id)
        return NoisePlan(self.seed, self.paths, self.path_offset, sid)

    def block(self, start, stop) -> "NoisePlan":
        return NoisePlan(self.seed, stop - start, self.path_offset + start, self.stream)
