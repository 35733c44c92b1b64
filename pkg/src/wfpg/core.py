"""Shared math primitives: equal-area direction<->square mapping, Morton
codes, a seam-aware Gaussian blur for directional grids, and counter-based
random streams.

All functions accept scalars or numpy arrays and are pure, so they are safe
to call from any number of workers.
"""

import numpy as np

LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722])

_U64 = np.uint64
_MASK63 = _U64(0x7FFFFFFFFFFFFFFF)
_PHI = _U64(0x9E3779B97F4A7C15)


def luminance(rgb):
    return np.asarray(rgb) @ LUMA_WEIGHTS


# ---------------------------------------------------------------------------
# Concentric (equal-area) octahedral mapping.
#
# The unit square maps onto the sphere so that area is preserved exactly:
# the center diamond |a|+|b| <= 1 (square coords scaled to [-1,1]) covers the
# z >= 0 hemisphere and the four corner triangles fold onto z < 0.  Any
# uniform density on (u, v) therefore induces a uniform density in solid
# angle, and each cell of an NxN grid subtends exactly 4*pi/N^2.
# ---------------------------------------------------------------------------

def octa_uv_to_dir(u, v):
    """Map (u, v) in [0,1)^2 to a unit direction. Returns shape (..., 3)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    a = 2.0 * u - 1.0
    b = 2.0 * v - 1.0
    ap = np.abs(a)
    bp = np.abs(b)
    sd = 1.0 - (ap + bp)          # signed distance from the diamond edge
    d = np.abs(sd)
    r = 1.0 - d
    # phi in [0, pi/2] within the octant; r == 0 collapses to a pole where
    # phi is irrelevant.
    with np.errstate(invalid="ignore", divide="ignore"):
        phi = np.where(r == 0.0, 1.0, (bp - ap) / np.where(r == 0.0, 1.0, r) + 1.0)
    phi = phi * (np.pi / 4.0)
    z = np.copysign(1.0 - r * r, sd)
    rho = r * np.sqrt(np.maximum(2.0 - r * r, 0.0))
    x = np.copysign(np.cos(phi), a) * rho
    y = np.copysign(np.sin(phi), b) * rho
    out = np.stack([x, y, z], axis=-1)
    # guard against rounding drift
    out /= np.linalg.norm(out, axis=-1, keepdims=True)
    return out


def octa_dir_to_uv(d):
    """Inverse of :func:`octa_uv_to_dir`; clamps to [0, 1) at the seams."""
    d = np.asarray(d, dtype=np.float64)
    x = np.abs(d[..., 0])
    y = np.abs(d[..., 1])
    z = d[..., 2]
    r = np.sqrt(np.maximum(1.0 - np.abs(z), 0.0))
    hi = np.maximum(x, y)
    lo = np.minimum(x, y)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(hi == 0.0, 0.0, lo / np.where(hi == 0.0, 1.0, hi))
    phi = np.arctan(ratio) * (2.0 / np.pi)       # [0, 0.5] of the quadrant
    phi = np.where(x < y, 1.0 - phi, phi)
    vq = phi * r
    uq = r - vq
    south = z < 0.0
    uq, vq = (np.where(south, 1.0 - vq, uq), np.where(south, 1.0 - uq, vq))
    uq = np.copysign(uq, d[..., 0])
    vq = np.copysign(vq, d[..., 1])
    u = 0.5 * (uq + 1.0)
    v = 0.5 * (vq + 1.0)
    eps = 1e-12
    return np.clip(u, 0.0, 1.0 - eps), np.clip(v, 0.0, 1.0 - eps)


# ---------------------------------------------------------------------------
# Morton codes: 21 bits per axis interleaved with x in the least significant
# position of each bit triple.
# ---------------------------------------------------------------------------

_COORD_LIMIT = 1 << 21


def _spread21(v):
    v = v.astype(np.uint64)
    with np.errstate(over="ignore"):
        v &= _U64(0x1FFFFF)
        v = (v | (v << _U64(32))) & _U64(0x1F00000000FFFF)
        v = (v | (v << _U64(16))) & _U64(0x1F0000FF0000FF)
        v = (v | (v << _U64(8))) & _U64(0x100F00F00F00F00F)
        v = (v | (v << _U64(4))) & _U64(0x10C30C30C30C30C3)
        v = (v | (v << _U64(2))) & _U64(0x1249249249249249)
    return v


def _compact21(c):
    c = c.astype(np.uint64)
    with np.errstate(over="ignore"):
        c &= _U64(0x1249249249249249)
        c = (c | (c >> _U64(2))) & _U64(0x10C30C30C30C30C3)
        c = (c | (c >> _U64(4))) & _U64(0x100F00F00F00F00F)
        c = (c | (c >> _U64(8))) & _U64(0x1F0000FF0000FF)
        c = (c | (c >> _U64(16))) & _U64(0x1F00000000FFFF)
        c = (c | (c >> _U64(32))) & _U64(0x1FFFFF)
    return c


def morton_encode(x, y, z):
    x = np.asarray(x)
    y = np.asarray(y)
    z = np.asarray(z)
    if np.any(x < 0) or np.any(y < 0) or np.any(z < 0):
        raise ValueError("morton coordinates must be non-negative")
    if np.any(x >= _COORD_LIMIT) or np.any(y >= _COORD_LIMIT) or np.any(z >= _COORD_LIMIT):
        raise ValueError("morton coordinate exceeds 21 bits")
    with np.errstate(over="ignore"):
        code = _spread21(x) | (_spread21(y) << _U64(1)) | (_spread21(z) << _U64(2))
    if code.ndim == 0:
        return int(code)
    return code


def morton_decode(code):
    code = np.asarray(code, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _compact21(code)
        y = _compact21(code >> _U64(1))
        z = _compact21(code >> _U64(2))
    if code.ndim == 0:
        return int(x), int(y), int(z)
    return x.astype(np.int64), y.astype(np.int64), z.astype(np.int64)


# ---------------------------------------------------------------------------
# Gaussian blur over the octahedral grid.
#
# Separable convolution, kernel truncated at 3 sigma.  Taps that walk off an
# edge re-enter through the octahedral fold: the column (or row) reflects
# back in and the orthogonal coordinate mirrors, which is exactly the texel
# adjacency of the folded sphere, so no energy leaks across seams.
# ---------------------------------------------------------------------------

def _blur_kernel(sigma):
    radius = max(1, int(np.ceil(3.0 * sigma)))
    k = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    return k / k.sum(), radius


def _fold_lut(n, radius):
    """Per raw index in [-radius, n + radius): (wrapped index, mirror flag)."""
    idx = np.empty(n + 2 * radius, dtype=np.int64)
    flip = np.empty(n + 2 * radius, dtype=bool)
    for out, raw in enumerate(range(-radius, n + radius)):
        i, f = raw, False
        while i < 0 or i >= n:
            i = -1 - i if i < 0 else 2 * n - 1 - i
            f = not f
        idx[out] = i
        flip[out] = f
    return idx, flip


def gaussian_blur(grid, sigma):
    """Blur an NxN directional grid with octahedral-fold boundary handling.

    Accepts stacked grids of shape (..., N, N); the blur applies to the
    trailing two axes.
    """
    grid = np.asarray(grid, dtype=np.float64)
    n = grid.shape[-1]
    if grid.ndim < 2 or grid.shape[-2] != n:
        raise ValueError("grid must be square")
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    kernel, radius = _blur_kernel(sigma)
    idx, flip = _fold_lut(n, radius)

    def horizontal(a):
        out = np.zeros_like(a)
        a_flip = a[..., ::-1, :]
        for k, w in enumerate(kernel):
            cols = idx[k : k + n]
            src = np.where(flip[k : k + n], a_flip[..., :, cols], a[..., :, cols])
            out += w * src
        return out

    mid = horizontal(grid)
    return np.swapaxes(horizontal(np.swapaxes(mid, -1, -2)), -1, -2)


# ---------------------------------------------------------------------------
# Counter-based RNG.  The value of draw c from stream (seed, stream) is a
# pure function of (seed, stream, c), so results do not depend on scheduling
# or batch composition.  The sequence is splitmix64 seeded from a mixed key.
# ---------------------------------------------------------------------------

def _mix64(x):
    x = np.asarray(x, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = (x ^ (x >> _U64(30))) * _U64(0xBF58476D1CE4E5B9)
        x = (x ^ (x >> _U64(27))) * _U64(0x94D049BB133111EB)
        x ^= x >> _U64(31)
    return x


def stream_key(seed, stream):
    with np.errstate(over="ignore"):
        return _mix64(_mix64(np.uint64(seed) if np.isscalar(seed) else seed)
                      ^ (_mix64(stream) * _PHI))


def u64_at(key, counter):
    key = np.asarray(key, dtype=np.uint64)
    counter = np.asarray(counter, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix64(key + (counter + _U64(1)) * _PHI)


def u01_at(key, counter):
    """Uniform double in [0, 1) for the given (key, counter)."""
    return (u64_at(key, counter) >> _U64(11)) * 2.0 ** -53


class RngStream:
    """A deterministic random stream owned by one path or build task.

    Identical (seed, stream, counter) triples yield identical output on
    every platform; the counter wraps modulo 2^64.
    """

    __slots__ = ("seed", "stream", "counter", "_key")

    def __init__(self, seed, stream=0, counter=0):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self.stream = int(stream) & 0xFFFFFFFFFFFFFFFF
        self.counter = int(counter) & 0xFFFFFFFFFFFFFFFF
        self._key = int(stream_key(self.seed, self.stream))

    def next(self):
        u = float(u01_at(np.uint64(self._key), np.uint64(self.counter)))
        self.counter = (self.counter + 1) & 0xFFFFFFFFFFFFFFFF
        return u

    def next_n(self, n):
        counters = (np.uint64(self.counter) + np.arange(n, dtype=np.uint64))
        us = u01_at(np.uint64(self._key), counters)
        self.counter = (self.counter + n) & 0xFFFFFFFFFFFFFFFF
        return us


def rng_next(stream):
    """Draw one uniform in [0, 1) from the stream, advancing its counter."""
    return stream.next()
