"""Hot loops for nearest-point detection on a constellation.

Two interchangeable backends are provided: numba ``@njit`` kernels and a
vectorized numpy path. The numba path is used when numba imports and the
environment variable ``TASKJSCC_DISABLE_NUMBA`` is unset (or ``0``).
Both backends evaluate squared distances with the same operation order, so
they return bit-identical indices and losses.
"""
import os

import numpy as np

_FLAG = os.environ.get("TASKJSCC_DISABLE_NUMBA", "0").strip().lower()

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _FLAG in ("", "0", "false", "no")


# -- numpy backend ---------------------------------------------------------

def nearest_numpy(z_re, z_im, p_re, p_im):
    """Index of, and squared distance to, the nearest point for each symbol.

    Ties resolve to the lowest point index (``argmin`` returns the first).
    """
    dr = z_re[:, None] - p_re[None, :]
    di = z_im[:, None] - p_im[None, :]
    d2 = dr * dr + di * di
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(d2.shape[0]), idx]


def qloss_grad_r_numpy(z_re, z_im, p_re, p_im, r):
    idx, d2 = nearest_numpy(z_re, z_im, p_re, p_im)
    dist = np.sqrt(d2)
    er = p_re[idx]
    ei = p_im[idx]
    # d|z - e(r)|/dr with e linear in r: -Re(conj(z - e) * e/r) / |z - e|
    num = (z_re - er) * (er / r) + (z_im - ei) * (ei / r)
    g = np.zeros_like(dist)
    nz = dist > 0.0
    g[nz] = -num[nz] / dist[nz]
    return dist, g


# -- numba backend ---------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def nearest_numba(z_re, z_im, p_re, p_im):
        n = z_re.shape[0]
        u = p_re.shape[0]
        idx = np.empty(n, dtype=np.int64)
        best = np.empty(n, dtype=np.float64)
        for i in range(n):
            bj = 0
            dr = z_re[i] - p_re[0]
            di = z_im[i] - p_im[0]
            bd = dr * dr + di * di
            for j in range(1, u):
                dr = z_re[i] - p_re[j]
                di = z_im[i] - p_im[j]
                d = dr * dr + di * di
                if d < bd:
                    bd = d
                    bj = j
            idx[i] = bj
            best[i] = bd
        return idx, best

    @njit(cache=True)
    def qloss_grad_r_numba(z_re, z_im, p_re, p_im, r):
        idx, d2 = nearest_numba(z_re, z_im, p_re, p_im)
        n = z_re.shape[0]
        dist = np.sqrt(d2)
        g = np.zeros(n, dtype=np.float64)
        for i in range(n):
            if dist[i] > 0.0:
                er = p_re[idx[i]]
                ei = p_im[idx[i]]
                num = (z_re[i] - er) * (er / r) + (z_im[i] - ei) * (ei / r)
                g[i] = -num / dist[i]
        return dist, g

else:  # pragma: no cover
    nearest_numba = None
    qloss_grad_r_numba = None


def _split(z):
    z = np.ascontiguousarray(np.asarray(z, dtype=np.complex128).ravel())
    return np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)


def nearest(z, points):
    """Dispatch nearest-point search on complex arrays; returns (idx, d2)."""
    z_re, z_im = _split(z)
    p_re, p_im = _split(points)
    fn = nearest_numba if USE_NUMBA else nearest_numpy
    return fn(z_re, z_im, p_re, p_im)


def qloss_grad_r(z, points, r):
    """Mean nearest distance and its derivative in the grid scale ``r``."""
    z_re, z_im = _split(z)
    p_re, p_im = _split(points)
    fn = qloss_grad_r_numba if USE_NUMBA else qloss_grad_r_numpy
    dist, g = fn(z_re, z_im, p_re, p_im, float(r))
    # reduce outside the kernel: numba's np.sum is sequential, numpy's pairwise
    n = dist.shape[0]
    return float(dist.sum() / n), float(g.sum() / n)
