"""Compiled inner loops for the Chebyshev exponential action.

Blocks of complex column vectors are passed as their float64 views, shape
(n, 2m) with real and imaginary parts interleaved.  The off-diagonal part of
the Hamiltonian is a real CSR matrix; the diagonal is passed separately so the
time-dependent drive never requires re-assembly.
"""

import numba
import numpy as np


@numba.njit(cache=True, nogil=True, fastmath=True)
def _cheb_pass(indptr, indices, data, dshift, scale, src, sub, sub_scale, dst, acc, cr, ci):
    # dst = scale * (H - c) src - sub_scale * sub ;  acc += (cr + i ci) * dst
    n, m2 = src.shape
    m = m2 // 2
    for i in range(n):
        d = dshift[i]
        for c in range(m2):
            dst[i, c] = d * src[i, c]
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            v = data[p]
            for c in range(m2):
                dst[i, c] += v * src[j, c]
        for c in range(m2):
            dst[i, c] = scale * dst[i, c] - sub_scale * sub[i, c]
        for c in range(m):
            yr = dst[i, 2 * c]
            yi = dst[i, 2 * c + 1]
            acc[i, 2 * c] += cr * yr - ci * yi
            acc[i, 2 * c + 1] += cr * yi + ci * yr


@numba.njit(cache=True, nogil=True, fastmath=True)
def cheb_series(indptr, indices, data, dshift, inv_r, coefs_re, coefs_im, x0, acc):
    """acc = sum_k coef_k T_k((H - c) / r) x0 for the real-view block x0."""
    n, m2 = x0.shape
    m = m2 // 2
    nterms = coefs_re.shape[0]
    c0r = coefs_re[0]
    c0i = coefs_im[0]
    for i in range(n):
        for c in range(m):
            xr = x0[i, 2 * c]
            xi = x0[i, 2 * c + 1]
            acc[i, 2 * c] = c0r * xr - c0i * xi
            acc[i, 2 * c + 1] = c0r * xi + c0i * xr
    if nterms == 1:
        return
    t_prev = x0.copy()
    t_cur = np.empty_like(x0)
    t_next = np.empty_like(x0)
    _cheb_pass(indptr, indices, data, dshift, inv_r, t_prev, t_prev, 0.0, t_cur, acc,
               coefs_re[1], coefs_im[1])
    for k in range(2, nterms):
        _cheb_pass(indptr, indices, data, dshift, 2.0 * inv_r, t_cur, t_prev, 1.0, t_next, acc,
                   coefs_re[k], coefs_im[k])
        t_prev, t_cur, t_next = t_cur, t_next, t_prev
