# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels: fused pairwise distances and LAPACK/BLAS wrappers.

The row-major arrays handed in here are viewed by LAPACK/BLAS as their
column-major transposes; every call below accounts for that swap.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dtrsm
from scipy.linalg.cython_lapack cimport dpotrf

cnp.import_array()

NAME = "cython"


def pairwise_sqdist(const double[:, ::1] x, const double[:, ::1] z):
    cdef Py_ssize_t n = x.shape[0], m = z.shape[0], d = x.shape[1]
    cdef Py_ssize_t i, j, k
    cdef double s, t
    out = np.empty((n, m), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for i in range(n):
            for j in range(m):
                s = 0.0
                for k in range(d):
                    t = x[i, k] - z[j, k]
                    s = s + t * t
                o[i, j] = s
    return out


def potrf_lower(a):
    """Return the lower Cholesky factor of ``a`` or ``None`` if not PD."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] w = np.array(a, dtype=np.float64, order="C", copy=True)
    cdef int n = <int>w.shape[0]
    cdef int info = 0
    cdef char uplo = b"U"
    cdef Py_ssize_t i, j
    if n == 0:
        return w
    # column-major upper factor == row-major lower factor
    dpotrf(&uplo, &n, &w[0, 0], &n, &info)
    if info != 0:
        return None
    for i in range(n):
        for j in range(i + 1, n):
            w[i, j] = 0.0
    return w


def trsm(lower, b, bint transpose):
    """Solve ``L x = b`` (or ``L^T x = b``) for 2-D C-contiguous ``b``."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] lo = np.ascontiguousarray(lower, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] x = np.array(b, dtype=np.float64, order="C", copy=True)
    cdef int n = <int>x.shape[0]
    cdef int k = <int>x.shape[1]
    cdef double one = 1.0
    cdef char side = b"R"
    cdef char uplo = b"U"
    cdef char transa = b"T" if transpose else b"N"
    cdef char diag = b"N"
    if n == 0 or k == 0:
        return x
    # row-major X (n x k) is column-major X^T (k x n): X^T op(L^T) = B^T
    dtrsm(&side, &uplo, &transa, &diag, &k, &n, &one, &lo[0, 0], &n, &x[0, 0], &k)
    return x
