"""Pure numpy/scipy kernels, used when the compiled core is unavailable."""

import numpy as np
from scipy.linalg import solve_triangular

NAME = "python"


def pairwise_sqdist(x, z):
    # direct differences keep small distances exact (no cancellation)
    diff = x[:, None, :] - z[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def potrf_lower(a):
    """Return the lower Cholesky factor of ``a`` or ``None`` if not PD."""
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        return None


def trsm(lower, b, transpose):
    # b is 2-D C-contiguous; transpose=True solves L^T x = b
    if transpose:
        return solve_triangular(lower, b, lower=True, trans="T", check_finite=False)
    return solve_triangular(lower, b, lower=True, check_finite=False)
