"""Dense float64 linear algebra used by every other module.

Tensors are plain C-contiguous ``numpy.float64`` arrays. The hot kernels
(pairwise distances, Cholesky, triangular solves) come from the compiled
``_core`` extension when it was built, otherwise from ``_fallback``. Set
``NOVI_BACKEND=python`` to force the fallback.
"""

import os
from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, InputError, NumericalError

if os.environ.get("NOVI_BACKEND", "").lower() == "python":
    from . import _fallback as _impl
else:
    try:
        from . import _core as _impl
    except ImportError:  # extension not built
        from . import _fallback as _impl

BACKEND = _impl.NAME

DEFAULT_JITTER = 1e-8
JITTER_CAP = 1e-2


def as_tensor(a):
    """Coerce to a C-contiguous float64 array."""
    return np.asarray(a, dtype=np.float64, order="C")


@dataclass(frozen=True)
class CholeskyFactor:
    lower: np.ndarray
    jitter_used: float

    @property
    def n(self):
        return self.lower.shape[0]

    def logdet(self):
        """log det of the factored matrix (including the jitter)."""
        return 2.0 * float(np.sum(np.log(np.diag(self.lower))))


def matmul(a, b):
    a = as_tensor(a)
    b = as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    return a @ b


def cholesky(a, base_jitter=DEFAULT_JITTER, max_jitter=JITTER_CAP):
    """Lower Cholesky factor of ``a + jitter * I``.

    The jitter starts at ``base_jitter`` and is multiplied by 10 after each
    failed attempt; once it would exceed ``max_jitter`` a
    :class:`NumericalError` is raised.
    """
    a = as_tensor(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"cholesky expects a square matrix, got {a.shape}")
    if base_jitter < 0 or max_jitter < 0:
        raise InputError("jitter values must be non-negative")
    if not np.all(np.isfinite(a)):
        raise NumericalError("cholesky input contains non-finite values")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if a.size and np.max(np.abs(a - a.T)) > 1e-10 * scale:
        raise InputError("cholesky input is not symmetric")
    n = a.shape[0]
    eye = np.eye(n)
    jitter = base_jitter
    tried = None
    while jitter <= max_jitter * (1 + 1e-12):
        tried = jitter
        lower = _impl.potrf_lower(a + jitter * eye if jitter else a)
        if lower is not None and np.all(np.diag(lower) > 0):
            return CholeskyFactor(lower, float(jitter))
        jitter = jitter * 10.0 if jitter > 0 else 1e-12
    raise NumericalError(f"cholesky failed; final jitter tried = {tried:g} (cap {max_jitter:g})")


def tri_solve(factor, b, side="lower"):
    """Solve ``L x = b`` (``side="lower"``) or ``L^T x = b`` (``"upper"``)."""
    lower = factor.lower if isinstance(factor, CholeskyFactor) else as_tensor(factor)
    if side not in ("lower", "upper"):
        raise InputError(f"side must be 'lower' or 'upper', got {side!r}")
    b = as_tensor(b)
    vector = b.ndim == 1
    b2 = b[:, None] if vector else b
    if b2.ndim != 2 or b2.shape[0] != lower.shape[0]:
        raise DimensionError(f"cannot solve {lower.shape} system with rhs {b.shape}")
    x = _impl.trsm(lower, np.ascontiguousarray(b2), side == "upper")
    return x[:, 0] if vector else x


def cho_solve(factor, b):
    """Apply ``(L L^T)^{-1}`` to ``b``."""
    return tri_solve(factor, tri_solve(factor, b, "lower"), "upper")


def pairwise_sqdist(x, z):
    """Squared Euclidean distances between the rows of ``x`` and ``z``."""
    x = as_tensor(x)
    z = as_tensor(z)
    if x.ndim != 2 or z.ndim != 2 or x.shape[1] != z.shape[1]:
        raise DimensionError(f"trailing dimensions differ: {x.shape} vs {z.shape}")
    return np.maximum(_impl.pairwise_sqdist(x, z), 0.0)
