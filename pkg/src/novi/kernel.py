"""Stationary covariance functions with log-space hyperparameters.

Parameter fields may hold plain arrays or autodiff Vars, so the same code
evaluates kernels for prediction and records them on a tape when
hyperparameter gradients are needed.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, InputError

SE = "SE"
RQ = "RQ"
KINDS = (SE, RQ)


@dataclass(frozen=True)
class ClipInterval:
    P: float = 1e-3
    Q: float = 1e3

    def __post_init__(self):
        validate_interval(self)


def validate_interval(interval):
    P, Q = float(interval.P), float(interval.Q)
    if not (np.isfinite(P) and np.isfinite(Q)) or P <= 0 or Q <= 0 or P >= Q:
        raise InputError(f"clip interval needs 0 < P < Q, got P={P}, Q={Q}")


@dataclass
class KernelParams:
    """Hyperparameters of one kernel; ``log_alpha`` is only used by RQ."""

    kind: str
    log_variance: object
    log_lengthscales: object
    log_alpha: Optional[object] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == RQ and self.log_alpha is None:
            raise InputError("RQ kernel needs log_alpha")

    @property
    def input_dim(self):
        return int(np.shape(ad.value_of(self.log_lengthscales))[0])

    @property
    def variance(self):
        return float(np.exp(ad.value_of(self.log_variance)))

    @property
    def lengthscales(self):
        return np.exp(np.asarray(ad.value_of(self.log_lengthscales), dtype=float))

    @property
    def alpha(self):
        return None if self.log_alpha is None else float(np.exp(ad.value_of(self.log_alpha)))

    def arrays(self):
        """Named parameter arrays (constant copies), in a fixed order."""
        out = {
            "log_variance": np.array(ad.value_of(self.log_variance), dtype=float),
            "log_lengthscales": np.array(ad.value_of(self.log_lengthscales), dtype=float),
        }
        if self.kind == RQ:
            out["log_alpha"] = np.array(ad.value_of(self.log_alpha), dtype=float)
        return out

    def with_arrays(self, arrays):
        """Copy with fields replaced from ``arrays`` (values may be Vars)."""
        kw = {k: arrays[k] for k in ("log_variance", "log_lengthscales", "log_alpha") if k in arrays}
        return replace(self, **kw)


def make_params(kind, input_dim, variance=1.0, lengthscale=1.0, alpha=1.0):
    ls = np.broadcast_to(np.asarray(lengthscale, dtype=float), (input_dim,))
    return KernelParams(
        kind=kind,
        log_variance=np.asarray(np.log(variance)),
        log_lengthscales=np.log(ls).copy(),
        log_alpha=np.asarray(np.log(alpha)) if kind == RQ else None,
    )


def _scaled_sqdist(params, x, z):
    inv_ls = ad.exp(ad.neg(params.log_lengthscales))
    xs = ad.mul(x, inv_ls)
    zs = ad.mul(z, inv_ls)
    if len(np.shape(ad.value_of(xs))) == 2 and len(np.shape(ad.value_of(zs))) == 2:
        return ad.pairwise_sqdist(xs, zs)
    # batched inputs: expand the square; clamp the cancellation error at 0
    x2 = ad.sum(ad.mul(xs, xs), -1, True)
    z2 = ad.reshape(ad.sum(ad.mul(zs, zs), -1), (1, -1))
    cross = ad.matmul(xs, ad.swap_last(zs))
    return ad.maximum(ad.add(ad.sub(x2, ad.mul(cross, 2.0)), z2), 0.0)


def _check_dims(params, x, z):
    d = params.input_dim
    sx = np.shape(ad.value_of(x))
    sz = np.shape(ad.value_of(z))
    if len(sx) < 2 or len(sz) != 2:
        raise DimensionError(f"kern expects x[..., n, d] and z[m, d], got {sx} and {sz}")
    if sx[-1] != d or sz[-1] != d:
        raise DimensionError(f"trailing dimensions {sx[-1]} and {sz[-1]} do not match kernel input dim {d}")


def kern(params, x, z):
    """Cross-covariance ``k(x_i, z_j)``; ``x`` may carry leading batch axes."""
    _check_dims(params, x, z)
    r2 = _scaled_sqdist(params, x, z)
    if params.kind == SE:
        return ad.exp(ad.sub(params.log_variance, ad.mul(r2, 0.5)))
    alpha = ad.exp(params.log_alpha)
    base = ad.add(1.0, ad.div(r2, ad.mul(alpha, 2.0)))
    return ad.exp(ad.sub(params.log_variance, ad.mul(alpha, ad.log(base))))


def kern_diag(params, x):
    """``k(x_i, x_i)``; constant ``sigma_f^2`` for stationary kernels."""
    sx = np.shape(ad.value_of(x))
    if len(sx) < 2 or sx[-1] != params.input_dim:
        raise DimensionError(f"kern_diag expects x[..., n, {params.input_dim}], got {sx}")
    return ad.mul(np.ones(sx[:-1]), ad.exp(params.log_variance))


def gram(params, x):
    """Symmetric Gram matrix of 2-D constant inputs (symmetrized exactly)."""
    k = np.asarray(ad.value_of(kern(params, x, x)))
    return 0.5 * (k + k.T)


def apply_clip(params, interval=ClipInterval()):
    """Clip each lengthscale into ``[P, Q]``; other fields are unchanged."""
    validate_interval(interval)
    ls = np.exp(np.asarray(ad.value_of(params.log_lengthscales), dtype=float))
    clipped = np.where(ls < interval.P, interval.P, np.where(ls > interval.Q, interval.Q, ls))
    new_log = np.where(clipped == ls, np.asarray(ad.value_of(params.log_lengthscales), dtype=float), np.log(clipped))
    return replace(params, log_lengthscales=new_log)
