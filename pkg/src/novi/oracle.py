"""Closed-form references for the single-layer conjugate case, and prediction.

``exact_sgp_posterior`` conditions the inducing values on data under
``p(y | u) = N(A u, C)`` with ``A = K_xz K_zz^{-1}``. With
``conditional="diag"`` (the default) ``C = diag(K_xx - Q_xx) + s2 I``,
which is the density implied by the per-point reparameterized sampler
used for the score estimates; ``"full"`` keeps the whole matrix
``K_xx - Q_xx + s2 I``.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import dgp
from . import kernel as kn
from . import nets
from . import tensor as T
from .errors import DimensionError, InputError, NumericalError


@dataclass
class GaussianDist:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        n = self.mean.shape[0]
        if self.cov.shape != (n, n):
            raise DimensionError(f"covariance {self.cov.shape} does not match mean length {n}")

    @property
    def dim(self):
        return self.mean.shape[0]

    def factor(self):
        return T.cholesky(_sym(self.cov))

    def score(self, u):
        """``grad log N(u | mean, cov)`` for rows of ``u``."""
        u = np.asarray(u, dtype=float)
        r = (u - self.mean).T if u.ndim == 2 else u - self.mean
        s = -T.cho_solve(self.factor(), r)
        return s.T if u.ndim == 2 else s

    def sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.dim)) @ self.factor().lower.T


def _sym(a):
    return 0.5 * (a + a.T)


def _kern(k, a, b):
    return np.asarray(ad.value_of(kn.kern(k, a, b)))


def exact_sgp_posterior(y, x, z, kernel, noise_variance, conditional="diag", jitter=T.DEFAULT_JITTER):
    """Exact Gaussian posterior over ``u`` for one single-output GP layer."""
    if conditional not in ("diag", "full"):
        raise InputError("conditional must be 'diag' or 'full'")
    if not noise_variance > 0:
        raise InputError("noise variance must be positive")
    y = np.asarray(y, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise DimensionError(f"expected a single output column, got y of shape {y.shape}")
    x = T.as_tensor(x)
    z = T.as_tensor(z)
    if y.shape[0] != x.shape[0]:
        raise DimensionError(f"{y.shape[0]} targets for {x.shape[0]} inputs")
    kzz = kn.gram(kernel, z) + jitter * np.eye(z.shape[0])
    kxz = _kern(kernel, x, z)
    kxx = kn.gram(kernel, x)
    lz = T.cholesky(kzz, 0.0)
    a = T.cho_solve(lz, kxz.T).T
    resid = kxx - a @ kxz.T
    if conditional == "diag":
        c = np.diag(np.maximum(np.diag(resid), 0.0))
    else:
        c = _sym(resid)
    c = c + noise_variance * np.eye(x.shape[0])
    lc = T.cholesky(_sym(c), 0.0)
    # precision K^-1 + A^T C^-1 A = K^-1 (K + K_zx C^-1 K_xz) K^-1
    inner = _sym(kzz + kxz.T @ T.cho_solve(lc, kxz))
    li = T.cholesky(inner, 0.0)
    cov = _sym(kzz @ T.cho_solve(li, kzz))
    mean = kzz @ T.cho_solve(li, kxz.T @ T.cho_solve(lc, y))
    return GaussianDist(mean, cov)


def svgp_marginal(m, s, x, z, kernel, jitter=T.DEFAULT_JITTER):
    """Moments of ``f(x)`` under ``u ~ N(m, S)``.

    ``mu = K_xz K_zz^{-1} m`` and
    ``Sigma = K_xx - K_xz K_zz^{-1} (K_zz - S) K_zz^{-1} K_zx``.
    """
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    kzz = kn.gram(kernel, z) + jitter * np.eye(np.shape(z)[0])
    if s.shape != kzz.shape or m.shape[0] != kzz.shape[0]:
        raise DimensionError(f"m {m.shape} / S {s.shape} do not match M = {kzz.shape[0]}")
    kxz = _kern(kernel, x, z)
    a = T.cho_solve(T.cholesky(kzz, 0.0), kxz.T).T
    mu = a @ m
    cov = kn.gram(kernel, x) - a @ (kzz - s) @ a.T
    return mu, _sym(cov)


def exact_predictive_mean(y, x, z, kernel, noise_variance, x_star, conditional="diag"):
    post = exact_sgp_posterior(y, x, z, kernel, noise_variance, conditional)
    return svgp_marginal(post.mean, post.cov, x_star, z, kernel)[0]


def gaussian_fisher_divergence(q, p):
    """``E_q |grad log q - grad log p|^2`` for two Gaussians."""
    if q.dim != p.dim:
        raise DimensionError(f"dimensions differ: {q.dim} vs {p.dim}")
    try:
        fq = T.cholesky(_sym(q.cov), 0.0, 0.0)
        fp = T.cholesky(_sym(p.cov), 0.0, 0.0)
    except NumericalError as e:
        raise NumericalError(f"Fisher divergence needs invertible covariances: {e}") from e
    eye = np.eye(q.dim)
    diff = T.cho_solve(fp, eye) - T.cho_solve(fq, eye)
    shift = T.cho_solve(fp, q.mean - p.mean)
    return float(np.trace(diff @ q.cov @ diff) + shift @ shift)


def fisher_divergence_mc(q, p, rng, n):
    """Monte Carlo estimate of the defining integral; returns (mean, SE)."""
    u = q.sample(rng, n)
    d = q.score(u) - p.score(u)
    v = np.sum(d * d, axis=1)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n))


def generator_sampler(spec, gen):
    """Sampler ``(k, rng) -> (k, D_total)`` drawing from the generator."""

    def draw(k, rng):
        eps = rng.standard_normal((k, spec.noise_dim))
        return np.asarray(ad.value_of(nets.generator_forward(spec, gen, eps)))

    return draw


def constant_sampler(u):
    u = np.asarray(u, dtype=float)

    def draw(k, rng):
        return np.broadcast_to(u, (k, u.shape[0])).copy()

    return draw


def novi_predict(state, sampler, x_star, num_samples=100, rng=None, zero_eps=False, chunk=64):
    """Empirical mean and variance of final-layer draws at ``x_star``.

    Each draw takes a fresh inducing sample and fresh layer noise.
    Returns arrays of shape ``(n, D_L)``.
    """
    if int(num_samples) < 1:
        raise InputError("num_samples must be at least 1")
    x_star = T.as_tensor(x_star)
    if x_star.ndim != 2 or x_star.shape[1] != state.input_dim:
        raise DimensionError(f"expected inputs with d = {state.input_dim}, got shape {x_star.shape}")
    prepared = dgp.prepare(state)
    specs = state.specs
    n = x_star.shape[0]
    total = np.zeros((n, specs[-1].out_dim))
    total_sq = np.zeros_like(total)
    done = 0
    while done < num_samples:
        k = min(chunk, num_samples - done)
        u = sampler(k, rng)
        if zero_eps:
            eps = [np.zeros((k, 1, n, s.out_dim)) for s in specs]
        else:
            eps = dgp.draw_eps(specs, rng, n, k, 1)
        f = dgp.predict_f(state, x_star, u, eps, prepared)[:, 0]
        total += f.sum(axis=0)
        total_sq += (f * f).sum(axis=0)
        done += k
    mean = total / num_samples
    var = np.maximum(total_sq / num_samples - mean * mean, 0.0)
    return mean, var


def central_fd(f, x, h=None):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in np.ndindex(x.shape):
        step = h if h is not None else 1e-5 * max(1.0, abs(x[i]))
        xp = x.copy()
        xp[i] += step
        xm = x.copy()
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2 * step)
    return g
