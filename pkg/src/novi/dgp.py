"""Deep GP with inducing variables: conditionals, sampling, log densities, scores.

Shapes. A batch of K inducing samples is a ``(K, D_total)`` array in the
flat layout: layers in order, then output dimensions, then inducing
indices, so each ``U[l][:, d]`` is one contiguous block. Per-layer views
are ``(..., M, D_l)``. Forward samples carry shape ``(K, S, B, D_l)``:
K inducing samples, S likelihood draws each, B data rows.

All model functions accept a state whose numeric fields are arrays or
autodiff Vars (see :func:`taped_state`), so the same code serves plain
evaluation, gradients with respect to the inducing values, and first-order
gradients with respect to the hyperparameters.
"""

from dataclasses import dataclass, replace
from typing import List

import numpy as np

from . import autodiff as ad
from . import kernel as kn
from . import tensor as T
from .errors import DimensionError, InputError, NumericalError

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    num_inducing: int

    def __post_init__(self):
        for name in ("in_dim", "out_dim", "num_inducing"):
            if int(getattr(self, name)) < 1:
                raise InputError(f"LayerSpec.{name} must be a positive integer")

    @property
    def size(self):
        return self.out_dim * self.num_inducing


def make_specs(input_dim, output_dim, num_layers, hidden_dim=10, num_inducing=100):
    """Layer specs with ``hidden_dim`` outputs per hidden layer."""
    if num_layers < 1:
        raise InputError("a DGP needs at least one layer")
    ms = list(num_inducing) if np.ndim(num_inducing) else [int(num_inducing)] * num_layers
    if len(ms) != num_layers:
        raise InputError(f"{len(ms)} inducing counts for {num_layers} layers")
    specs = []
    d_in = input_dim
    for i in range(num_layers):
        d_out = output_dim if i == num_layers - 1 else hidden_dim
        specs.append(LayerSpec(d_in, d_out, ms[i]))
        d_in = d_out
    check_specs(specs)
    return specs


def check_specs(specs):
    for a, b in zip(specs[:-1], specs[1:]):
        if b.in_dim != a.out_dim:
            raise DimensionError(f"layer in_dim {b.in_dim} does not match previous out_dim {a.out_dim}")


def total_size(specs):
    return sum(s.size for s in specs)


@dataclass
class Layer:
    z: object
    kernel: kn.KernelParams


@dataclass
class DgpState:
    layers: List[Layer]
    log_noise: object
    output_dim: int = 1

    @property
    def noise_variance(self):
        return float(np.exp(ad.value_of(self.log_noise)))

    @property
    def specs(self):
        shapes = [np.shape(ad.value_of(layer.z)) for layer in self.layers]
        outs = [d_in for _, d_in in shapes[1:]] + [self.output_dim]
        return [LayerSpec(d_in, d_out, m) for (m, d_in), d_out in zip(shapes, outs)]

    @property
    def input_dim(self):
        return int(np.shape(ad.value_of(self.layers[0].z))[1])

    @property
    def d_total(self):
        return total_size(self.specs)

    def arrays(self):
        """Hyperparameters as named constant arrays, in a fixed order."""
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.z"] = np.array(ad.value_of(layer.z), dtype=float)
            for k, v in layer.kernel.arrays().items():
                out[f"layer{i}.{k}"] = v
        out["log_noise"] = np.array(ad.value_of(self.log_noise), dtype=float)
        return out

    def with_arrays(self, arrays):
        layers = []
        for i, layer in enumerate(self.layers):
            kp = {k.split(".", 1)[1]: v for k, v in arrays.items()
                  if k.startswith(f"layer{i}.") and not k.endswith(".z")}
            layers.append(Layer(arrays[f"layer{i}.z"], layer.kernel.with_arrays(kp)))
        return replace(self, layers=layers, log_noise=arrays["log_noise"])

    def clipped(self, interval=kn.ClipInterval()):
        return replace(self, layers=[Layer(l.z, kn.apply_clip(l.kernel, interval)) for l in self.layers])


def init_state(specs, rng, kernel_kind=kn.RQ, noise_variance=0.01, variance=1.0,
               lengthscale=1.0, alpha=1.0, z_init=None):
    """Initial hyperparameters; inducing inputs default to standard normal draws."""
    check_specs(specs)
    layers = []
    for i, s in enumerate(specs):
        if i == 0 and z_init is not None:
            z = T.as_tensor(z_init).copy()
            if z.shape != (s.num_inducing, s.in_dim):
                raise DimensionError(f"z_init shape {z.shape} != {(s.num_inducing, s.in_dim)}")
        else:
            z = rng.standard_normal((s.num_inducing, s.in_dim))
        layers.append(Layer(z, kn.make_params(kernel_kind, s.in_dim, variance, lengthscale, alpha)))
    if noise_variance <= 0:
        raise InputError("noise variance must be positive")
    return DgpState(layers, np.asarray(np.log(noise_variance)), output_dim=specs[-1].out_dim)


def taped_state(state, tape):
    """A copy of ``state`` whose hyperparameters are leaf Vars on ``tape``."""
    arrays = state.arrays()
    leaves = {k: tape.var(v) for k, v in arrays.items()}
    return state.with_arrays(leaves), leaves


# ---------------------------------------------------------------------------
# inducing sample layout


def _batched(u):
    shape = np.shape(ad.value_of(u))
    if len(shape) == 1:
        return ad.reshape(u, (1, shape[0])), True
    if len(shape) == 2:
        return u, False
    raise DimensionError(f"inducing samples must be 1-D or 2-D, got shape {shape}")


def unflatten(specs, flat):
    """Split flat samples ``(..., D_total)`` into per-layer ``(..., M, D_l)`` views."""
    shape = np.shape(ad.value_of(flat))
    if shape[-1] != total_size(specs):
        raise DimensionError(f"flat length {shape[-1]} != D_total {total_size(specs)}")
    lead = tuple(shape[:-1])
    out = []
    off = 0
    for s in specs:
        idx = (Ellipsis, slice(off, off + s.size))
        block = ad.reshape(ad.getitem(flat, idx), lead + (s.out_dim, s.num_inducing))
        out.append(ad.swap_last(block))
        off += s.size
    return out


def flatten(specs, blocks):
    """Inverse of :func:`unflatten`."""
    if len(blocks) != len(specs):
        raise DimensionError(f"{len(blocks)} blocks for {len(specs)} layers")
    parts = []
    for s, b in zip(specs, blocks):
        shape = np.shape(ad.value_of(b))
        if shape[-2:] != (s.num_inducing, s.out_dim):
            raise DimensionError(f"block shape {shape} != (..., {s.num_inducing}, {s.out_dim})")
        bt = ad.swap_last(b)
        parts.append(ad.reshape(bt, tuple(shape[:-2]) + (s.size,)))
    return ad.concatenate(parts, axis=-1)


# ---------------------------------------------------------------------------
# conditionals and sampling


class _Prepared:
    """Inducing Gram matrices and their factors for one state."""

    def __init__(self, state, base_jitter=T.DEFAULT_JITTER):
        self.kzz = []
        self.factors = []
        self.linv_t = []
        for i, layer in enumerate(state.layers):
            kzz = kn.kern(layer.kernel, layer.z, layer.z)
            try:
                factor = T.cholesky(ad.value_of(kzz), base_jitter)
            except NumericalError as e:
                raise NumericalError(f"layer {i + 1} inducing covariance: {e}") from e
            self.kzz.append(kzz)
            self.factors.append(factor)
            # L^{-T}: turns the variance solve into one matrix product
            self.linv_t.append(np.ascontiguousarray(T.tri_solve(factor, np.eye(factor.n), "lower").T))


def prepare(state, base_jitter=T.DEFAULT_JITTER):
    return _Prepared(state, base_jitter)


def _solve_inducing(kzz, factor, u):
    """``K_zz^{-1} u`` for ``u`` of shape ``(..., M, D)``."""
    shape = np.shape(ad.value_of(u))
    nd = len(shape)
    if nd == 2:
        return ad.cho_solve(kzz, u, factor)
    m = shape[-2]
    front = ad.transpose(u, (nd - 2,) + tuple(range(nd - 2)) + (nd - 1,))
    sol = ad.cho_solve(kzz, ad.reshape(front, (m, -1)), factor)
    sol = ad.reshape(sol, (m,) + tuple(shape[:-2]) + (shape[-1],))
    return ad.transpose(sol, tuple(range(1, nd - 1)) + (0, nd - 1))


def _conditional(layer, kzz, factor, f, u, linv_t=None):
    kfz = kn.kern(layer.kernel, f, layer.z)
    kshape = np.shape(ad.value_of(kfz))
    m = kshape[-1]
    mean = ad.matmul(kfz, _solve_inducing(kzz, factor, u))
    flat = ad.reshape(kfz, (-1, m))
    if isinstance(kzz, ad.Var):
        w = ad.cho_solve(kzz, ad.swap_last(flat), factor)
        q = ad.sum(ad.mul(flat, ad.swap_last(w)), 1)
    elif linv_t is not None:
        a = ad.matmul(flat, linv_t)
        q = ad.sum(ad.mul(a, a), 1)
    else:
        a = ad.tri_solve(factor, ad.swap_last(flat), "lower")
        q = ad.sum(ad.mul(a, a), 0)
    q = ad.reshape(q, kshape[:-1])
    var = ad.maximum(ad.sub(kn.kern_diag(layer.kernel, f), q), 0.0)
    return mean, var


def layer_conditional(state, layer_index, f_prev, u_l, prepared=None):
    """Mean and marginal variance of layer ``layer_index`` (0-based) given its inputs.

    ``f_prev`` is ``(..., n, in_dim)`` and ``u_l`` is ``(..., M, D_l)``;
    leading axes broadcast. Returns ``mean (..., n, D_l)`` and
    ``var_diag (..., n)``.
    """
    prepared = prepared or prepare(state)
    layer = state.layers[layer_index]
    spec = state.specs[layer_index]
    fs = np.shape(ad.value_of(f_prev))
    us = np.shape(ad.value_of(u_l))
    if fs[-1] != spec.in_dim:
        raise DimensionError(f"layer {layer_index + 1} expects inputs of width {spec.in_dim}, got {fs[-1]}")
    if us[-2:] != (spec.num_inducing, spec.out_dim):
        raise DimensionError(f"layer {layer_index + 1} expects U of shape (M={spec.num_inducing}, D={spec.out_dim}), got {us}")
    return _conditional(layer, prepared.kzz[layer_index], prepared.factors[layer_index], f_prev, u_l,
                        prepared.linv_t[layer_index])


def draw_eps(specs, rng, n, K=None, S=None):
    """Standard normal noise blocks, one per layer, shaped ``(K, S, n, D_l)``.

    ``K`` or ``S`` set to None drops that axis.
    """
    lead = tuple(a for a in (K, S) if a is not None)
    return [rng.standard_normal(lead + (n, s.out_dim)) for s in specs]


def _propagate(state, prepared, x, blocks, eps):
    f = x
    for i, layer in enumerate(state.layers):
        mean, var = _conditional(layer, prepared.kzz[i], prepared.factors[i], f, blocks[i], prepared.linv_t[i])
        sd = ad.sqrt(var)
        vshape = np.shape(ad.value_of(sd))
        f = ad.add(mean, ad.mul(eps[i], ad.reshape(sd, vshape + (1,))))
    return f


def forward_sample(state, x, u, eps, prepared=None):
    """Reparameterized draw of the final layer outputs.

    ``u`` is one flat sample ``(D_total,)`` with eps blocks ``(n, D_l)``,
    or a batch ``(K, D_total)`` with eps blocks ``(K, S, n, D_l)`` (any
    shape that broadcasts against the layer means works).
    """
    specs = state.specs
    if len(eps) != len(specs):
        raise DimensionError(f"{len(eps)} eps blocks for {len(specs)} layers")
    n = np.shape(ad.value_of(x))[0]
    for e, s in zip(eps, specs):
        es = np.shape(ad.value_of(e))
        if es[-2:] != (n, s.out_dim):
            raise DimensionError(f"eps block shape {es} does not end with ({n}, {s.out_dim})")
    prepared = prepared or prepare(state)
    ushape = np.shape(ad.value_of(u))
    blocks = unflatten(specs, u)
    if len(ushape) == 2:
        # (K, M, D) -> (K, 1, M, D): broadcast against the S axis of eps
        blocks = [ad.reshape(b, (ushape[0], 1) + np.shape(ad.value_of(b))[1:]) for b in blocks]
    return _propagate(state, prepared, x, blocks, eps)


# ---------------------------------------------------------------------------
# densities and scores


def log_prior(state, u, prepared=None):
    """Sum over layers and output dims of ``log N(U_ld | 0, K_zz)``.

    Returns a scalar for a single flat sample, a ``(K,)`` vector for a batch.
    """
    prepared = prepared or prepare(state)
    ub, single = _batched(u)
    blocks = unflatten(state.specs, ub)
    total = None
    for i, (s, b) in enumerate(zip(state.specs, blocks)):
        kzz, factor = prepared.kzz[i], prepared.factors[i]
        alpha = _solve_inducing(kzz, factor, b)
        quad = ad.sum(ad.mul(b, alpha), (-2, -1))
        ld = ad.logdet(kzz, factor) if isinstance(kzz, ad.Var) else factor.logdet()
        term = ad.sub(ad.mul(quad, -0.5), ad.mul(ld, 0.5 * s.out_dim))
        term = ad.sub(term, 0.5 * s.size * LOG_2PI)
        total = term if total is None else ad.add(total, term)
    return ad.reshape(total, ()) if single else total


def prior_score(state, u, prepared=None):
    """``-K_zz^{-1} U_ld`` per block, in the flat layout (constant arrays)."""
    prepared = prepared or prepare(state)
    u = np.asarray(ad.value_of(u), dtype=float)
    blocks = unflatten(state.specs, u)
    sol = [-T.as_tensor(_solve_inducing(None, f, b)) for f, b in zip(prepared.factors, blocks)]
    return np.asarray(flatten(state.specs, sol))


@dataclass
class Minibatch:
    x: np.ndarray
    y: np.ndarray
    full_size: int

    def __post_init__(self):
        if np.ndim(self.x) != 2 or np.ndim(self.y) != 2:
            raise DimensionError("minibatch x and y must be 2-D")
        if self.x.shape[0] != self.y.shape[0]:
            raise DimensionError(f"x has {self.x.shape[0]} rows but y has {self.y.shape[0]}")
        if self.x.shape[0] > self.full_size:
            raise InputError("batch larger than the full dataset")

    @property
    def size(self):
        return self.x.shape[0]


def sample_minibatch(x, y, batch_size, rng):
    """Rows drawn without replacement; the full set when ``batch_size >= N``."""
    n = x.shape[0]
    if batch_size >= n:
        return Minibatch(x, y, n)
    idx = np.sort(rng.choice(n, size=batch_size, replace=False))
    return Minibatch(x[idx], y[idx], n)


def _check_S(S):
    if int(S) < 1:
        raise InputError(f"need at least one likelihood sample, got S={S}")
    return int(S)


def gaussian_loglik(state, y, f):
    """``log N(y | f, sigma^2 I)`` summed over the last two axes."""
    b, d = np.shape(y)
    resid = ad.sub(y, f)
    sq = ad.sum(ad.mul(resid, resid), (-2, -1))
    inv = ad.exp(ad.neg(state.log_noise))
    return ad.sub(ad.mul(ad.mul(sq, inv), -0.5),
                  ad.mul(ad.add(state.log_noise, LOG_2PI), 0.5 * b * d))


def log_lik_mc(state, batch, u, S=None, rng=None, eps=None, prepared=None):
    """``(N/B) [log sum_s p(y | F_s) - log S]`` over S reparameterized draws.

    Pass either ``S`` and ``rng`` or explicit ``eps`` blocks shaped
    ``(S, B, D_l)`` (single sample) or ``(K, S, B, D_l)`` (batch).
    Returns a scalar or a ``(K,)`` vector matching ``u``.
    """
    ub, single = _batched(u)
    k = np.shape(ad.value_of(ub))[0]
    if eps is None:
        S = _check_S(S)
        eps = draw_eps(state.specs, rng, batch.size, k, S)
    else:
        eps = [np.asarray(e) if not isinstance(e, ad.Var) else e for e in eps]
        if single and eps and np.ndim(ad.value_of(eps[0])) == 3:
            eps = [ad.reshape(e, (1,) + np.shape(ad.value_of(e))) for e in eps]
        S = _check_S(np.shape(ad.value_of(eps[0]))[1])
    f = forward_sample(state, batch.x, ub, eps, prepared)
    ll = gaussian_loglik(state, batch.y, f)
    out = ad.mul(ad.sub(ad.logsumexp(ll, 1), float(np.log(S))), batch.full_size / batch.size)
    return ad.reshape(out, ()) if single else out


def log_joint(state, batch, u, S=None, rng=None, eps=None, prepared=None):
    """``log p(U) + log_lik_mc``; differentiable in the hyperparameters."""
    prepared = prepared or prepare(state)
    return ad.add(log_prior(state, u, prepared), log_lik_mc(state, batch, u, S, rng, eps, prepared))


def _eps_rows(eps, sl):
    return [e[sl] for e in eps]


def lik_score(state, batch, u, eps, prepared=None, chunk=None):
    """Gradient of the summed ``log_lik_mc`` with respect to each row of ``u``."""
    prepared = prepared or prepare(state)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    k = u.shape[0]
    chunk = chunk or k
    out = np.empty_like(u)
    for a in range(0, k, chunk):
        sl = slice(a, min(a + chunk, k))
        with ad.Tape() as tape:
            uv = tape.var(u[sl])
            ll = ad.sum(log_lik_mc(state, batch, uv, eps=_eps_rows(eps, sl), prepared=prepared))
            out[sl] = ad.backward(ll, [uv])[0]
    return out


def posterior_score(state, batch, u, S=None, rng=None, eps=None, prepared=None, chunk=None):
    """Estimated ``grad_U log p(U | y)``: prior score plus the MC likelihood gradient.

    ``u`` may be one flat sample or a ``(K, D_total)`` batch; the result
    has the same shape.
    """
    prepared = prepared or prepare(state)
    uarr = np.asarray(ad.value_of(u), dtype=float)
    single = uarr.ndim == 1
    ub = np.atleast_2d(uarr)
    if eps is None:
        S = _check_S(S)
        eps = draw_eps(state.specs, rng, batch.size, ub.shape[0], S)
    elif single and np.ndim(eps[0]) == 3:
        eps = [e[None] for e in eps]
    score = prior_score(state, ub, prepared) + lik_score(state, batch, ub, eps, prepared, chunk)
    return score[0] if single else score


def score_and_hvp(state, batch, u, c, eps, prepared=None, chunk=None):
    """Posterior score at each row of ``u`` and the Hessian applied to ``c``.

    Both are estimated with the same fixed ``eps``, so ``hvp`` is the exact
    Hessian-vector product of the function whose gradient is ``score``.
    """
    prepared = prepared or prepare(state)
    u = np.atleast_2d(np.asarray(u, dtype=float))
    c = np.atleast_2d(np.asarray(c, dtype=float))
    if c.shape != u.shape:
        raise DimensionError(f"direction shape {c.shape} != sample shape {u.shape}")
    k = u.shape[0]
    chunk = chunk or k
    score = prior_score(state, u, prepared)
    hvp = prior_score(state, c, prepared)
    for a in range(0, k, chunk):
        sl = slice(a, min(a + chunk, k))
        with ad.Tape() as tape:
            uv = tape.var(u[sl])
            ll = ad.sum(log_lik_mc(state, batch, uv, eps=_eps_rows(eps, sl), prepared=prepared))
            g = ad.backward(ll, [uv], retain=True)[0]
            score[sl] += ad.value_of(g)
            if isinstance(g, ad.Var):
                hvp[sl] += ad.backward(ad.sum(ad.mul(g, c[sl])), [uv])[0]
    return score, hvp


def predict_f(state, x, u, eps, prepared=None):
    """Final-layer draws at ``x`` for a batch of samples (constant arrays)."""
    return np.asarray(ad.value_of(forward_sample(state, x, u, eps, prepared)))


def taped_posterior_score(state, batch, u, eps, prepared=None):
    """Posterior score as a Var of ``u`` (a Var), kept on the tape.

    The likelihood gradient comes from a retained backward pass, so the
    result can be differentiated again with respect to ``u`` or anything
    upstream of it. Cost grows with the whole batch; see
    :func:`score_and_hvp` for the chunked equivalent used in training.
    """
    prepared = prepared or prepare(state)
    ub, single = _batched(u)
    blocks = unflatten(state.specs, ub)
    prior = flatten(state.specs, [ad.neg(_solve_inducing(None, f, b)) for f, b in zip(prepared.factors, blocks)])
    if single and np.ndim(ad.value_of(eps[0])) == 3:
        eps = [e[None] for e in eps]
    ll = ad.sum(log_lik_mc(state, batch, ub, eps=eps, prepared=prepared))
    g = ad.backward(ll, [ub], retain=True)[0]
    out = ad.add(prior, g)
    return ad.reshape(out, np.shape(ad.value_of(u))) if single else out
