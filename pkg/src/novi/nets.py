"""Multilayer perceptrons for the generator and the discriminator.

Weights are stored as ``(out, in)`` matrices and inputs as rows, so a
layer computes ``h @ W.T + b``. Parameters are kept in a flat
name -> array mapping; the same mapping may hold autodiff Vars when a
forward pass has to be differentiated.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .errors import DimensionError, InputError

TANH = "tanh"
PRELU = "prelu"
SIGMOID = "sigmoid"
ACTIVATIONS = (TANH, PRELU, SIGMOID)
PRELU_INIT = 0.25

_ALIASES = {
    "tanh": TANH,
    "prelu": PRELU,
    "piecewiselinearlearnable": PRELU,
    "piecewise_linear_learnable": PRELU,
    "sigmoid": SIGMOID,
}


def canonical_activation(name):
    key = str(name).strip().lower()
    if key not in _ALIASES:
        raise InputError(f"unknown activation {name!r}; expected one of {ACTIVATIONS}")
    return _ALIASES[key]


@dataclass
class MlpParams:
    widths: List[int]
    activation: str
    params: Dict[str, object] = field(default_factory=dict)

    @property
    def num_layers(self):
        return len(self.widths) - 1

    def names(self):
        out = []
        for i in range(self.num_layers):
            out += [f"w{i}", f"b{i}"]
            if self.activation == PRELU and i < self.num_layers - 1:
                out.append(f"a{i}")
        return out

    def arrays(self):
        return {k: np.array(ad.value_of(self.params[k]), dtype=float) for k in self.names()}

    def with_params(self, params):
        return MlpParams(list(self.widths), self.activation, dict(params))

    def taped(self, tape):
        """Copy whose parameters are leaf Vars on ``tape``; returns (copy, leaves)."""
        leaves = {k: tape.var(v) for k, v in self.arrays().items()}
        return self.with_params(leaves), leaves


@dataclass(frozen=True)
class GeneratorSpec:
    noise_dim: int = 200
    out_dim: int = 1
    output_clamp: Optional[float] = 10.0

    def __post_init__(self):
        if self.noise_dim < 1 or self.out_dim < 1:
            raise InputError("generator dimensions must be positive")
        if self.output_clamp is not None and not self.output_clamp > 0:
            raise InputError("output_clamp must be positive when set")


def init_mlp(widths, activation, rng):
    """Glorot-uniform weights, zero biases, PReLU slopes at 0.25."""
    widths = [int(w) for w in widths]
    if len(widths) < 2 or any(w < 1 for w in widths):
        raise InputError(f"need at least input and output widths, all positive; got {widths}")
    activation = canonical_activation(activation)
    params = {}
    for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
        bound = np.sqrt(6.0 / (fi + fo))
        params[f"w{i}"] = rng.uniform(-bound, bound, size=(fo, fi))
        params[f"b{i}"] = np.zeros(fo)
        if activation == PRELU and i < len(widths) - 2:
            params[f"a{i}"] = np.asarray(PRELU_INIT)
    return MlpParams(widths, activation, params)


def _act(kind, h, slope):
    if kind == TANH:
        return ad.tanh(h)
    if kind == SIGMOID:
        return ad.sigmoid(h)
    return ad.prelu(h, slope)


def mlp_forward(net, x):
    shape = np.shape(ad.value_of(x))
    if len(shape) != 2 or shape[1] != net.widths[0]:
        raise DimensionError(f"network expects input (n, {net.widths[0]}), got {shape}")
    p = net.params
    h = x
    last = net.num_layers - 1
    for i in range(net.num_layers):
        h = ad.add(ad.matmul(h, ad.swap_last(p[f"w{i}"])), p[f"b{i}"])
        if i < last:
            h = _act(net.activation, h, p.get(f"a{i}"))
    return h


def clamp(x, c):
    """Smooth symmetric bound ``c * tanh(x / c)``."""
    return ad.mul(ad.tanh(ad.mul(x, 1.0 / c)), c)


def generator_forward(spec, net, eps):
    """Inducing samples ``(K, D_total)`` from noise ``(K, noise_dim)``."""
    shape = np.shape(ad.value_of(eps))
    if len(shape) != 2 or shape[1] != spec.noise_dim:
        raise DimensionError(f"generator expects noise (K, {spec.noise_dim}), got {shape}")
    if net.widths[0] != spec.noise_dim or net.widths[-1] != spec.out_dim:
        raise DimensionError(f"generator widths {net.widths} do not map {spec.noise_dim} -> {spec.out_dim}")
    out = mlp_forward(net, eps)
    if spec.output_clamp is not None:
        out = clamp(out, float(spec.output_clamp))
    return out


def discriminator_forward(net, u):
    """Vector field ``phi(u)`` of the same width as ``u``."""
    shape = np.shape(ad.value_of(u))
    if len(shape) != 2 or shape[1] != net.widths[0]:
        raise DimensionError(f"discriminator expects (K, {net.widths[0]}), got {shape}")
    if net.widths[-1] != net.widths[0]:
        raise DimensionError("discriminator output width must equal its input width")
    return mlp_forward(net, u)


def default_widths(d_in, d_out, hidden=256, depth=3):
    """Widths of a ``depth``-affine-layer network."""
    if depth < 1:
        raise InputError("depth must be at least 1")
    return [d_in] + [hidden] * (depth - 1) + [d_out]
