"""Tape-based reverse-mode automatic differentiation.

Every operation on a :class:`Var` appends one node to the Var's
:class:`Tape`. Node ids grow monotonically, so the tape order is a
topological order and :func:`backward` is a single reverse sweep.

Adjoint rules are written with the same primitive functions that build the
forward graph. With ``retain=True`` the rules receive the parent Vars and
therefore record the adjoint computation on the tape, which makes
gradients differentiable again (Hessian-vector products, gradients of
scores). With ``retain=False`` the rules receive plain arrays and run as
ordinary numpy code.

:func:`jvp` pushes tangents forward through an already-recorded
sub-graph; the tangent computation is itself recorded, so a JVP can be
reverse-differentiated (forward-over-reverse).

Operations whose inputs are all constants (arrays, or Vars that do not
require gradients) return plain arrays and leave no trace on the tape.
"""

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError

__all__ = [
    "Tape", "Var", "backward", "grad", "jvp", "value_of", "stop_gradient",
    "add", "sub", "mul", "div", "neg", "power", "exp", "log", "sqrt", "tanh",
    "sigmoid", "prelu", "maximum", "matmul", "transpose", "swap_last", "reshape",
    "getitem", "concatenate", "sum", "logsumexp", "broadcast_to", "sum_to",
    "pairwise_sqdist", "tri_solve", "cho_solve", "logdet",
]


class Tape:
    """Ordered record of primitive applications."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.release()
        return False

    def release(self):
        """Drop all recorded nodes (Vars and tape form a reference cycle)."""
        self.nodes.clear()

    def var(self, value, requires_grad=True):
        """Create a leaf Var holding ``value``."""
        v = Var(T.as_tensor(value).copy(), self, None, (), None, requires_grad)
        return v

    def _record(self, op, value, parents, ctx):
        return Var(value, self, op, parents, ctx, True)


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "node_id", "op", "parents", "ctx", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, value, tape, op, parents, ctx, requires_grad):
        value = np.asarray(value, dtype=np.float64)
        value.flags.writeable = False
        self.value = value
        self.tape = tape
        self.op = op
        self.parents = parents
        self.ctx = ctx
        self.requires_grad = requires_grad
        self.node_id = len(tape.nodes)
        tape.nodes.append(self)

    def __repr__(self):
        return f"Var(id={self.node_id}, op={self.op.name if self.op else 'leaf'}, shape={self.shape})"

    # numpy must not silently consume Vars
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        raise ContractError(f"unsupported primitive: numpy ufunc {ufunc.__name__!r} on a Var")

    def __array_function__(self, func, types, args, kwargs):
        raise ContractError(f"unsupported primitive: numpy function {func.__name__!r} on a Var")

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def size(self):
        return self.value.size

    @property
    def T(self):
        return swap_last(self)

    def __float__(self):
        return float(self.value)

    def __len__(self):
        return self.value.shape[0]

    def __add__(self, o):
        return add(self, o)

    def __radd__(self, o):
        return add(o, self)

    def __sub__(self, o):
        return sub(self, o)

    def __rsub__(self, o):
        return sub(o, self)

    def __mul__(self, o):
        return mul(self, o)

    def __rmul__(self, o):
        return mul(o, self)

    def __truediv__(self, o):
        return div(self, o)

    def __rtruediv__(self, o):
        return div(o, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return power(self, c)

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def value_of(x):
    return x.value if isinstance(x, Var) else x


def stop_gradient(x):
    """Detach: the value as a constant array."""
    return np.array(value_of(x))


# ---------------------------------------------------------------------------
# primitive machinery


class Primitive:
    __slots__ = ("name", "fwd", "vjp", "jvp")

    def __init__(self, name, fwd, vjp, jvp):
        self.name = name
        self.fwd = fwd
        self.vjp = vjp
        self.jvp = jvp


def _apply(prim, args, ctx=None):
    tape = None
    need = False
    vals = []
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ContractError(f"{prim.name}: operands live on different tapes")
            need = need or a.requires_grad
            vals.append(a.value)
        else:
            vals.append(a)
    out = prim.fwd(vals, ctx)
    if not need:
        return out
    return tape._record(prim, out, tuple(args), ctx)


def _shape(x):
    return np.shape(value_of(x))


def _unbroadcast(g, shape):
    if g is None or _shape(g) == tuple(shape):
        return g
    return sum_to(g, shape)


def _bcast(t, shape):
    if t is None or _shape(t) == tuple(shape):
        return t
    return broadcast_to(t, shape)


def _zeros_if_none(ts, args):
    return [t if t is not None else np.zeros(_shape(a)) for t, a in zip(ts, args)]


def _sum_to_np(x, shape):
    shape = tuple(shape)
    if x.shape == shape:
        return x
    lead = x.ndim - len(shape)
    axes = tuple(range(lead)) + tuple(i + lead for i, s in enumerate(shape) if s == 1 and x.shape[i + lead] != 1)
    out = np.sum(x, axis=axes, keepdims=True)
    return out.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _add_vjp(g, out, args, needs, ctx):
    a, b = args
    return (_unbroadcast(g, _shape(a)) if needs[0] else None,
            _unbroadcast(g, _shape(b)) if needs[1] else None)


def _add_jvp(ts, out, args, ctx):
    ta, tb = ts
    shape = _shape(out)
    if ta is None:
        return _bcast(tb, shape)
    if tb is None:
        return _bcast(ta, shape)
    return _bcast(add(ta, tb), shape)


_ADD = Primitive("add", lambda v, c: np.add(v[0], v[1]), _add_vjp, _add_jvp)


def add(a, b):
    return _apply(_ADD, (a, b))


def _sub_vjp(g, out, args, needs, ctx):
    a, b = args
    return (_unbroadcast(g, _shape(a)) if needs[0] else None,
            _unbroadcast(neg(g), _shape(b)) if needs[1] else None)


def _sub_jvp(ts, out, args, ctx):
    ta, tb = ts
    shape = _shape(out)
    if ta is None:
        return _bcast(neg(tb), shape)
    if tb is None:
        return _bcast(ta, shape)
    return _bcast(sub(ta, tb), shape)


_SUB = Primitive("sub", lambda v, c: np.subtract(v[0], v[1]), _sub_vjp, _sub_jvp)


def sub(a, b):
    return _apply(_SUB, (a, b))


def _mul_vjp(g, out, args, needs, ctx):
    a, b = args
    return (_unbroadcast(mul(g, b), _shape(a)) if needs[0] else None,
            _unbroadcast(mul(g, a), _shape(b)) if needs[1] else None)


def _mul_jvp(ts, out, args, ctx):
    a, b = args
    ta, tb = ts
    terms = []
    if ta is not None:
        terms.append(mul(ta, b))
    if tb is not None:
        terms.append(mul(a, tb))
    r = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
    return _bcast(r, _shape(out))


_MUL = Primitive("mul", lambda v, c: np.multiply(v[0], v[1]), _mul_vjp, _mul_jvp)


def mul(a, b):
    return _apply(_MUL, (a, b))


def _div_vjp(g, out, args, needs, ctx):
    a, b = args
    ga = _unbroadcast(div(g, b), _shape(a)) if needs[0] else None
    gb = _unbroadcast(neg(div(mul(g, out), b)), _shape(b)) if needs[1] else None
    return ga, gb


def _div_jvp(ts, out, args, ctx):
    a, b = args
    ta, tb = ts
    terms = []
    if ta is not None:
        terms.append(div(ta, b))
    if tb is not None:
        terms.append(neg(div(mul(out, tb), b)))
    r = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
    return _bcast(r, _shape(out))


_DIV = Primitive("div", lambda v, c: np.divide(v[0], v[1]), _div_vjp, _div_jvp)


def div(a, b):
    return _apply(_DIV, (a, b))


_NEG = Primitive(
    "neg",
    lambda v, c: np.negative(v[0]),
    lambda g, out, args, needs, ctx: (neg(g),),
    lambda ts, out, args, ctx: neg(ts[0]),
)


def neg(a):
    return _apply(_NEG, (a,))


def _pow_vjp(g, out, args, needs, ctx):
    c = ctx
    (x,) = args
    if c == 2:
        return (mul(g, mul(x, 2.0)),)
    return (mul(g, mul(power(x, c - 1), c)),)


def _pow_jvp(ts, out, args, ctx):
    c = ctx
    (x,) = args
    if c == 2:
        return mul(ts[0], mul(x, 2.0))
    return mul(ts[0], mul(power(x, c - 1), c))


_POW = Primitive("power", lambda v, c: np.power(v[0], c), _pow_vjp, _pow_jvp)


def power(x, c):
    """``x ** c`` for a constant scalar exponent."""
    if isinstance(c, Var) or np.ndim(c) != 0:
        raise ContractError("power supports constant scalar exponents only; use exp/log")
    c = float(c)
    if c == 1.0:
        return x
    return _apply(_POW, (x,), c)


_EXP = Primitive(
    "exp",
    lambda v, c: np.exp(v[0]),
    lambda g, out, args, needs, ctx: (mul(g, out),),
    lambda ts, out, args, ctx: mul(ts[0], out),
)


def exp(x):
    return _apply(_EXP, (x,))


_LOG = Primitive(
    "log",
    lambda v, c: np.log(v[0]),
    lambda g, out, args, needs, ctx: (div(g, args[0]),),
    lambda ts, out, args, ctx: div(ts[0], args[0]),
)


def log(x):
    return _apply(_LOG, (x,))


_TINY = 1e-150

_SQRT = Primitive(
    "sqrt",
    lambda v, c: np.sqrt(v[0]),
    lambda g, out, args, needs, ctx: (div(mul(g, 0.5), maximum(out, _TINY)),),
    lambda ts, out, args, ctx: div(mul(ts[0], 0.5), maximum(out, _TINY)),
)


def sqrt(x):
    """Square root; the derivative at 0 is capped rather than infinite."""
    return _apply(_SQRT, (x,))


_TANH = Primitive(
    "tanh",
    lambda v, c: np.tanh(v[0]),
    lambda g, out, args, needs, ctx: (mul(g, sub(1.0, mul(out, out))),),
    lambda ts, out, args, ctx: mul(ts[0], sub(1.0, mul(out, out))),
)


def tanh(x):
    return _apply(_TANH, (x,))


def _sigmoid_fwd(v, c):
    x = v[0]
    return np.exp(-np.logaddexp(0.0, -x))


_SIGMOID = Primitive(
    "sigmoid",
    _sigmoid_fwd,
    lambda g, out, args, needs, ctx: (mul(g, mul(out, sub(1.0, out))),),
    lambda ts, out, args, ctx: mul(ts[0], mul(out, sub(1.0, out))),
)


def sigmoid(x):
    return _apply(_SIGMOID, (x,))


def _prelu_fwd(v, c):
    x, a = v
    return np.where(x > 0, x, a * x)


def _prelu_vjp(g, out, args, needs, ctx):
    x, a = args
    pos = (value_of(x) > 0).astype(np.float64)
    negpart = 1.0 - pos
    gx = add(mul(g, pos), mul(mul(g, a), negpart)) if needs[0] else None
    ga = _unbroadcast(mul(g, mul(x, negpart)), _shape(a)) if needs[1] else None
    return gx, ga


def _prelu_jvp(ts, out, args, ctx):
    x, a = args
    tx, ta = ts
    pos = (value_of(x) > 0).astype(np.float64)
    negpart = 1.0 - pos
    terms = []
    if tx is not None:
        terms.append(add(mul(tx, pos), mul(mul(tx, a), negpart)))
    if ta is not None:
        terms.append(mul(ta, mul(x, negpart)))
    r = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
    return _bcast(r, _shape(out))


_PRELU = Primitive("prelu", _prelu_fwd, _prelu_vjp, _prelu_jvp)


def prelu(x, slope):
    """Piecewise-linear unit ``x if x > 0 else slope * x``."""
    return _apply(_PRELU, (x, slope))


def _max_mask(args, ctx):
    return (value_of(args[0]) > ctx).astype(np.float64)


_MAXIMUM = Primitive(
    "maximum",
    lambda v, c: np.maximum(v[0], c),
    lambda g, out, args, needs, ctx: (mul(g, _max_mask(args, ctx)),),
    lambda ts, out, args, ctx: mul(ts[0], _max_mask(args, ctx)),
)


def maximum(x, floor):
    """Elementwise ``max(x, floor)`` against a constant floor."""
    return _apply(_MAXIMUM, (x,), float(floor))


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def _swap_np(x):
    return np.swapaxes(x, -1, -2)


def _matmul_fwd(v, c):
    a, b = v
    if np.ndim(a) < 2 or np.ndim(b) < 2:
        raise ContractError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"inner extents differ: {a.shape} @ {b.shape}")
    return np.matmul(a, b)


def _matmul_vjp(g, out, args, needs, ctx):
    a, b = args
    ga = _unbroadcast(matmul(g, swap_last(b)), _shape(a)) if needs[0] else None
    gb = _unbroadcast(matmul(swap_last(a), g), _shape(b)) if needs[1] else None
    return ga, gb


def _matmul_jvp(ts, out, args, ctx):
    a, b = args
    ta, tb = ts
    terms = []
    if ta is not None:
        terms.append(matmul(ta, b))
    if tb is not None:
        terms.append(matmul(a, tb))
    r = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
    return _bcast(r, _shape(out))


_MATMUL = Primitive("matmul", _matmul_fwd, _matmul_vjp, _matmul_jvp)


def matmul(a, b):
    """Matrix product with numpy broadcasting over leading batch axes."""
    return _apply(_MATMUL, (a, b))


def _transpose_vjp(g, out, args, needs, ctx):
    inv = np.argsort(ctx)
    return (transpose(g, tuple(int(i) for i in inv)),)


_TRANSPOSE = Primitive(
    "transpose",
    lambda v, c: np.transpose(v[0], c),
    _transpose_vjp,
    lambda ts, out, args, ctx: transpose(ts[0], ctx),
)


def transpose(x, axes=None):
    nd = len(_shape(x))
    axes = tuple(range(nd))[::-1] if axes is None else tuple(int(a) % nd for a in axes)
    if axes == tuple(range(nd)):
        return x
    return _apply(_TRANSPOSE, (x,), axes)


def swap_last(x):
    nd = len(_shape(x))
    axes = list(range(nd))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, tuple(axes))


_RESHAPE = Primitive(
    "reshape",
    lambda v, c: np.reshape(v[0], c[1]),
    lambda g, out, args, needs, ctx: (reshape(g, ctx[0]),),
    lambda ts, out, args, ctx: reshape(ts[0], ctx[1]),
)


def reshape(x, shape):
    old = _shape(x)
    new = np.empty(old, dtype=np.int8).reshape(shape).shape if np.prod(old) else tuple(shape)
    if new == old:
        return x
    return _apply(_RESHAPE, (x,), (old, new))


def _scatter_fwd(v, c):
    idx, shape = c
    out = np.zeros(shape)
    np.add.at(out, idx, v[0])
    return out


_SCATTER = Primitive(
    "scatter",
    _scatter_fwd,
    lambda g, out, args, needs, ctx: (getitem(g, ctx[0]),),
    lambda ts, out, args, ctx: _scatter(ts[0], ctx[0], ctx[1]),
)


def _scatter(x, idx, shape):
    return _apply(_SCATTER, (x,), (idx, tuple(shape)))


_GETITEM = Primitive(
    "getitem",
    lambda v, c: np.array(v[0][c]),
    lambda g, out, args, needs, ctx: (_scatter(g, ctx, _shape(args[0])),),
    lambda ts, out, args, ctx: getitem(ts[0], ctx),
)


def getitem(x, idx):
    return _apply(_GETITEM, (x,), idx)


def _concat_vjp(g, out, args, needs, ctx):
    axis = ctx
    grads = []
    start = 0
    nd = len(_shape(out))
    for a, need in zip(args, needs):
        n = _shape(a)[axis]
        if need:
            sl = [slice(None)] * nd
            sl[axis] = slice(start, start + n)
            grads.append(getitem(g, tuple(sl)))
        else:
            grads.append(None)
        start += n
    return tuple(grads)


def _concat_jvp(ts, out, args, ctx):
    return concatenate(_zeros_if_none(ts, args), ctx)


_CONCAT = Primitive("concatenate", lambda v, c: np.concatenate(v, axis=c), _concat_vjp, _concat_jvp)


def concatenate(xs, axis=0):
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    axis = int(axis) % len(_shape(xs[0]))
    return _apply(_CONCAT, tuple(xs), axis)


def _sum_fwd(v, c):
    axis, keepdims = c
    return np.asarray(np.sum(v[0], axis=axis, keepdims=keepdims))


def _sum_vjp(g, out, args, needs, ctx):
    axis, keepdims = ctx
    shape = _shape(args[0])
    if axis is not None and not keepdims:
        kshape = list(shape)
        for ax in (axis if isinstance(axis, tuple) else (axis,)):
            kshape[ax % len(shape)] = 1
        g = reshape(g, tuple(kshape))
    return (broadcast_to(g, shape),)


_SUM = Primitive("sum", _sum_fwd, _sum_vjp, lambda ts, out, args, ctx: sum(ts[0], *ctx))


def sum(x, axis=None, keepdims=False):
    if isinstance(axis, list):
        axis = tuple(axis)
    return _apply(_SUM, (x,), (axis, keepdims))


def _lse_fwd(v, c):
    axis, keepdims = c
    x = v[0]
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    r = np.log(np.sum(np.exp(x - m), axis=axis, keepdims=True)) + m
    return r if keepdims else np.squeeze(r, axis=axis)


def _lse_softmax(out, args, ctx):
    axis, keepdims = ctx
    o = out if keepdims else reshape(out, _keep_shape(_shape(args[0]), axis))
    return exp(sub(args[0], o))


def _keep_shape(shape, axis):
    s = list(shape)
    s[axis % len(shape)] = 1
    return tuple(s)


def _lse_vjp(g, out, args, needs, ctx):
    axis, keepdims = ctx
    gk = g if keepdims else reshape(g, _keep_shape(_shape(args[0]), axis))
    return (mul(gk, _lse_softmax(out, args, ctx)),)


def _lse_jvp(ts, out, args, ctx):
    axis, keepdims = ctx
    return sum(mul(ts[0], _lse_softmax(out, args, ctx)), axis, keepdims)


_LSE = Primitive("logsumexp", _lse_fwd, _lse_vjp, _lse_jvp)


def logsumexp(x, axis=-1, keepdims=False):
    """Stable ``log(sum(exp(x), axis))`` over a single axis."""
    return _apply(_LSE, (x,), (int(axis), keepdims))


_BROADCAST = Primitive(
    "broadcast_to",
    lambda v, c: np.broadcast_to(v[0], c).copy(),
    lambda g, out, args, needs, ctx: (sum_to(g, _shape(args[0])),),
    lambda ts, out, args, ctx: broadcast_to(ts[0], ctx),
)


def broadcast_to(x, shape):
    shape = tuple(shape)
    if _shape(x) == shape:
        return x
    return _apply(_BROADCAST, (x,), shape)


_SUM_TO = Primitive(
    "sum_to",
    lambda v, c: _sum_to_np(np.asarray(v[0]), c),
    lambda g, out, args, needs, ctx: (broadcast_to(g, _shape(args[0])),),
    lambda ts, out, args, ctx: sum_to(ts[0], ctx),
)


def sum_to(x, shape):
    """Sum ``x`` down to ``shape`` (the adjoint of broadcasting)."""
    shape = tuple(shape)
    if _shape(x) == shape:
        return x
    return _apply(_SUM_TO, (x,), shape)


def _sqdist_fwd(v, c):
    return T.pairwise_sqdist(v[0], v[1])


def _sqdist_vjp(g, out, args, needs, ctx):
    x, z = args
    gx = gz = None
    if needs[0]:
        gx = mul(sub(mul(sum(g, 1, True), x), matmul(g, z)), 2.0)
    if needs[1]:
        gz = mul(sub(mul(reshape(sum(g, 0), (-1, 1)), z), matmul(swap_last(g), x)), 2.0)
    return gx, gz


def _sqdist_jvp(ts, out, args, ctx):
    x, z = args
    tx, tz = ts
    terms = []
    if tx is not None:
        terms.append(sub(sum(mul(x, tx), 1, True), matmul(tx, swap_last(z))))
    if tz is not None:
        terms.append(sub(reshape(sum(mul(z, tz), 1), (1, -1)), matmul(x, swap_last(tz))))
    r = terms[0] if len(terms) == 1 else add(terms[0], terms[1])
    return _bcast(mul(r, 2.0), _shape(out))


_SQDIST = Primitive("pairwise_sqdist", _sqdist_fwd, _sqdist_vjp, _sqdist_jvp)


def pairwise_sqdist(x, z):
    """Squared distances between rows of two 2-D operands."""
    return _apply(_SQDIST, (x, z))


def _flip(side):
    return "upper" if side == "lower" else "lower"


_TRI_SOLVE = Primitive(
    "tri_solve",
    lambda v, c: T.tri_solve(c[0], v[0], c[1]),
    lambda g, out, args, needs, ctx: (tri_solve(ctx[0], g, _flip(ctx[1])),),
    lambda ts, out, args, ctx: tri_solve(ctx[0], ts[0], ctx[1]),
)


def tri_solve(factor, b, side="lower"):
    """Triangular solve against a constant Cholesky factor."""
    return _apply(_TRI_SOLVE, (b,), (factor, side))


def _cho_fwd(v, c):
    return T.cho_solve(c, v[1])


def _outer_like(a, b):
    # a @ b^T for matrices, outer product for vectors
    if len(_shape(a)) == 1:
        return mul(reshape(a, (-1, 1)), reshape(b, (1, -1)))
    return matmul(a, swap_last(b))


def _cho_vjp(g, out, args, needs, ctx):
    k, b = args
    gb = cho_solve(k, g, ctx)
    gk = neg(_outer_like(gb, out)) if needs[0] else None
    return gk, (gb if needs[1] else None)


def _cho_jvp(ts, out, args, ctx):
    k, b = args
    tk, tb = ts
    rhs = tb
    if tk is not None:
        corr = matmul(tk, out) if len(_shape(out)) > 1 else reshape(matmul(tk, reshape(out, (-1, 1))), (-1,))
        rhs = neg(corr) if rhs is None else sub(rhs, corr)
    return cho_solve(k, rhs, ctx)


_CHO = Primitive("cho_solve", _cho_fwd, _cho_vjp, _cho_jvp)


def cho_solve(k, b, factor):
    """``K^{-1} b`` where ``factor`` is the (constant) Cholesky factor of ``K``.

    ``k`` only carries the dependency of K on upstream parameters; the
    adjoint uses ``d(K^{-1}) = -K^{-1} dK K^{-1}`` with the same factor.
    """
    return _apply(_CHO, (k, b), factor)


def _logdet_vjp(g, out, args, needs, ctx):
    (k,) = args
    kinv = T.cho_solve(ctx, np.eye(ctx.n))
    return (mul(g, kinv),)


def _logdet_jvp(ts, out, args, ctx):
    kinv = T.cho_solve(ctx, np.eye(ctx.n))
    return sum(mul(ts[0], kinv))


_LOGDET = Primitive("logdet", lambda v, c: np.asarray(c.logdet()), _logdet_vjp, _logdet_jvp)


def logdet(k, factor):
    """log det K from its constant factor; first-order differentiable in K."""
    return _apply(_LOGDET, (k,), factor)


PRIMITIVES = {p.name: p for p in (
    _ADD, _SUB, _MUL, _DIV, _NEG, _POW, _EXP, _LOG, _SQRT, _TANH, _SIGMOID, _PRELU,
    _MAXIMUM, _MATMUL, _TRANSPOSE, _RESHAPE, _SCATTER, _GETITEM, _CONCAT, _SUM, _LSE,
    _BROADCAST, _SUM_TO, _SQDIST, _TRI_SOLVE, _CHO, _LOGDET,
)}


# ---------------------------------------------------------------------------
# differentiation drivers


def _check_same_tape(vars_, tape, what):
    for v in vars_:
        if not isinstance(v, Var):
            raise ContractError(f"{what} must be Vars, got {type(v).__name__}")
        if v.tape is not tape:
            raise ContractError(f"{what}: Var {v.node_id} is not on the output's tape")


def backward(output, wrt, retain=False):
    """Gradients of scalar ``output`` with respect to each Var in ``wrt``.

    With ``retain=True`` the adjoint sweep is recorded on the tape and the
    returned gradients are Vars (or constant arrays when they do not depend
    on anything that requires gradients).
    """
    single = isinstance(wrt, Var)
    wrt = [wrt] if single else list(wrt)
    if not isinstance(output, Var):
        raise ContractError("backward needs a Var output")
    if output.value.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    tape = output.tape
    _check_same_tape(wrt, tape, "wrt")
    results = [None] * len(wrt)
    if not wrt:
        return results
    slots = {}
    for i, w in enumerate(wrt):
        slots.setdefault(w.node_id, []).append(i)
    lo = min(slots)
    nodes = tape.nodes
    grads = {output.node_id: np.ones(output.shape)}
    for nid in range(output.node_id, lo - 1, -1):
        g = grads.pop(nid, None)
        if g is None:
            continue
        node = nodes[nid]
        if nid in slots:
            for i in slots[nid]:
                results[i] = g
        if node.op is None:
            continue
        parents = node.parents
        needs = [isinstance(p, Var) and p.requires_grad and p.node_id >= lo for p in parents]
        if not any(needs):
            continue
        if retain:
            pg = node.op.vjp(g, node, parents, needs, node.ctx)
        else:
            args = [p.value if isinstance(p, Var) else p for p in parents]
            pg = node.op.vjp(value_of(g), node.value, args, needs, node.ctx)
        for p, need, gp in zip(parents, needs, pg):
            if not need or gp is None:
                continue
            prev = grads.get(p.node_id)
            grads[p.node_id] = gp if prev is None else add(prev, gp)
    for i, w in enumerate(wrt):
        if results[i] is None:
            results[i] = np.zeros(w.shape)
        elif not retain:
            results[i] = np.asarray(value_of(results[i]))
    return results[0] if single else results


grad = backward


def jvp(fn, inputs, tangents):
    """Evaluate ``fn(*inputs)`` and its directional derivative.

    Returns ``(output, tangent)``. The tangent is recorded on the tape, so
    it can be passed to :func:`backward` for forward-over-reverse
    derivatives. ``inputs`` must be Vars on one tape.
    """
    inputs = list(inputs)
    tangents = list(tangents)
    if len(inputs) != len(tangents):
        raise DimensionError("one tangent per input is required")
    if not inputs:
        raise ContractError("jvp needs at least one input")
    tape = inputs[0].tape
    _check_same_tape(inputs, tape, "inputs")
    for x, t in zip(inputs, tangents):
        if _shape(t) != x.shape:
            raise DimensionError(f"tangent shape {_shape(t)} does not match input shape {x.shape}")
    out = fn(*inputs)
    return out, push_tangents(out, inputs, tangents)


def push_tangents(out, inputs, tangents):
    """Forward-propagate tangents from ``inputs`` to the recorded ``out``."""
    if not isinstance(out, Var):
        return np.zeros(np.shape(out))
    tape = out.tape
    tan = {}
    for x, t in zip(inputs, tangents):
        tan[x.node_id] = t if isinstance(t, Var) else T.as_tensor(t)
    lo = min(tan)
    nodes = tape.nodes
    for nid in range(lo, out.node_id + 1):
        node = nodes[nid]
        if node.op is None or nid in tan:
            continue
        ts = [tan.get(p.node_id) if isinstance(p, Var) else None for p in node.parents]
        if all(t is None for t in ts):
            continue
        tan[nid] = node.op.jvp(ts, node, node.parents, node.ctx)
    return tan.get(out.node_id, np.zeros(out.shape))
