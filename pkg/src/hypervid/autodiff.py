"""Reverse-mode automatic differentiation over dense float64 arrays.

Every primitive accepts either a :class:`Tensor` or a plain numpy array.
Plain-array inputs take a fast path that returns a plain array with the
same clamping semantics, so the geometry routines can serve both the
differentiable model graph and ordinary numerical code.

Conventions baked into the primitives:

* arcosh / arcsin / arccos inputs are clamped into their open domains by
  ``DOMAIN_EPS`` before evaluation; gradients pass straight through inside
  the clamp and are zero outside.
* any primitive producing a non-finite value raises
  :class:`~hypervid.errors.NumericalError` naming the primitive.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError, DimensionError, NumericalError

DOMAIN_EPS = 1e-7

_grad_enabled = True


class no_grad:
    """Context manager that suspends graph recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        raise NumericalError(f"non-finite output in primitive '{op}'")


_monitor = None


class boundary_monitor:
    """Collects the smallest distance of any clamp/max input to its
    non-smooth boundary during the enclosed forward passes. Used by the
    gradient-check suite to reject draws too close to a kink."""

    def __init__(self):
        self.min_margin = np.inf

    def _report(self, value):
        if value < self.min_margin:
            self.min_margin = float(value)

    def __enter__(self):
        global _monitor
        self._prev = _monitor
        _monitor = self
        return self

    def __exit__(self, *exc):
        global _monitor
        _monitor = self._prev
        return False


class Tensor:
    """A float64 array node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the module-level functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return powi(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)

    def max(self, axis=None, keepdims=False):
        return max_(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)


def tensor(data, requires_grad=False):
    return Tensor(data, requires_grad=requires_grad)


def _data(x):
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x, dtype=np.float64)


def _result(data, parents, op):
    """Wrap a forward value, linking only Tensor parents."""
    _check_finite(data, op)
    out = Tensor(data)
    tparents = tuple(p for p in parents if isinstance(p, Tensor))
    if _grad_enabled and any(p.requires_grad for p in tparents):
        out.requires_grad = True
        out._parents = tparents
    return out


def _unbroadcast(g, shape):
    """Sum a gradient over axes that were broadcast in the forward pass."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _any_tensor(*xs):
    return any(isinstance(x, Tensor) for x in xs)


# ---------------------------------------------------------------------------
# elementwise binary primitives

def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd
    if not _any_tensor(a, b):
        _check_finite(out, "add")
        return out
    t = _result(out, (a, b), "add")
    if t.requires_grad:
        def _bw():
            if isinstance(a, Tensor) and a.requires_grad:
                a._accum(_unbroadcast(t.grad, ad.shape))
            if isinstance(b, Tensor) and b.requires_grad:
                b._accum(_unbroadcast(t.grad, bd.shape))
        t._backward_fn = _bw
    return t


def sub(a, b):
    ad, bd = _data(a), _data(b)
    out = ad - bd
    if not _any_tensor(a, b):
        _check_finite(out, "sub")
        return out
    t = _result(out, (a, b), "sub")
    if t.requires_grad:
        def _bw():
            if isinstance(a, Tensor) and a.requires_grad:
                a._accum(_unbroadcast(t.grad, ad.shape))
            if isinstance(b, Tensor) and b.requires_grad:
                b._accum(_unbroadcast(-t.grad, bd.shape))
        t._backward_fn = _bw
    return t


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd
    if not _any_tensor(a, b):
        _check_finite(out, "mul")
        return out
    t = _result(out, (a, b), "mul")
    if t.requires_grad:
        def _bw():
            if isinstance(a, Tensor) and a.requires_grad:
                a._accum(_unbroadcast(t.grad * bd, ad.shape))
            if isinstance(b, Tensor) and b.requires_grad:
                b._accum(_unbroadcast(t.grad * ad, bd.shape))
        t._backward_fn = _bw
    return t


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = ad / bd
    if not _any_tensor(a, b):
        _check_finite(out, "div")
        return out
    t = _result(out, (a, b), "div")
    if t.requires_grad:
        def _bw():
            if isinstance(a, Tensor) and a.requires_grad:
                a._accum(_unbroadcast(t.grad / bd, ad.shape))
            if isinstance(b, Tensor) and b.requires_grad:
                b._accum(_unbroadcast(-t.grad * ad / (bd * bd), bd.shape))
        t._backward_fn = _bw
    return t


def powi(x, p):
    p = float(p)
    xd = _data(x)
    out = xd ** p
    if not isinstance(x, Tensor):
        _check_finite(out, "pow")
        return out
    t = _result(out, (x,), "pow")
    if t.requires_grad:
        def _bw():
            x._accum(t.grad * p * xd ** (p - 1.0))
        t._backward_fn = _bw
    return t


# ---------------------------------------------------------------------------
# elementwise unary primitives

def _unary(x, op, fwd, dfn):
    xd = _data(x)
    out = fwd(xd)
    if not isinstance(x, Tensor):
        _check_finite(out, op)
        return out
    t = _result(out, (x,), op)
    if t.requires_grad:
        def _bw():
            x._accum(t.grad * dfn(xd, out))
        t._backward_fn = _bw
    return t


def exp(x):
    return _unary(x, "exp", np.exp, lambda xd, od: od)


def log(x):
    return _unary(x, "log", np.log, lambda xd, od: 1.0 / xd)


def sqrt(x):
    return _unary(x, "sqrt", np.sqrt, lambda xd, od: 0.5 / np.maximum(od, 1e-300))


def cosh(x):
    return _unary(x, "cosh", np.cosh, lambda xd, od: np.sinh(xd))


def sinh(x):
    return _unary(x, "sinh", np.sinh, lambda xd, od: np.cosh(xd))


def absolute(x):
    return _unary(x, "abs", np.abs, lambda xd, od: np.sign(xd))


def arcosh(x):
    """arcosh with the input clamped to [1 + DOMAIN_EPS, inf)."""
    def fwd(xd):
        if _monitor is not None:
            _monitor._report(np.min(np.abs(xd - (1.0 + DOMAIN_EPS))))
        return np.arccosh(np.maximum(xd, 1.0 + DOMAIN_EPS))

    def dfn(xd, od):
        inside = xd >= 1.0 + DOMAIN_EPS
        c = np.maximum(xd, 1.0 + DOMAIN_EPS)
        return inside / np.sqrt(c * c - 1.0)

    return _unary(x, "arcosh", fwd, dfn)


def arcsin(x):
    def fwd(xd):
        if _monitor is not None:
            _monitor._report(np.min(np.abs(np.abs(xd) - (1.0 - DOMAIN_EPS))))
        return np.arcsin(np.clip(xd, -1.0 + DOMAIN_EPS, 1.0 - DOMAIN_EPS))

    def dfn(xd, od):
        inside = np.abs(xd) <= 1.0 - DOMAIN_EPS
        c = np.clip(xd, -1.0 + DOMAIN_EPS, 1.0 - DOMAIN_EPS)
        return inside / np.sqrt(1.0 - c * c)

    return _unary(x, "arcsin", fwd, dfn)


def arccos(x):
    def fwd(xd):
        if _monitor is not None:
            _monitor._report(np.min(np.abs(np.abs(xd) - (1.0 - DOMAIN_EPS))))
        return np.arccos(np.clip(xd, -1.0 + DOMAIN_EPS, 1.0 - DOMAIN_EPS))

    def dfn(xd, od):
        inside = np.abs(xd) <= 1.0 - DOMAIN_EPS
        c = np.clip(xd, -1.0 + DOMAIN_EPS, 1.0 - DOMAIN_EPS)
        return -(inside / np.sqrt(1.0 - c * c))

    return _unary(x, "arccos", fwd, dfn)


def _sigmoid(xd):
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    return _unary(x, "softplus", lambda xd: np.logaddexp(0.0, xd),
                  lambda xd, od: _sigmoid(np.asarray(xd, dtype=np.float64)))


def clamp(x, min=None, max=None):
    """Clip values; gradient is straight-through inside the bounds, zero outside."""
    xd = _data(x)
    if _monitor is not None:
        if min is not None:
            _monitor._report(np.min(np.abs(xd - min)))
        if max is not None:
            _monitor._report(np.min(np.abs(xd - max)))
    out = np.clip(xd, min, max)
    if not isinstance(x, Tensor):
        _check_finite(out, "clamp")
        return out
    t = _result(out, (x,), "clamp")
    if t.requires_grad:
        inside = np.ones_like(xd, dtype=bool)
        if min is not None:
            inside &= xd >= min
        if max is not None:
            inside &= xd <= max

        def _bw():
            x._accum(t.grad * inside)
        t._backward_fn = _bw
    return t


def relu(x):
    return clamp(x, min=0.0)


# ---------------------------------------------------------------------------
# shape / linear-algebra primitives

def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise DimensionError("matmul expects operands with at least 2 dimensions")
    if ad.shape[-1] != bd.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")
    out = ad @ bd
    if not _any_tensor(a, b):
        _check_finite(out, "matmul")
        return out
    t = _result(out, (a, b), "matmul")
    if t.requires_grad:
        def _bw():
            if isinstance(a, Tensor) and a.requires_grad:
                a._accum(_unbroadcast(t.grad @ bd.swapaxes(-1, -2), ad.shape))
            if isinstance(b, Tensor) and b.requires_grad:
                b._accum(_unbroadcast(ad.swapaxes(-1, -2) @ t.grad, bd.shape))
        t._backward_fn = _bw
    return t


def swapaxes(x, a, b):
    xd = _data(x)
    out = xd.swapaxes(a, b)
    if not isinstance(x, Tensor):
        return out
    t = _result(out, (x,), "swapaxes")
    if t.requires_grad:
        def _bw():
            x._accum(t.grad.swapaxes(a, b))
        t._backward_fn = _bw
    return t


def reshape(x, shape):
    xd = _data(x)
    out = xd.reshape(shape)
    if not isinstance(x, Tensor):
        return out
    t = _result(out, (x,), "reshape")
    if t.requires_grad:
        def _bw():
            x._accum(t.grad.reshape(xd.shape))
        t._backward_fn = _bw
    return t


def take(x, key):
    """Basic slicing/indexing (no repeated advanced indices)."""
    xd = _data(x)
    out = xd[key]
    if not isinstance(x, Tensor):
        return out
    t = _result(np.array(out), (x,), "take")
    if t.requires_grad:
        def _bw():
            g = np.zeros_like(xd)
            g[key] += t.grad
            x._accum(g)
        t._backward_fn = _bw
    return t


def concat(xs, axis=0):
    datas = [_data(x) for x in xs]
    out = np.concatenate(datas, axis=axis)
    if not _any_tensor(*xs):
        _check_finite(out, "concat")
        return out
    t = _result(out, tuple(xs), "concat")
    if t.requires_grad:
        sizes = [d.shape[axis] for d in datas]
        offsets = np.cumsum([0] + sizes)

        def _bw():
            for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
                if isinstance(x, Tensor) and x.requires_grad:
                    idx = [slice(None)] * t.grad.ndim
                    idx[axis] = slice(lo, hi)
                    x._accum(t.grad[tuple(idx)])
        t._backward_fn = _bw
    return t


# ---------------------------------------------------------------------------
# reductions

def _axis_tuple(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        return (axis % ndim,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    xd = _data(x)
    out = xd.sum(axis=axis, keepdims=keepdims)
    if not isinstance(x, Tensor):
        _check_finite(out, "sum")
        return out
    t = _result(out, (x,), "sum")
    if t.requires_grad:
        axes = _axis_tuple(axis, xd.ndim)

        def _bw():
            g = t.grad
            if not keepdims:
                g = np.expand_dims(g, axes)
            x._accum(np.broadcast_to(g, xd.shape))
        t._backward_fn = _bw
    return t


def mean(x, axis=None, keepdims=False):
    xd = _data(x)
    axes = _axis_tuple(axis, xd.ndim)
    count = 1
    for a in axes:
        count *= xd.shape[a]
    return div(sum_(x, axis=axis, keepdims=keepdims), float(count))


def max_(x, axis=None, keepdims=False):
    """Maximum along one axis (or all); ties send the gradient to the first hit."""
    xd = _data(x)
    if axis is None:
        flat = reshape(x, (-1,)) if isinstance(x, Tensor) else xd.reshape(-1)
        out = max_(flat, axis=0, keepdims=False)
        return out
    axis = axis % xd.ndim
    if _monitor is not None and xd.shape[axis] >= 2:
        top2 = np.partition(xd, xd.shape[axis] - 2, axis=axis)
        gap = np.take(top2, -1, axis=axis) - np.take(top2, -2, axis=axis)
        _monitor._report(np.min(gap))
    idx = np.expand_dims(np.argmax(xd, axis=axis), axis)
    out = np.take_along_axis(xd, idx, axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)
    if not isinstance(x, Tensor):
        _check_finite(out, "max")
        return out
    t = _result(out, (x,), "max")
    if t.requires_grad:
        def _bw():
            g = t.grad if keepdims else np.expand_dims(t.grad, axis)
            gx = np.zeros_like(xd)
            np.put_along_axis(gx, idx, g, axis=axis)
            x._accum(gx)
        t._backward_fn = _bw
    return t


def softmax(x, axis=-1):
    xd = _data(x)
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if not isinstance(x, Tensor):
        _check_finite(out, "softmax")
        return out
    t = _result(out, (x,), "softmax")
    if t.requires_grad:
        def _bw():
            s = t.data
            g = t.grad
            x._accum(s * (g - (g * s).sum(axis=axis, keepdims=True)))
        t._backward_fn = _bw
    return t


def l2norm(x, axis=-1, keepdims=False):
    """Euclidean norm along an axis, safe to differentiate at zero."""
    return sqrt(sum_(mul(x, x), axis=axis, keepdims=keepdims) + 1e-30)


# ---------------------------------------------------------------------------
# graph execution

def backward(loss):
    """Accumulate adjoints of `loss` into every reachable requires_grad tensor."""
    if not isinstance(loss, Tensor):
        raise ArgumentError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ArgumentError("backward expects a scalar loss")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward_fn is not None:
            node._backward_fn()


def zero_grad(params):
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """Adam accumulators; moment shapes mirror their parameters."""

    lr: float = 2.5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state):
    """One Adam update with bias correction; parameters mutate in place."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape "
                                 f"{p.data.shape} for '{name}'")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# ---------------------------------------------------------------------------
# verification oracle

def finite_diff_check(f, params, h=1e-5, max_coords=None, rng=None):
    """Compare analytic gradients of ``f()`` against central differences.

    ``f`` must be a no-argument callable returning a scalar Tensor whose
    graph reaches ``params``. Returns the maximum relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`` over the
    checked coordinates. ``max_coords`` limits the number of coordinates
    probed per parameter (all coordinates when None).
    """
    if h <= 0:
        raise ArgumentError("h must be positive")
    plist = list(params.items()) if isinstance(params, dict) else list(enumerate(params))
    zero_grad(dict(plist))
    loss = f()
    backward(loss)
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in plist}
    worst = 0.0
    for k, p in plist:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        aflat = analytic[k].reshape(-1)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                fp = float(f().data)
                flat[i] = orig - h
                fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = aflat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
