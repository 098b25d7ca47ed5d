"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A ``Var`` wraps a numpy array and remembers how it was produced; calling
``backward`` on a scalar output walks the recorded graph once in reverse
topological order and accumulates exact adjoints into every input that has
``requires_grad`` set.  The graph is rebuilt on every forward pass, so a
``Var`` can be reused freely across independent optimization iterations.

Only what the rest of the library needs is implemented: elementwise
arithmetic with broadcasting, matmul, reductions, softmax, same-padding
temporal convolution, endpoint-aligned linear resizing, and a handful of
nonlinearities.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ContractError, NumericsError, ShapeError


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NumericsError("non-finite values entering the graph")
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, (g, s) in enumerate(zip(grad.shape, shape)):
        if s == 1 and g != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Var:
    """Node in the differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward=None):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    # -- basic introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Var(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def detach(self) -> "Var":
        return Var(self.data)

    def zero_grad(self):
        self.grad = None

    # -- backward pass ------------------------------------------------------

    def backward(self):
        if self.data.size != 1:
            raise ContractError("backward requires a scalar output")
        order: list[Var] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def _accum(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), self.data.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    # -- operator sugar -----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, -_lift(other))

    def __rsub__(self, other):
        return add(_lift(other), -self)

    def __truediv__(self, other):
        other = _lift(other)
        return mul(self, power(other, -1.0))

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def constant(x) -> Var:
    return Var(x)


def parameter(x) -> Var:
    return Var(x, requires_grad=True)


# -- elementwise primitives -------------------------------------------------

def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.data + b.data, _parents=(a, b))

    def backward(g):
        a._accum(g)
        b._accum(g)

    out._backward = backward
    return out


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.data * b.data, _parents=(a, b))

    def backward(g):
        a._accum(g * b.data)
        b._accum(g * a.data)

    out._backward = backward
    return out


def power(a, exponent: float) -> Var:
    a = _lift(a)
    out = Var(a.data ** exponent, _parents=(a,))

    def backward(g):
        a._accum(g * exponent * a.data ** (exponent - 1.0))

    out._backward = backward
    return out


def exp(a) -> Var:
    a = _lift(a)
    val = np.exp(a.data)
    out = Var(val, _parents=(a,))

    def backward(g):
        a._accum(g * val)

    out._backward = backward
    return out


def log(a) -> Var:
    a = _lift(a)
    out = Var(np.log(a.data), _parents=(a,))

    def backward(g):
        a._accum(g / a.data)

    out._backward = backward
    return out


def tanh(a) -> Var:
    a = _lift(a)
    val = np.tanh(a.data)
    out = Var(val, _parents=(a,))

    def backward(g):
        a._accum(g * (1.0 - val * val))

    out._backward = backward
    return out


def relu(a) -> Var:
    """max(0, x) with subgradient 0 at the kink."""
    a = _lift(a)
    mask = a.data > 0.0
    out = Var(np.where(mask, a.data, 0.0), _parents=(a,))

    def backward(g):
        a._accum(g * mask)

    out._backward = backward
    return out


def minimum(a, b) -> Var:
    """Elementwise min; ties route the gradient to the first argument."""
    a, b = _lift(a), _lift(b)
    take_a = a.data <= b.data
    out = Var(np.where(take_a, a.data, b.data), _parents=(a, b))

    def backward(g):
        a._accum(g * take_a)
        b._accum(g * ~take_a)

    out._backward = backward
    return out


# -- shape manipulation -----------------------------------------------------

def reshape(a, shape) -> Var:
    a = _lift(a)
    out = Var(a.data.reshape(shape), _parents=(a,))

    def backward(g):
        a._accum(g.reshape(a.data.shape))

    out._backward = backward
    return out


def transpose(a, axes=None) -> Var:
    a = _lift(a)
    out = Var(a.data.transpose(axes), _parents=(a,))
    inverse = None if axes is None else np.argsort(axes)

    def backward(g):
        a._accum(g.transpose(inverse))

    out._backward = backward
    return out


def take(a, key) -> Var:
    """Basic/advanced indexing with scatter-add backward."""
    a = _lift(a)
    out = Var(a.data[key], _parents=(a,))

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, key, g)
        a._accum(full)

    out._backward = backward
    return out


def concat(vars_, axis: int = 0) -> Var:
    vars_ = [_lift(v) for v in vars_]
    out = Var(np.concatenate([v.data for v in vars_], axis=axis),
              _parents=tuple(vars_))
    sizes = [v.data.shape[axis] for v in vars_]

    def backward(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for v, piece in zip(vars_, pieces):
            v._accum(piece)

    out._backward = backward
    return out


def stack_rows(vars_) -> Var:
    return concat([reshape(v, (1,) + v.shape) for v in vars_], axis=0)


# -- reductions -------------------------------------------------------------

def sum_(a, axis=None, keepdims: bool = False) -> Var:
    a = _lift(a)
    out = Var(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape))

    out._backward = backward
    return out


def mean(a, axis=None, keepdims: bool = False) -> Var:
    a = _lift(a)
    count = a.data.size if axis is None else a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.data @ b.data, _parents=(a, b))

    def backward(g):
        if a.data.ndim == 2 and b.data.ndim == 2:
            a._accum(g @ b.data.T)
            b._accum(a.data.T @ g)
        elif a.data.ndim == 2 and b.data.ndim == 1:
            a._accum(np.outer(g, b.data))
            b._accum(a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 2:
            a._accum(b.data @ g)
            b._accum(np.outer(a.data, g))
        else:
            a._accum(g * b.data)
            b._accum(g * a.data)

    out._backward = backward
    return out


def softmax(a, axis: int = -1) -> Var:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    val = e / e.sum(axis=axis, keepdims=True)
    out = Var(val, _parents=(a,))

    def backward(g):
        dot = (g * val).sum(axis=axis, keepdims=True)
        a._accum(val * (g - dot))

    out._backward = backward
    return out


def log_softmax(a, axis: int = -1) -> Var:
    a = _lift(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    val = shifted - lse
    out = Var(val, _parents=(a,))

    def backward(g):
        a._accum(g - np.exp(val) * g.sum(axis=axis, keepdims=True))

    out._backward = backward
    return out


def masked_softmax(a, mask: np.ndarray) -> Var:
    """Row-wise softmax over the entries where ``mask`` is True; masked
    entries behave as if their logit were -inf (probability exactly 0)."""
    a = _lift(a)
    neg = np.where(mask, a.data, -np.inf)
    shifted = np.where(mask, neg - neg.max(axis=-1, keepdims=True), -np.inf)
    e = np.exp(shifted)
    val = e / e.sum(axis=-1, keepdims=True)
    out = Var(val, _parents=(a,))

    def backward(g):
        dot = (g * val).sum(axis=-1, keepdims=True)
        a._accum(val * (g - dot))

    out._backward = backward
    return out


# -- temporal kernels -------------------------------------------------------

def conv1d(x, kernel, bias=None) -> Var:
    """Same-padding (zero fill) temporal convolution.

    x: (L, c_in); kernel: (k, c_in, c_out) with odd k; bias: (c_out,).
    Output length equals input length.
    """
    x, kernel = _lift(x), _lift(kernel)
    if x.data.ndim != 2 or kernel.data.ndim != 3:
        raise ShapeError("conv1d expects x (L,c_in) and kernel (k,c_in,c_out)")
    L, c_in = x.data.shape
    k, kc_in, c_out = kernel.data.shape
    if kc_in != c_in:
        raise ShapeError(f"conv1d channel mismatch: input has {c_in}, "
                         f"kernel expects {kc_in}")
    if k % 2 == 0:
        raise ShapeError("conv1d kernel width must be odd")
    pad = (k - 1) // 2
    xpad = np.zeros((L + 2 * pad, c_in))
    xpad[pad:pad + L] = x.data
    windows = np.lib.stride_tricks.sliding_window_view(xpad, k, axis=0)
    # windows: (L, c_in, k)
    val = np.einsum("lck,kco->lo", windows, kernel.data)
    parents = [x, kernel]
    if bias is not None:
        bias = _lift(bias)
        val = val + bias.data
        parents.append(bias)
    out = Var(val, _parents=tuple(parents))

    def backward(g):
        gpad = np.zeros((L + 2 * pad, c_out))
        gpad[pad:pad + L] = g
        gwin = np.lib.stride_tricks.sliding_window_view(gpad, k, axis=0)
        # full correlation with the flipped kernel gives dx
        x._accum(np.einsum("lok,kco->lc", gwin, kernel.data[::-1].copy()))
        kernel._accum(np.einsum("lck,lo->kco", windows, g))
        if bias is not None:
            bias._accum(g.sum(axis=0))

    out._backward = backward
    return out


def resize_matrix(src_len: int, dst_len: int) -> np.ndarray:
    """Endpoint-aligned linear interpolation as a (dst_len, src_len) matrix."""
    if src_len < 1 or dst_len < 1:
        raise ShapeError("resize lengths must be positive")
    W = np.zeros((dst_len, src_len))
    if src_len == 1:
        W[:, 0] = 1.0
        return W
    if dst_len == 1:
        # degenerate endpoint alignment: sample the temporal midpoint
        positions = np.array([(src_len - 1) / 2.0])
    else:
        positions = np.arange(dst_len) * (src_len - 1) / (dst_len - 1)
    lo = np.floor(positions).astype(int)
    lo = np.minimum(lo, src_len - 2)
    frac = positions - lo
    W[np.arange(dst_len), lo] = 1.0 - frac
    W[np.arange(dst_len), lo + 1] += frac
    return W


def interp_resize(x, target_len: int) -> Var:
    """Linear temporal resize of (L, d) to (target_len, d)."""
    x = _lift(x)
    if x.data.ndim != 2:
        raise ShapeError("interp_resize expects a (L, d) array")
    L = x.data.shape[0]
    if target_len < 1:
        raise ShapeError("target_len must be >= 1")
    if target_len == L:
        return x
    W = resize_matrix(L, target_len)
    out = Var(W @ x.data, _parents=(x,))

    def backward(g):
        x._accum(W.T @ g)

    out._backward = backward
    return out


# -- composite helpers ------------------------------------------------------

def layer_norm(x, gain, bias, eps: float = 1e-6) -> Var:
    """Row-wise layer normalization of (N, d)."""
    mu = mean(x, axis=-1, keepdims=True)
    centered = x - mu
    var = mean(mul(centered, centered), axis=-1, keepdims=True)
    inv = power(var + eps, -0.5)
    return mul(centered, inv) * gain + bias


def attention(tokens, mask: np.ndarray, wq, wk, wv, wo, n_heads: int) -> Var:
    """Masked multi-head scaled-dot-product attention over (N, d) tokens.

    ``mask`` is a boolean (N, N) array; True marks permitted attention.
    """
    N, d = tokens.shape
    if mask.shape != (N, N):
        raise ShapeError(f"mask must be ({N},{N}), got {mask.shape}")
    if not mask.any(axis=1).all():
        raise ContractError("attention mask has a fully-masked row")
    if d % n_heads != 0:
        raise ShapeError("model width must divide evenly into heads")
    dh = d // n_heads
    q = tokens @ wq
    k = tokens @ wk
    v = tokens @ wv
    heads = []
    for h in range(n_heads):
        sl = slice(h * dh, (h + 1) * dh)
        qh, kh, vh = q[:, sl], k[:, sl], v[:, sl]
        scores = (qh @ transpose(kh)) * (1.0 / math.sqrt(dh))
        heads.append(masked_softmax(scores, mask) @ vh)
    return concat(heads, axis=1) @ wo


def gradients(output: Var, inputs) -> dict:
    """Backward from a scalar; returns {input: adjoint array} with zeros for
    inputs the output does not depend on."""
    for v in inputs:
        v.zero_grad()
    output.backward()
    return {v: (v.grad if v.grad is not None else np.zeros_like(v.data))
            for v in inputs}
