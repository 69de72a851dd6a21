"""Reverse-mode automatic differentiation over numpy float64 arrays.

A Tensor wraps an ndarray and remembers how it was produced, so a single
backward sweep through the (dynamically built) graph fills the ``grad``
buffer of every tensor created with ``requires_grad=True``. The graph is
rebuilt on every forward pass, which keeps recurrent unrolling trivial.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents = tuple(parents)
        self._backward = backward_fn

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def _accum(self, g: np.ndarray):
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    # -- graph ---------------------------------------------------------

    def backward(self):
        """Backpropagate from a scalar tensor through the whole graph."""
        if self.data.size != 1:
            raise ShapeError(f"backward() requires a scalar, got shape {self.data.shape}")
        # iterative topological sort: recursion would overflow on long unrolls
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ----------------------------------------------------

    def _coerce(self, other) -> "Tensor":
        return other if isinstance(other, Tensor) else Tensor(other)

    def __add__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(g)
            if other.requires_grad:
                other._accum(g)
        return _make(self.data + other.data, (self, other), bw)

    __radd__ = __add__

    def __neg__(self):
        def bw(g):
            self._accum(-g)
        return _make(-self.data, (self,), bw)

    def __sub__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(g)
            if other.requires_grad:
                other._accum(-g)
        return _make(self.data - other.data, (self, other), bw)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(g * other.data)
            if other.requires_grad:
                other._accum(g * self.data)
        return _make(self.data * other.data, (self, other), bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        def bw(g):
            if self.requires_grad:
                self._accum(g / other.data)
            if other.requires_grad:
                other._accum(-g * self.data / (other.data * other.data))
        return _make(self.data / other.data, (self, other), bw)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __pow__(self, exponent: float):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        e = float(exponent)
        def bw(g):
            self._accum(g * e * self.data ** (e - 1.0))
        return _make(self.data ** e, (self,), bw)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self.data, other.data
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul inner-dimension mismatch: {a.shape} x {b.shape}")
        def bw(g):
            if self.requires_grad:
                self._accum(np.matmul(g, np.swapaxes(b, -1, -2)))
            if other.requires_grad:
                other._accum(np.matmul(np.swapaxes(a, -1, -2), g))
        return _make(np.matmul(a, b), (self, other), bw)

    # -- elementwise functions -----------------------------------------

    def exp(self):
        out_data = np.exp(self.data)
        def bw(g):
            self._accum(g * out_data)
        return _make(out_data, (self,), bw)

    def log(self):
        def bw(g):
            self._accum(g / self.data)
        return _make(np.log(self.data), (self,), bw)

    def tanh(self):
        out_data = np.tanh(self.data)
        def bw(g):
            self._accum(g * (1.0 - out_data * out_data))
        return _make(out_data, (self,), bw)

    def sigmoid(self):
        x = self.data
        # split form avoids overflow in exp for large |x|
        out_data = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                            np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        def bw(g):
            self._accum(g * out_data * (1.0 - out_data))
        return _make(out_data, (self,), bw)

    def sqrt(self):
        return self ** 0.5

    # -- reductions / shaping ------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        in_shape = self.data.shape
        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            self._accum(np.broadcast_to(g, in_shape))
        return _make(self.data.sum(axis=axis, keepdims=keepdims), (self,), bw)

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod(
            [self.data.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / float(n))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        in_shape = self.data.shape
        def bw(g):
            self._accum(g.reshape(in_shape))
        return _make(self.data.reshape(shape), (self,), bw)

    def swapaxes(self, a: int, b: int):
        def bw(g):
            self._accum(np.swapaxes(g, a, b))
        return _make(np.swapaxes(self.data, a, b), (self,), bw)

    def transpose(self, axes):
        inv = np.argsort(axes)
        def bw(g):
            self._accum(np.transpose(g, inv))
        return _make(np.transpose(self.data, axes), (self,), bw)

    def __getitem__(self, key):
        in_shape = self.data.shape
        def bw(g):
            buf = np.zeros(in_shape)
            np.add.at(buf, key, g)
            self._accum(buf)
        return _make(self.data[key], (self,), bw)


def _make(data, parents, backward_fn) -> Tensor:
    rg = any(p.requires_grad for p in parents)
    if not rg:
        return Tensor(data)
    return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn)


def concat(tensors, axis: int = -1) -> Tensor:
    """Concatenate tensors along `axis`, splitting gradients back out."""
    tensors = tuple(tensors)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)
    def bw(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            if t.requires_grad:
                t._accum(g[tuple(idx)])
    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax; the max shift is a constant w.r.t. the graph."""
    shift = Tensor(np.max(x.data, axis=axis, keepdims=True))
    e = (x - shift).exp()
    return e / e.sum(axis=axis, keepdims=True)


def mse_loss(pred: Tensor, target: Tensor) -> Tensor:
    if pred.data.shape != target.data.shape:
        raise ShapeError(
            f"mse_loss shape mismatch: pred {pred.data.shape} vs target {target.data.shape}")
    d = pred - target
    return (d * d).mean()


class Adam:
    """Adam with bias correction.

    m <- b1*m + (1-b1)*g ; v <- b2*v + (1-b2)*g^2 ;
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, params, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if lr < 0:
            raise ValueError("lr must be non-negative")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.data.shape}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
