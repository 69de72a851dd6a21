"""Parameterized layers: dense, dropout, 1-d convolution, LSTM, layer norm,
multi-head attention and position embedding.

All layers operate on batched tensors. Sequence inputs are laid out as
(batch, time, channels). Construction takes a ``numpy.random.Generator`` so
that identical seeds give bit-identical initial parameters.
"""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, _make, concat, softmax

ACTIVATIONS = ("linear", "sigmoid", "tanh")


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def _activate(x: Tensor, activation: str) -> Tensor:
    if activation == "linear":
        return x
    if activation == "sigmoid":
        return x.sigmoid()
    if activation == "tanh":
        return x.tanh()
    raise ValueError(f"unknown activation {activation!r}")


class Layer:
    """Base: subclasses register parameters in self._params as (name, Tensor)."""

    def __init__(self):
        self._params: list[tuple[str, Tensor]] = []

    def _param(self, name: str, data: np.ndarray) -> Tensor:
        t = Tensor(data, requires_grad=True)
        self._params.append((name, t))
        return t

    def params(self):
        return list(self._params)


class Dense(Layer):
    def __init__(self, in_dim: int, out_dim: int, activation: str = "linear", *,
                 rng: np.random.Generator):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.activation = activation
        self.weight = self._param("weight", glorot_uniform(rng, in_dim, out_dim, (in_dim, out_dim)))
        self.bias = self._param("bias", np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"Dense expects last dim {self.in_dim}, got input shape {x.shape}")
        return _activate(x @ self.weight + self.bias, self.activation)


class Dropout(Layer):
    """Inverted dropout: identity in eval mode, mask/(1-rate) in train mode."""

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def __call__(self, x: Tensor, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        if not train or self.rate == 0.0:
            return x
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * Tensor(mask)


class Conv1d(Layer):
    """1-d cross-correlation over the time axis. Input (batch, time, in_ch)."""

    def __init__(self, in_channels: int, filters: int, kernel_size: int,
                 padding: str = "same", activation: str = "linear", *,
                 rng: np.random.Generator):
        super().__init__()
        if padding not in ("same", "valid"):
            raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel_size = kernel_size
        self.padding = padding
        self.activation = activation
        fan_in = kernel_size * in_channels
        self.weight = self._param(
            "weight", glorot_uniform(rng, fan_in, filters, (kernel_size, in_channels, filters)))
        self.bias = self._param("bias", np.zeros(filters))

    def __call__(self, x: Tensor) -> Tensor:
        k = self.kernel_size
        if x.shape[-1] != self.in_channels:
            raise ShapeError(f"Conv1d expects {self.in_channels} channels, got shape {x.shape}")
        if self.padding == "valid" and x.shape[1] < k:
            raise ShapeError(f"sequence length {x.shape[1]} < kernel size {k} under valid padding")
        if self.padding == "same":
            left = (k - 1) // 2
            right = k - 1 - left
        else:
            left = right = 0
        w, b = self.weight, self.bias

        xd = x.data
        if left or right:
            xd = np.pad(xd, ((0, 0), (left, right), (0, 0)))
        windows = np.lib.stride_tricks.sliding_window_view(xd, k, axis=1)  # (b, t_out, c, k)
        out_data = np.einsum("btck,kcf->btf", windows, w.data) + b.data

        def bw(g):
            if w.requires_grad:
                w._accum(np.einsum("btck,btf->kcf", windows, g))
            if b.requires_grad:
                b._accum(g.sum(axis=(0, 1)))
            if x.requires_grad:
                gxp = np.zeros_like(xd)
                t_out = g.shape[1]
                for j in range(k):
                    gxp[:, j:j + t_out, :] += np.einsum("btf,cf->btc", g, w.data[j])
                if left or right:
                    gxp = gxp[:, left:xd.shape[1] - right, :]
                x._accum(gxp)

        return _activate(_make(out_data, (x, w, b), bw), self.activation)


class Lstm(Layer):
    """Single-layer LSTM unrolled over (batch, time, in_dim).

    Gates packed as [input, forget, output, candidate] in one weight matrix
    over the concatenated (input, hidden) vector. With all-zero parameters the
    hidden and cell states stay exactly zero (tanh(0) = 0 through both paths).
    """

    def __init__(self, in_dim: int, units: int, *, rng: np.random.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.units = units
        self.weight = self._param(
            "weight", glorot_uniform(rng, in_dim + units, 4 * units,
                                     (in_dim + units, 4 * units)))
        self.bias = self._param("bias", np.zeros(4 * units))

    def __call__(self, x: Tensor):
        """Returns (hidden sequence (b, t, units), final h, final c)."""
        if x.ndim != 3 or x.shape[-1] != self.in_dim:
            raise ShapeError(f"Lstm expects (batch, time, {self.in_dim}), got {x.shape}")
        batch, steps = x.shape[0], x.shape[1]
        if steps < 1:
            raise ShapeError("Lstm needs at least one time step")
        u = self.units
        h = Tensor(np.zeros((batch, u)))
        c = Tensor(np.zeros((batch, u)))
        outputs = []
        for t in range(steps):
            xt = x[:, t, :]
            z = concat([xt, h], axis=1) @ self.weight + self.bias
            i = z[:, 0 * u:1 * u].sigmoid()
            f = z[:, 1 * u:2 * u].sigmoid()
            o = z[:, 2 * u:3 * u].sigmoid()
            cand = z[:, 3 * u:4 * u].tanh()
            c = f * c + i * cand
            h = o * c.tanh()
            outputs.append(h.reshape(batch, 1, u))
        seq = concat(outputs, axis=1)
        return seq, h, c


class LayerNorm(Layer):
    """Normalizes along the last (feature) axis, then applies gain and shift."""

    def __init__(self, dim: int, eps: float = 1e-6, *, rng: np.random.Generator | None = None):
        super().__init__()
        self.dim = dim
        self.eps = eps
        self.gain = self._param("gain", np.ones(dim))
        self.shift = self._param("shift", np.zeros(dim))

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        normed = xc / (var + self.eps).sqrt()
        return normed * self.gain + self.shift


class MultiHeadAttention(Layer):
    """Scaled dot-product attention with learned per-head projections.

    Query/key/value inputs are (batch, time, q_dim/kv_dim); output is
    (batch, time_q, out_dim). A boolean mask of shape (time_q, time_k) marks
    the key positions each query may attend to.
    """

    def __init__(self, q_dim: int, kv_dim: int, head_size: int, num_heads: int,
                 out_dim: int | None = None, dropout: float = 0.0, *,
                 rng: np.random.Generator):
        super().__init__()
        self.head_size = head_size
        self.num_heads = num_heads
        self.q_dim = q_dim
        self.kv_dim = kv_dim
        self.out_dim = q_dim if out_dim is None else out_dim
        inner = head_size * num_heads
        self.wq = self._param("wq", glorot_uniform(rng, q_dim, inner, (q_dim, inner)))
        self.wk = self._param("wk", glorot_uniform(rng, kv_dim, inner, (kv_dim, inner)))
        self.wv = self._param("wv", glorot_uniform(rng, kv_dim, inner, (kv_dim, inner)))
        self.wo = self._param("wo", glorot_uniform(rng, inner, self.out_dim, (inner, self.out_dim)))
        self.attn_dropout = Dropout(dropout)

    def _split_heads(self, x: Tensor, batch: int, steps: int) -> Tensor:
        # (b, t, h*dk) -> (b, h, t, dk)
        return x.reshape(batch, steps, self.num_heads, self.head_size).transpose((0, 2, 1, 3))

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor,
                 mask: np.ndarray | None = None, train: bool = False,
                 rng: np.random.Generator | None = None) -> Tensor:
        if k_in.shape[1] != v_in.shape[1]:
            raise ShapeError(
                f"key/value time extents differ: {k_in.shape} vs {v_in.shape}")
        batch, tq = q_in.shape[0], q_in.shape[1]
        tk = k_in.shape[1]
        q = self._split_heads(q_in @ self.wq, batch, tq)
        k = self._split_heads(k_in @ self.wk, batch, tk)
        v = self._split_heads(v_in @ self.wv, batch, tk)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_size))
        if mask is not None:
            scores = scores + Tensor(np.where(mask, 0.0, -1e9))
        weights = softmax(scores, axis=-1)
        weights = self.attn_dropout(weights, train=train, rng=rng)
        out = (weights @ v).transpose((0, 2, 1, 3)).reshape(
            batch, tq, self.num_heads * self.head_size)
        return out @ self.wo

    def attention_weights(self, q_in: Tensor, k_in: Tensor,
                          mask: np.ndarray | None = None) -> np.ndarray:
        """Per-head attention matrices (batch, heads, t_q, t_k), eval mode."""
        batch, tq = q_in.shape[0], q_in.shape[1]
        tk = k_in.shape[1]
        q = self._split_heads(q_in @ self.wq, batch, tq)
        k = self._split_heads(k_in @ self.wk, batch, tk)
        scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(self.head_size))
        if mask is not None:
            scores = scores + Tensor(np.where(mask, 0.0, -1e9))
        return softmax(scores, axis=-1).data


def causal_mask(steps: int) -> np.ndarray:
    """Lower-triangular mask: position t may attend to positions <= t."""
    return np.tril(np.ones((steps, steps), dtype=bool))


def sinusoidal_encoding(length: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    """sin/cos position table: even dims sin(pos/base^(2i/d)), odd dims cos."""
    pe = np.zeros((length, d_model))
    pos = np.arange(length)[:, None]
    i = np.arange(0, d_model, 2)
    angle = pos / base ** (i / d_model)
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


def position_encoding(pos: int, d_model: int, base: float = 10000.0) -> np.ndarray:
    """Single-position sinusoidal vector; pos must be non-negative."""
    if pos < 0:
        raise ValueError("position must be non-negative")
    return sinusoidal_encoding(pos + 1, d_model, base)[pos]


class PositionEmbedding(Layer):
    """Adds position information to (batch, time, d_model) inputs.

    mode='learned' uses a trainable table (the default for the attention
    branch models); mode='sinusoidal' uses the fixed sin/cos form.
    """

    def __init__(self, max_len: int, d_model: int, mode: str = "learned",
                 base: float = 10000.0, *, rng: np.random.Generator | None = None):
        super().__init__()
        if mode not in ("learned", "sinusoidal"):
            raise ValueError(f"unknown position embedding mode {mode!r}")
        self.max_len = max_len
        self.d_model = d_model
        self.mode = mode
        self.base = base
        if mode == "learned":
            if rng is None:
                raise ValueError("learned position embedding needs an rng")
            self.table = self._param(
                "table", glorot_uniform(rng, max_len, d_model, (max_len, d_model)))
        else:
            self.fixed = sinusoidal_encoding(max_len, d_model, base)

    def __call__(self, x: Tensor) -> Tensor:
        steps = x.shape[1]
        if steps > self.max_len:
            raise ShapeError(f"sequence length {steps} exceeds max length {self.max_len}")
        if self.mode == "learned":
            return x + self.table[:steps, :]
        return x + Tensor(self.fixed[:steps])
