"""Central finite-difference gradient verification for every primitive and
layer. Used by the `gradcheck` CLI command and the test suite."""
from __future__ import annotations

import numpy as np

from .layers import (Conv1d, Dense, Dropout, LayerNorm, Lstm,
                     MultiHeadAttention)
from .tensor import Tensor, softmax

EPS = 1e-5


def finite_diff(build_loss, tensors, eps: float = EPS) -> list[np.ndarray]:
    """Central-difference gradients of build_loss() w.r.t. each tensor's data.

    build_loss must recompute the forward pass from the tensors' current data
    so that in-place perturbations are picked up.
    """
    grads = []
    for t in tensors:
        g = np.zeros_like(t.data)
        flat = t.data.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = build_loss().item()
            flat[i] = orig - eps
            fm = build_loss().item()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation relative to the gradient magnitude."""
    scale = max(np.max(np.abs(numeric)), np.max(np.abs(analytic)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_case(build_loss, tensors, eps: float = EPS) -> float:
    """Backprop vs finite differences; returns the worst relative error."""
    for t in tensors:
        t.grad = None
    build_loss().backward()
    numeric = finite_diff(build_loss, tensors, eps)
    worst = 0.0
    for t, num in zip(tensors, numeric):
        ana = t.grad if t.grad is not None else np.zeros_like(t.data)
        worst = max(worst, relative_error(ana, num))
    return worst


def _weighted_sum(out: Tensor, rng: np.random.Generator) -> Tensor:
    # random output weighting exercises every output element's gradient path
    return (out * Tensor(rng.standard_normal(out.shape))).sum()


def _case_matmul(rng):
    a = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    b = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
    w = rng.standard_normal((3, 2))
    return lambda: ((a @ b) * Tensor(w)).sum(), [a, b]

def _case_sigmoid(rng):
    x = Tensor(rng.standard_normal(7), requires_grad=True)
    w = rng.standard_normal(7)
    return lambda: (x.sigmoid() * Tensor(w)).sum(), [x]

def _case_softmax(rng):
    x = Tensor(rng.standard_normal((3, 5)), requires_grad=True)
    w = rng.standard_normal((3, 5))
    return lambda: (softmax(x, axis=-1) * Tensor(w)).sum(), [x]

def _case_mse(rng):
    p = Tensor(rng.standard_normal(9), requires_grad=True)
    t = Tensor(rng.standard_normal(9))
    from .tensor import mse_loss
    return lambda: mse_loss(p, t), [p]

def _case_dense(rng):
    layer = Dense(4, 3, "sigmoid", rng=rng)
    x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
    w = rng.standard_normal((2, 3))
    tensors = [x] + [p for _, p in layer.params()]
    return lambda: (layer(x) * Tensor(w)).sum(), tensors

def _case_lstm28(rng):
    layer = Lstm(1, 2, rng=rng)
    x = Tensor(rng.standard_normal((1, 28, 1)), requires_grad=True)
    w = rng.standard_normal((1, 28, 2))
    tensors = [x] + [p for _, p in layer.params()]
    return lambda: (layer(x)[0] * Tensor(w)).sum(), tensors

def _case_conv1d(rng):
    layer = Conv1d(2, 3, 3, "same", "sigmoid", rng=rng)
    x = Tensor(rng.standard_normal((2, 6, 2)), requires_grad=True)
    w = rng.standard_normal((2, 6, 3))
    tensors = [x] + [p for _, p in layer.params()]
    return lambda: (layer(x) * Tensor(w)).sum(), tensors

def _case_attention(rng):
    layer = MultiHeadAttention(4, 4, 3, 2, rng=rng)
    x = Tensor(rng.standard_normal((1, 5, 4)), requires_grad=True)
    w = rng.standard_normal((1, 5, 4))
    tensors = [x] + [p for _, p in layer.params()]
    return lambda: (layer(x, x, x) * Tensor(w)).sum(), tensors

def _case_layernorm(rng):
    layer = LayerNorm(6)
    x = Tensor(rng.standard_normal((3, 6)), requires_grad=True)
    w = rng.standard_normal((3, 6))
    tensors = [x] + [p for _, p in layer.params()]
    return lambda: (layer(x) * Tensor(w)).sum(), tensors

def _case_dropout_eval(rng):
    layer = Dropout(0.4)
    x = Tensor(rng.standard_normal(8), requires_grad=True)
    w = rng.standard_normal(8)
    return lambda: (layer(x, train=False) * Tensor(w)).sum(), [x]


CASES = {
    "matmul": _case_matmul,
    "sigmoid": _case_sigmoid,
    "softmax": _case_softmax,
    "mse_loss": _case_mse,
    "dense": _case_dense,
    "lstm_28step": _case_lstm28,
    "conv1d": _case_conv1d,
    "attention": _case_attention,
    "layernorm": _case_layernorm,
    "dropout_eval": _case_dropout_eval,
}


def run_gradcheck(n_seeds: int = 100, tolerance: float = 1e-4,
                  base_seed: int = 0) -> list[dict]:
    """One row per layer: worst relative error over n_seeds random instances."""
    rows = []
    for name, factory in CASES.items():
        worst = 0.0
        for s in range(n_seeds):
            rng = np.random.default_rng(base_seed * 100_000 + s)
            build_loss, tensors = factory(rng)
            worst = max(worst, check_case(build_loss, tensors))
        rows.append({"layer": name, "max_rel_error": worst,
                     "passed": worst < tolerance})
    return rows
