"""Small convolutional encoder with a two-layer projection head.

Layout (defaults): three 3x3 stride-2 conv stages 3->16->32->64 with ReLU,
global average pooling, then ``fc1`` 64->128 + ReLU and ``fc2`` 128->128.
Activations are kept NHWC. Gradients are hand-derived; there is no autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import EpochOutOfRange, ShapeMismatch, StaleCache

# per-channel normalisation applied to pixels scaled to [0, 1]
PIXEL_MEAN = 0.5
PIXEL_STD = 0.5


def init_params(
    seed: int = 0,
    channels: tuple[int, ...] = (3, 16, 32, 64),
    hidden: int = 128,
    out_dim: int = 128,
    dtype=np.float32,
) -> dict[str, np.ndarray]:
    """He-initialised parameters keyed ``conv{k}.w``/``.b``, ``fc1.*``, ``fc2.*``."""
    rng = np.random.default_rng(seed)
    params = {}
    for k, (cin, cout) in enumerate(zip(channels[:-1], channels[1:]), start=1):
        std = math.sqrt(2.0 / (cin * 9))
        params[f"conv{k}.w"] = (rng.standard_normal((cout, cin, 3, 3)) * std).astype(dtype)
        params[f"conv{k}.b"] = np.zeros(cout, dtype=dtype)
    params["fc1.w"] = (rng.standard_normal((channels[-1], hidden)) * math.sqrt(2.0 / channels[-1])).astype(dtype)
    params["fc1.b"] = np.zeros(hidden, dtype=dtype)
    params["fc2.w"] = (rng.standard_normal((hidden, out_dim)) * math.sqrt(1.0 / hidden)).astype(dtype)
    params["fc2.b"] = np.zeros(out_dim, dtype=dtype)
    return params


def cast_params(params, dtype) -> dict[str, np.ndarray]:
    return {k: v.astype(dtype) for k, v in params.items()}


def num_conv_stages(params) -> int:
    return sum(1 for k in params if k.startswith("conv") and k.endswith(".w"))


def count_parameters(params) -> int:
    return int(sum(v.size for v in params.values()))


def check_params(params):
    stages = num_conv_stages(params)
    cin = 3
    for k in range(1, stages + 1):
        w = params[f"conv{k}.w"]
        if w.ndim != 4 or w.shape[1:] != (cin, 3, 3) or params[f"conv{k}.b"].shape != (w.shape[0],):
            raise ShapeMismatch(f"conv{k} has inconsistent shape {w.shape}")
        cin = w.shape[0]
    if params["fc1.w"].shape[0] != cin or params["fc2.w"].shape[0] != params["fc1.w"].shape[1]:
        raise ShapeMismatch("projection head does not match the conv trunk")


def _im2col(x):
    # x: (n, H, W, C) -> columns (n*ho*wo, C*9) for a 3x3, stride-2, pad-1 conv
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    ho = (h - 1) // 2 + 1
    wo = (w - 1) // 2 + 1
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::2, ::2][:, :ho, :wo]
    return win.reshape(n * ho * wo, c * 9), (n, h, w, c, ho, wo)


def _col2im(dcols, dims):
    n, h, w, c, ho, wo = dims
    dcols = dcols.reshape(n, ho, wo, c, 3, 3)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dcols.dtype)
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki : ki + 2 * ho : 2, kj : kj + 2 * wo : 2, :] += dcols[..., ki, kj]
    return dxp[:, 1:-1, 1:-1, :]


@dataclass
class ActivationCache:
    n: int
    out_dim: int
    convs: list = field(default_factory=list)  # (cols, dims, relu mask) per stage
    pooled_shape: tuple = ()
    pooled: np.ndarray | None = None
    hidden_pre: np.ndarray | None = None
    hidden: np.ndarray | None = None


def preprocess(views, dtype) -> np.ndarray:
    views = np.asarray(views)
    if views.ndim != 4 or views.shape[-1] != 3:
        raise ShapeMismatch(f"views must be (n, H, W, 3), got {views.shape}")
    x = views.astype(np.float64) / 255.0
    return ((x - PIXEL_MEAN) / PIXEL_STD).astype(dtype)


def forward(params, views):
    """Embed ``views`` (``(n, H, W, 3)`` uint8) to ``(n, out_dim)``.

    Returns ``(embeddings, cache)``; the cache feeds :func:`backward`.
    """
    check_params(params)
    dtype = params["fc2.w"].dtype
    x = preprocess(views, dtype)
    cache = ActivationCache(n=x.shape[0], out_dim=params["fc2.w"].shape[1])
    for k in range(1, num_conv_stages(params) + 1):
        w = params[f"conv{k}.w"]
        cols, dims = _im2col(x)
        pre = cols @ w.reshape(w.shape[0], -1).T + params[f"conv{k}.b"]
        mask = pre > 0
        x = (pre * mask).reshape(dims[0], dims[4], dims[5], w.shape[0])
        cache.convs.append((cols, dims, mask))
    cache.pooled_shape = x.shape
    pooled = x.mean(axis=(1, 2))
    hidden_pre = pooled @ params["fc1.w"] + params["fc1.b"]
    hidden = np.maximum(hidden_pre, 0)
    out = hidden @ params["fc2.w"] + params["fc2.b"]
    cache.pooled, cache.hidden_pre, cache.hidden = pooled, hidden_pre, hidden
    return out, cache


def backward(params, cache: ActivationCache, grad_embeddings) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of every parameter given ``dL/d(embeddings)``."""
    g = np.asarray(grad_embeddings)
    if g.shape != (cache.n, cache.out_dim):
        raise StaleCache(f"gradient shape {g.shape} does not match cached forward pass ({cache.n}, {cache.out_dim})")
    dtype = params["fc2.w"].dtype
    g = g.astype(dtype)
    grads = {}
    grads["fc2.w"] = cache.hidden.T @ g
    grads["fc2.b"] = g.sum(axis=0)
    dh = (g @ params["fc2.w"].T) * (cache.hidden_pre > 0)
    grads["fc1.w"] = cache.pooled.T @ dh
    grads["fc1.b"] = dh.sum(axis=0)
    dpool = dh @ params["fc1.w"].T
    n, ho, wo, c = cache.pooled_shape
    dx = np.broadcast_to((dpool / (ho * wo))[:, None, None, :], (n, ho, wo, c))
    for k in range(len(cache.convs), 0, -1):
        cols, dims, mask = cache.convs[k - 1]
        w = params[f"conv{k}.w"]
        dpre = dx.reshape(-1, w.shape[0]) * mask
        grads[f"conv{k}.w"] = (dpre.T @ cols).reshape(w.shape)
        grads[f"conv{k}.b"] = dpre.sum(axis=0)
        if k > 1:
            dx = _col2im(dpre @ w.reshape(w.shape[0], -1), dims)
    return {name: grads[name] for name in params}


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray]
    momentum: float = 0.9
    base_lr: float = 1e-3
    horizon: int = 240
    lr_min: float = 0.0

    @classmethod
    def create(cls, params, momentum=0.9, base_lr=1e-3, horizon=240, lr_min=0.0) -> OptimizerState:
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {momentum}")
        if not base_lr > 0:
            raise ValueError(f"base_lr must be > 0, got {base_lr}")
        velocity = {k: np.zeros_like(v) for k, v in params.items()}
        return cls(velocity, float(momentum), float(base_lr), int(horizon), float(lr_min))


def sgd_momentum_step(params, grads, state: OptimizerState, lr: float):
    """``v <- momentum * v + g; w <- w - lr * v``, in place. Returns ``(params, state)``."""
    if set(grads) != set(params):
        raise ShapeMismatch("gradient names do not match parameters")
    for name, w in params.items():
        g = grads[name]
        v = state.velocity[name]
        if g.shape != w.shape or v.shape != w.shape:
            raise ShapeMismatch(f"{name}: parameter {w.shape}, gradient {g.shape}, velocity {v.shape}")
        v *= state.momentum
        v += g
        w -= w.dtype.type(lr) * v
    return params, state


def cosine_lr(epoch: int, state: OptimizerState) -> float:
    if not 0 <= epoch <= state.horizon:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {state.horizon}]")
    return state.lr_min + 0.5 * (state.base_lr - state.lr_min) * (1.0 + math.cos(math.pi * epoch / state.horizon))
