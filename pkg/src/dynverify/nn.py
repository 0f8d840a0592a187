"""Float forward/backward engine shared by training and INT-8 inference.

Parameters are a list with one ``(weight, bias_or_None)`` pair per dense/conv
layer. The INT-8 path calls the same ``forward`` with dequantized weights and
per-layer activation quantization, so the float trainer and the quantized
model can never drift apart structurally.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .layers import Architecture, ShapeError
from .quant import QuantParams, dequantize, quantize

Params = list  # list[tuple[np.ndarray, np.ndarray | None]]


class TrainingError(RuntimeError):
    pass


def init_params(arch: Architecture, rng: np.random.Generator, zero_head: bool = True) -> Params:
    """He-normal weights, zero biases; the class head starts at zero so an
    untrained model emits all-equal logits."""
    par = arch.parametric_indices()
    params = []
    for i in par:
        l = arch.layers[i]
        shape = l.weight_shape()
        fan_in = int(np.prod(shape[1:]))
        if zero_head and i == par[-1]:
            w = np.zeros(shape)
        else:
            w = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        b = np.zeros(l.bias_shape()) if l.bias else None
        params.append((w, b))
    return params


def _as_batch(arch: Architecture, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.shape == arch.input_shape:
        return x[None], True
    if x.ndim == len(arch.input_shape) + 1 and x.shape[1:] == arch.input_shape:
        return x, False
    raise ShapeError(f"input shape {x.shape} does not match network input {arch.input_shape}")


def _windows(x: np.ndarray, k: int, s: int) -> np.ndarray:
    # (B, C, Ho, Wo, k, k)
    return sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]


def forward(
    arch: Architecture,
    params: Params,
    x,
    act_qparams: Sequence[QuantParams | None] | None = None,
    act_fault=None,
    record: list | None = None,
    caches: list | None = None,
) -> np.ndarray:
    """Run the network on one sample or a batch.

    ``act_fault`` is one ``(parametric layer ordinal, flat index, bit)`` triple
    or a list of them; each flips that bit of the INT-8 activation code in
    every sample of the batch.
    ``record`` collects each dense/conv output; ``caches`` keeps what
    ``backward`` needs.
    """
    x, single = _as_batch(arch, x)
    if act_fault is not None and len(act_fault) and not isinstance(act_fault[0], (tuple, list)):
        act_fault = [act_fault]
    p = 0
    for l in arch.layers:
        cache = None
        if l.kind == "dense":
            w, b = params[p]
            cache = x
            x = x @ w.T
            if b is not None:
                x = x + b
        elif l.kind == "conv2d":
            w, b = params[p]
            k, s, pad = l.kernel_size, l.stride, l.padding
            xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
            win = _windows(xp, k, s)
            cache = (xp.shape, win)
            x = np.einsum("bchwij,ocij->bohw", win, w, optimize=True)
            if b is not None:
                x = x + b[None, :, None, None]
        elif l.kind == "relu":
            cache = x > 0
            x = np.where(cache, x, 0.0)
        elif l.kind == "maxpool":
            bsz, c, h, wd = x.shape
            q = l.pool
            ho, wo = h // q, wd // q
            blocks = x[:, :, : ho * q, : wo * q].reshape(bsz, c, ho, q, wo, q).transpose(0, 1, 2, 4, 3, 5)
            blocks = blocks.reshape(bsz, c, ho, wo, q * q)
            arg = blocks.argmax(axis=-1)
            cache = (x.shape, arg)
            x = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]
        elif l.kind == "flatten":
            cache = x.shape
            x = x.reshape(x.shape[0], -1)
        if l.parametric:
            qp = act_qparams[p] if act_qparams is not None else None
            if qp is not None:
                codes = quantize(x, qp)
                if act_fault:
                    flat = codes.reshape(codes.shape[0], -1).view(np.uint8)
                    for fp, idx, bit in act_fault:
                        if fp == p:
                            flat[:, idx] ^= np.uint8(1 << bit)
                x = dequantize(codes, qp)
            if record is not None:
                record.append(x[0] if single else x)
            p += 1
        if caches is not None:
            caches.append(cache)
    return x[0] if single else x


def backward(arch: Architecture, params: Params, caches: list, dout: np.ndarray) -> Params:
    """Gradients w.r.t. every parameter; activation quantization is treated
    as identity (straight-through)."""
    grads: list = [None] * len(params)
    p = len(params)
    g = dout
    for l, cache in zip(reversed(arch.layers), reversed(caches)):
        if l.kind == "dense":
            p -= 1
            w, b = params[p]
            dw = g.T @ cache
            db = g.sum(axis=0) if b is not None else None
            grads[p] = (dw, db)
            g = g @ w
        elif l.kind == "conv2d":
            p -= 1
            w, b = params[p]
            xp_shape, win = cache
            k, s, pad = l.kernel_size, l.stride, l.padding
            dw = np.einsum("bohw,bchwij->ocij", g, win, optimize=True)
            db = g.sum(axis=(0, 2, 3)) if b is not None else None
            grads[p] = (dw, db)
            dxp = np.zeros(xp_shape)
            ho, wo = g.shape[2], g.shape[3]
            for i in range(k):
                for j in range(k):
                    dxp[:, :, i : i + s * ho : s, j : j + s * wo : s] += np.einsum("bohw,oc->bchw", g, w[:, :, i, j])
            g = dxp[:, :, pad : xp_shape[2] - pad, pad : xp_shape[3] - pad] if pad else dxp
        elif l.kind == "relu":
            g = g * cache
        elif l.kind == "maxpool":
            shape, arg = cache
            bsz, c, h, wd = shape
            q = l.pool
            ho, wo = arg.shape[2], arg.shape[3]
            blocks = np.zeros((bsz, c, ho, wo, q * q))
            np.put_along_axis(blocks, arg[..., None], g[..., None], axis=-1)
            blocks = blocks.reshape(bsz, c, ho, wo, q, q).transpose(0, 1, 2, 4, 3, 5).reshape(bsz, c, ho * q, wo * q)
            full = np.zeros(shape)
            full[:, :, : ho * q, : wo * q] = blocks
            g = full
        elif l.kind == "flatten":
            g = g.reshape(cache)
    return grads


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(z: np.ndarray) -> np.ndarray:
    return np.exp(log_softmax(z))


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    logp = log_softmax(logits)
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return float(loss), g / n


@dataclass
class Adam:
    lr: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        self.t = 0
        self.m = None
        self.v = None

    def step(self, params: Params, grads: Params) -> Params:
        flat_p = [t for pair in params for t in pair if t is not None]
        flat_g = [t for pair in grads for t in pair if t is not None]
        if self.m is None:
            self.m = [np.zeros_like(t) for t in flat_p]
            self.v = [np.zeros_like(t) for t in flat_p]
        self.t += 1
        c1 = 1 - self.beta1 ** self.t
        c2 = 1 - self.beta2 ** self.t
        new = []
        for t, g, m, v in zip(flat_p, flat_g, self.m, self.v):
            if self.weight_decay:
                g = g + self.weight_decay * t
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            new.append(t - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
        it = iter(new)
        return [(next(it), next(it) if b is not None else None) for _, b in params]


LossFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray]]


def train(
    arch: Architecture,
    params: Params,
    x: np.ndarray,
    loss_fn: LossFn,
    *,
    epochs: int,
    batch_size: int,
    lr: float,
    rng: np.random.Generator,
    weight_decay: float = 0.0,
) -> tuple[Params, list[float]]:
    """Minibatch Adam. ``loss_fn(logits, batch_indices)`` returns the mean loss
    and its gradient w.r.t. the logits."""
    opt = Adam(lr=lr, weight_decay=weight_decay)
    history = []
    n = len(x)
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            caches: list = []
            logits = forward(arch, params, x[idx], caches=caches)
            loss, g = loss_fn(logits, idx)
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss {loss} at epoch {epoch}, batch starting at {start} "
                    f"(lr={lr}, batch_size={batch_size})"
                )
            grads = backward(arch, params, caches, g)
            params = opt.step(params, grads)
            total += loss * len(idx)
        history.append(total / n)
    return params, history


def predict(arch: Architecture, params: Params, x: np.ndarray, batch: int = 4096) -> np.ndarray:
    out = [forward(arch, params, x[i : i + batch]) for i in range(0, len(x), batch)]
    return np.concatenate(out) if out else np.zeros((0, arch.num_classes))
