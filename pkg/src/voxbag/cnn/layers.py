"""Layer descriptions and their forward/backward passes.

Activations are ``(batch, channels, depth, height, width)`` until the
Flatten layer and ``(batch, features)`` after it. Every function works in
the dtype of its input, so the same code runs the float32 training path
and the float64 gradient checks.

Kernel, stride, pad and pool triples are ordered ``(depth, height, width)``.
A depth extent of 1 turns a 3D layer into its slice-wise 2D counterpart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .. import kernels
from ..errors import ShapeError
from ..tensor import matmul


@dataclass(frozen=True)
class Conv:
    in_ch: int
    out_ch: int
    kernel: tuple = (3, 3, 3)
    stride: tuple = (1, 1, 1)
    pad: tuple = (1, 1, 1)


@dataclass(frozen=True)
class BatchNorm:
    channels: int
    eps: float = 1e-5
    momentum: float = 0.1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: tuple = (2, 2, 2)
    stride: tuple = (2, 2, 2)


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class FullyConnected:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class SoftmaxOutput:
    classes: int = 2


LayerSpec = Union[Conv, BatchNorm, ReLU, MaxPool, Flatten, FullyConnected, SoftmaxOutput]

LAYER_TYPES = {cls.__name__: cls for cls in (Conv, BatchNorm, ReLU, MaxPool, Flatten, FullyConnected, SoftmaxOutput)}


def conv_output_extent(n_in: int, k: int, s: int, p: int) -> int:
    return (n_in + 2 * p - k) // s + 1


def output_shape(layer: LayerSpec, shape: tuple) -> tuple:
    """Per-sample output shape of ``layer`` for per-sample input ``shape``."""
    if isinstance(layer, Conv):
        if len(shape) != 4 or shape[0] != layer.in_ch:
            raise ShapeError(f"{layer} cannot take input of shape {shape}")
        ext = tuple(conv_output_extent(n, k, s, p) for n, k, s, p in zip(shape[1:], layer.kernel, layer.stride, layer.pad))
        if min(ext) < 1:
            raise ShapeError(f"{layer} produces empty output from {shape}")
        return (layer.out_ch, *ext)
    if isinstance(layer, BatchNorm):
        if shape[0] != layer.channels:
            raise ShapeError(f"{layer} cannot take input of shape {shape}")
        return shape
    if isinstance(layer, MaxPool):
        if len(shape) != 4 or any(k > n for k, n in zip(layer.size, shape[1:])):
            raise ShapeError(f"pool window {layer.size} larger than input {shape}")
        return (shape[0], *((n - k) // s + 1 for n, k, s in zip(shape[1:], layer.size, layer.stride)))
    if isinstance(layer, Flatten):
        return (int(np.prod(shape)),)
    if isinstance(layer, FullyConnected):
        if shape != (layer.in_dim,):
            raise ShapeError(f"{layer} cannot take input of shape {shape}")
        return (layer.out_dim,)
    if isinstance(layer, SoftmaxOutput):
        if shape != (layer.classes,):
            raise ShapeError(f"softmax over {layer.classes} classes got input {shape}")
        return shape
    return shape


# -- convolution -------------------------------------------------------------


def conv_forward(x, layer: Conv, weight, bias, return_cache: bool = False):
    """Cross-correlation (no kernel flip) via im2col and a batched GEMM."""
    if x.ndim != 5 or x.shape[1] != layer.in_ch:
        raise ShapeError(f"conv expects (N, {layer.in_ch}, D, H, W), got {x.shape}")
    pd, ph, pw = layer.pad
    xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
    cols = kernels.im2col3d(np.ascontiguousarray(xp), *layer.kernel, *layer.stride)
    n = x.shape[0]
    ext = tuple(conv_output_extent(e, k, s, p) for e, k, s, p in zip(x.shape[2:], layer.kernel, layer.stride, layer.pad))
    w2 = weight.reshape(layer.out_ch, -1)
    out = np.matmul(w2, cols) + bias[:, None]
    out = out.reshape(n, layer.out_ch, *ext)
    if return_cache:
        return out, (cols, xp.shape)
    return out


def conv_backward(dout, cache, layer: Conv, weight):
    cols, xp_shape = cache
    n = dout.shape[0]
    d2 = dout.reshape(n, layer.out_ch, -1)
    w2 = weight.reshape(layer.out_ch, -1)
    dw = np.zeros_like(w2)
    for i in range(n):  # fixed summation order over the batch
        dw += matmul(d2[i], cols[i].T)
    db = d2.sum(axis=(0, 2))
    dcols = np.ascontiguousarray(np.matmul(w2.T, d2))
    dxp = kernels.col2im3d(dcols, xp_shape, *layer.kernel, *layer.stride)
    pd, ph, pw = layer.pad
    _, _, dp, hp, wp = xp_shape
    dx = dxp[:, :, pd:dp - pd, ph:hp - ph, pw:wp - pw]
    return np.ascontiguousarray(dx), dw.reshape(weight.shape), db


# -- batch normalization ----------------------------------------------------------------


def _bn_axes(x):
    return (0,) if x.ndim == 2 else (0, 2, 3, 4)


def _bn_view(v, x):
    return v.reshape(1, -1) if x.ndim == 2 else v.reshape(1, -1, 1, 1, 1)


def batchnorm_forward(x, layer: BatchNorm, gamma, beta, running_mean, running_var,
                      mode: str = "train", return_cache: bool = False):
    """Per-channel normalization.

    Train mode normalizes with batch statistics (population variance) and
    also returns the updated running statistics; eval mode uses the running
    statistics. Returns ``(out, new_running_mean, new_running_var[, cache])``.
    """
    axes = _bn_axes(x)
    if mode == "train":
        count = x.size // x.shape[1]
        if count < 2:
            raise ShapeError(f"train-mode batch norm needs >= 2 values per channel, got {count}")
        mu = x.mean(axis=axes)
        var = ((x - _bn_view(mu, x)) ** 2).mean(axis=axes)
        m = layer.momentum
        new_mean = ((1 - m) * running_mean + m * mu).astype(running_mean.dtype)
        new_var = ((1 - m) * running_var + m * var).astype(running_var.dtype)
    elif mode == "eval":
        mu, var = running_mean, running_var
        new_mean, new_var = running_mean, running_var
    else:
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    inv_std = (1.0 / np.sqrt(var + layer.eps)).astype(x.dtype)
    xhat = (x - _bn_view(mu.astype(x.dtype), x)) * _bn_view(inv_std, x)
    out = xhat * _bn_view(gamma, x) + _bn_view(beta, x)
    if return_cache:
        return out, new_mean, new_var, (xhat, inv_std)
    return out, new_mean, new_var


def batchnorm_backward(dout, cache, gamma):
    """Gradient through train-mode batch statistics."""
    xhat, inv_std = cache
    axes = _bn_axes(dout)
    m = dout.size // dout.shape[1]
    dgamma = (dout * xhat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dxhat = dout * _bn_view(gamma, dout)
    s1 = _bn_view(dxhat.sum(axis=axes), dout)
    s2 = _bn_view((dxhat * xhat).sum(axis=axes), dout)
    dx = (_bn_view(inv_std, dout) / m) * (m * dxhat - s1 - xhat * s2)
    return dx, dgamma, dbeta


# -- pooling, activation, dense ---------------------------------------------------------


def maxpool_forward(x, layer: MaxPool):
    """Returns ``(out, argmax)``; argmax holds flat spatial indices of the winners."""
    if x.ndim != 5 or any(k > n for k, n in zip(layer.size, x.shape[2:])):
        raise ShapeError(f"pool window {layer.size} larger than input {x.shape}")
    return kernels.maxpool3d_forward(np.ascontiguousarray(x), *layer.size, *layer.stride)


def maxpool_backward(dout, argmax, in_shape):
    return kernels.maxpool3d_backward(np.ascontiguousarray(dout), argmax, tuple(in_shape))


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(dout, x):
    return dout * (x > 0)


def fc_forward(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"fc expects (N, {weight.shape[0]}), got {x.shape}")
    # one product per row, so a row's output does not depend on its batch
    return np.matmul(x[:, None, :], weight)[:, 0, :] + bias


def fc_backward(dout, x, weight):
    return matmul(dout, weight.T), matmul(x.T, dout), dout.sum(axis=0)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(labels)), labels].mean())


def softmax_ce_backward(probs, labels):
    """d(mean CE)/d(logits) = (p - onehot) / batch."""
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1
    return g / len(labels)
