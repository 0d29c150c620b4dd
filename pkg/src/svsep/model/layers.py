"""NumPy layer kernels with explicit backward passes.

Tensors are ``(batch, channels, height, width)``. Strided convolutions use
symmetric zero padding of ``kernel // 2`` so that a stride-2 layer exactly
halves even-sized axes; the transposed convolution is defined as the adjoint
of that map and exactly doubles them.
"""

from __future__ import annotations

import numpy as np


def _windows(xp: np.ndarray, k: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, ::stride, ::stride][:, :, :out_h, :out_w]


def conv_out_size(n: int, k: int, stride: int) -> int:
    return (n + 2 * (k // 2) - k) // stride + 1


def conv2d(x: np.ndarray, w: np.ndarray, stride: int = 2):
    """Convolution (cross-correlation) of ``x`` with ``w`` of shape ``(out, in, k, k)``.

    Returns ``(y, cache)``; ``cache`` feeds :func:`conv2d_backward`.
    """
    k = w.shape[-1]
    p = k // 2
    n, c, h, wd = x.shape
    oh, ow = conv_out_size(h, k, stride), conv_out_size(wd, k, stride)
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    cols = _windows(xp, k, stride, oh, ow)
    y = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (cols, x.shape, stride)


def conv2d_input_grad(dy: np.ndarray, w: np.ndarray, x_shape, stride: int) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input."""
    k = w.shape[-1]
    p = k // 2
    n, c, h, wd = x_shape
    oh, ow = dy.shape[2], dy.shape[3]
    dcols = np.tensordot(dy, w, axes=([1], [0]))  # (n, oh, ow, c, k, k)
    dxp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += \
                dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dxp[:, :, p:p + h, p:p + wd]


def conv2d_backward(dy: np.ndarray, w: np.ndarray, cache):
    cols, x_shape, stride = cache
    dw = np.tensordot(dy, cols, axes=([0, 2, 3], [0, 2, 3]))
    dx = conv2d_input_grad(dy, w, x_shape, stride)
    return dx, dw


def conv_transpose2d(x: np.ndarray, w: np.ndarray, stride: int = 2):
    """Transposed convolution upsampling by ``stride``.

    ``w`` has shape ``(in, out, k, k)``: it is the weight of the strided
    convolution ``out -> in`` whose adjoint this layer computes.
    """
    n, c, h, wd = x.shape
    out_shape = (n, w.shape[1], h * stride, wd * stride)
    y = conv2d_input_grad(x, w, out_shape, stride)
    return y, (x, out_shape, stride)


def conv_transpose2d_backward(dy: np.ndarray, w: np.ndarray, cache):
    x, out_shape, stride = cache
    dx, fwd = conv2d(dy, w, stride)
    cols = fwd[0]
    dw = np.tensordot(x, cols, axes=([0, 2, 3], [0, 2, 3]))
    return dx, dw


def batchnorm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5):
    """Per-channel normalization over (batch, height, width) using the batch statistics."""
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    var = x.var(axis=(0, 2, 3), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean) * inv
    y = gamma.reshape(1, -1, 1, 1) * xhat + beta.reshape(1, -1, 1, 1)
    return y, (xhat, inv, gamma), mean.ravel(), var.ravel()


def batchnorm_inference(x, gamma, beta, mean, var, eps: float = 1e-5):
    inv = 1.0 / np.sqrt(var + eps)
    return (gamma * inv).reshape(1, -1, 1, 1) * (x - mean.reshape(1, -1, 1, 1)) + beta.reshape(1, -1, 1, 1)


def batchnorm_backward(dy: np.ndarray, cache):
    xhat, inv, gamma = cache
    m = dy.shape[0] * dy.shape[2] * dy.shape[3]
    dgamma = (dy * xhat).sum(axis=(0, 2, 3))
    dbeta = dy.sum(axis=(0, 2, 3))
    dxhat = dy * gamma.reshape(1, -1, 1, 1)
    dx = inv / m * (m * dxhat - dxhat.sum(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True))
    return dx, dgamma, dbeta


def leaky_relu(x: np.ndarray, slope: float):
    return np.where(x > 0, x, slope * x)


def leaky_relu_backward(dy: np.ndarray, x: np.ndarray, slope: float):
    return np.where(x > 0, dy, slope * dy)


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out
