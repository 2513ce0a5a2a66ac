"""Layers with explicit reverse-mode rules.

Every layer caches what its backward pass needs during ``forward`` and fills
``self.grads`` (same keys as ``self.params``) during ``backward``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

GELU_C = np.sqrt(2.0 / np.pi)


class Layer:
    params: dict
    grads: dict
    training: bool = True

    def zero_grad(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)


class Conv2d(Layer):
    """Square-kernel, stride-1 convolution with zero padding that keeps H x W."""

    def __init__(self, c_in: int, c_out: int, kernel: int = 3, rng=None, dtype=np.float64):
        if kernel % 2 != 1:
            raise ValueError("kernel size must be odd")
        rng = np.random.default_rng() if rng is None else rng
        bound = 1.0 / np.sqrt(c_in * kernel * kernel)
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        self.params = {
            "weight": rng.uniform(-bound, bound, (c_out, c_in, kernel, kernel)).astype(dtype),
            "bias": rng.uniform(-bound, bound, c_out).astype(dtype),
        }
        self.grads = {}
        self.zero_grad()

    def _cols(self, x):
        b, c, h, w = x.shape
        p = self.kernel // 2
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(xp, (self.kernel, self.kernel), axis=(2, 3))  # b c h w k k
        return np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3)).reshape(b, c * self.kernel**2, h * w)

    def forward(self, x):
        b, c, h, w = x.shape
        if c != self.c_in:
            raise ValueError(f"conv expects {self.c_in} channels, got {c}")
        if h < self.kernel or w < self.kernel:
            raise ValueError("spatial size smaller than kernel")
        cols = self._cols(x)
        self._cache = (x.shape, cols)
        wmat = self.params["weight"].reshape(self.c_out, -1)
        out = np.matmul(wmat, cols) + self.params["bias"][None, :, None]
        return out.reshape(b, self.c_out, h, w)

    def backward(self, dout):
        (b, c, h, w), cols = self._cache
        k, p = self.kernel, self.kernel // 2
        d = dout.reshape(b, self.c_out, h * w)
        self.grads["weight"] += np.tensordot(d, cols, axes=([0, 2], [0, 2])).reshape(self.params["weight"].shape)
        self.grads["bias"] += d.sum(axis=(0, 2))
        wmat = self.params["weight"].reshape(self.c_out, -1)
        dcols = np.matmul(wmat.T, d).reshape(b, c, k, k, h, w)
        dxp = np.zeros((b, c, h + 2 * p, w + 2 * p), dtype=dout.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + h, j:j + w] += dcols[:, :, i, j]
        return dxp[:, :, p:p + h, p:p + w]


class BatchNorm2d(Layer):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float64):
        self.momentum, self.eps = momentum, eps
        self.params = {"weight": np.ones(channels, dtype), "bias": np.zeros(channels, dtype)}
        self.buffers = {"running_mean": np.zeros(channels, dtype), "running_var": np.ones(channels, dtype)}
        self.grads = {}
        self.zero_grad()

    def forward(self, x):
        gamma = self.params["weight"][None, :, None, None]
        beta = self.params["bias"][None, :, None, None]
        if self.training:
            n = x.shape[0] * x.shape[2] * x.shape[3]
            mu = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            m = self.momentum
            self.buffers["running_mean"] = (1 - m) * self.buffers["running_mean"] + m * mu
            unbiased = var * n / max(n - 1, 1)
            self.buffers["running_var"] = (1 - m) * self.buffers["running_var"] + m * unbiased
        else:
            mu = self.buffers["running_mean"]
            var = self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu[None, :, None, None]) * inv_std[None, :, None, None]
        self._cache = (xhat, inv_std, self.training)
        return gamma * xhat + beta

    def backward(self, dout):
        xhat, inv_std, training = self._cache
        self.grads["weight"] += np.sum(dout * xhat, axis=(0, 2, 3))
        self.grads["bias"] += np.sum(dout, axis=(0, 2, 3))
        dxhat = dout * self.params["weight"][None, :, None, None]
        inv = inv_std[None, :, None, None]
        if not training:
            return dxhat * inv
        n = dout.shape[0] * dout.shape[2] * dout.shape[3]
        s1 = dxhat.sum(axis=(0, 2, 3), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(0, 2, 3), keepdims=True)
        return inv * (dxhat - s1 / n - xhat * s2 / n)


class GELU(Layer):
    """tanh approximation ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""

    def __init__(self):
        self.params, self.grads = {}, {}

    def forward(self, x):
        t = np.tanh(GELU_C * (x + 0.044715 * x**3))
        self._cache = (x, t)
        return 0.5 * x * (1.0 + t)

    def backward(self, dout):
        x, t = self._cache
        du = GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t**2) * du)
