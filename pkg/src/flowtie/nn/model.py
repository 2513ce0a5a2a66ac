"""Convolutional encoder-decoder predicting one 2D flow vector per input channel."""
from __future__ import annotations

import numpy as np

from .layers import GELU, BatchNorm2d, Conv2d


class FlowModel:
    """``conv -> BN -> GELU`` x3 followed by a linear conv to ``2 * C`` maps.

    Input ``(B, C, H, W)`` is standardised before the first convolution,
    and the output is reshaped to ``(B, 2, C, H, W)`` holding the (y, x)
    components. ``normalization="sample"`` gives every sample zero mean and
    unit variance using its own statistics; ``"corpus"`` uses per-channel
    ``input_mean``/``input_std`` frozen from the training set.
    """

    def __init__(self, channels: int, width: int = 32, kernel: int = 3, seed: int = 0, dtype=np.float64,
                 normalization: str = "sample"):
        if normalization not in ("sample", "corpus"):
            raise ValueError(f"normalization must be 'sample' or 'corpus', got {normalization!r}")
        rng = np.random.default_rng(seed)
        self.channels, self.width, self.kernel, self.seed = channels, width, kernel, seed
        self.normalization = normalization
        self.dtype = dtype
        self.layers = {
            "conv1": Conv2d(channels, width, kernel, rng, dtype),
            "bn1": BatchNorm2d(width, dtype=dtype),
            "act1": GELU(),
            "conv2": Conv2d(width, width, kernel, rng, dtype),
            "bn2": BatchNorm2d(width, dtype=dtype),
            "act2": GELU(),
            "conv3": Conv2d(width, width, kernel, rng, dtype),
            "bn3": BatchNorm2d(width, dtype=dtype),
            "act3": GELU(),
            "conv4": Conv2d(width, 2 * channels, kernel, rng, dtype),
        }
        self.input_mean = np.zeros(channels, dtype)
        self.input_std = np.ones(channels, dtype)
        self.training = True

    def config(self) -> dict:
        return {"channels": self.channels, "width": self.width, "kernel": self.kernel, "seed": self.seed,
                "normalization": self.normalization}

    def train(self, mode: bool = True):
        self.training = mode
        for layer in self.layers.values():
            layer.training = mode
        return self

    def eval(self):
        return self.train(False)

    def params(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, layer in self.layers.items() for k, v in layer.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{name}.{k}": v for name, layer in self.layers.items() for k, v in layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        out = {"input_mean": self.input_mean, "input_std": self.input_std}
        for name, layer in self.layers.items():
            for k, v in getattr(layer, "buffers", {}).items():
                out[f"{name}.{k}"] = v
        return out

    def state(self) -> dict[str, np.ndarray]:
        return {**self.params(), **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]):
        for key, value in state.items():
            if key in ("input_mean", "input_std"):
                setattr(self, key, np.array(value, dtype=self.dtype))
                continue
            name, k = key.split(".", 1)
            layer = self.layers[name]
            store = layer.params if k in layer.params else layer.buffers
            if store[k].shape != np.shape(value):
                raise ValueError(f"shape mismatch for {key}: {store[k].shape} vs {np.shape(value)}")
            store[k] = np.array(value, dtype=self.dtype)

    def zero_grad(self):
        for layer in self.layers.values():
            layer.zero_grad()

    def set_normalization(self, inputs: np.ndarray):
        """Freeze per-channel standardisation statistics from ``(B, C, H, W)`` inputs."""
        self.input_mean = inputs.mean(axis=(0, 2, 3)).astype(self.dtype)
        std = inputs.std(axis=(0, 2, 3))
        self.input_std = np.maximum(std, 1e-12 + 1e-6 * std.max()).astype(self.dtype)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ValueError(f"expected input (B, {self.channels}, H, W), got {x.shape}")
        if self.normalization == "sample":
            std = np.maximum(x.std(axis=(1, 2, 3), keepdims=True), 1e-30)
            h = (x - x.mean(axis=(1, 2, 3), keepdims=True)) / std
            self._norm_cache = (h, std)
        else:
            h = (x - self.input_mean[None, :, None, None]) / self.input_std[None, :, None, None]
        for layer in self.layers.values():
            h = layer.forward(h)
        b, _, hh, ww = h.shape
        return h.reshape(b, 2, self.channels, hh, ww)

    __call__ = forward

    def backward(self, dout: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient w.r.t. the raw input."""
        b, _, c, h, w = dout.shape
        d = dout.reshape(b, 2 * c, h, w)
        for layer in reversed(list(self.layers.values())):
            d = layer.backward(d)
        if self.normalization == "sample":
            h, std = self._norm_cache
            ax = (1, 2, 3)
            return (d - d.mean(axis=ax, keepdims=True) - h * (d * h).mean(axis=ax, keepdims=True)) / std
        return d / self.input_std[None, :, None, None]
