"""Layers with explicit forward/backward passes.

Each layer owns named parameter arrays and same-shaped gradient slots.
A training-mode forward caches whatever backward needs; backward consumes
that cache (so it must directly follow the forward it differentiates),
accumulates into the gradient slots, and returns the gradient w.r.t. the
layer input.  Inference-mode forwards write no instance state at all,
which makes them safe to run concurrently on a shared layer.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError, StaleCacheError
from .ops import matmul_rows


def he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base class managing parameters, gradient slots, and the backward cache."""

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def add_param(self, key: str, value: np.ndarray) -> None:
        self.params[key] = value
        self.grads[key] = np.zeros_like(value)

    def children(self) -> list["Layer"]:
        return []

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0
        for child in self.children():
            child.zero_grads()

    def _take_cache(self):
        if self._cache is None:
            raise StaleCacheError(
                f"{self.name}: backward() without a preceding training-mode forward()"
            )
        cache, self._cache = self._cache, None
        return cache

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Affine(Layer):
    """y = x @ w + b over the last axis of [N, d_in] inputs."""

    def __init__(self, name, d_in, d_out, rng, *, bias=True, dtype=np.float32):
        super().__init__(name)
        self.d_in, self.d_out = d_in, d_out
        self.add_param("w", he_uniform(rng, (d_in, d_out), d_in, dtype))
        if bias:
            self.add_param("b", np.zeros(d_out, dtype=dtype))

    def forward(self, x, train=False):
        if x.shape[1] != self.d_in:
            raise ShapeError(
                f"{self.name}: input has {x.shape[1]} channels, expected {self.d_in}"
            )
        y = matmul_rows(x, self.params["w"])
        if "b" in self.params:
            y = y + self.params["b"]
        if train:
            self._cache = x
        return y

    def backward(self, grad_out):
        x = self._take_cache()
        self.grads["w"] += x.T @ grad_out
        if "b" in self.params:
            self.grads["b"] += grad_out.sum(axis=0)
        return grad_out @ self.params["w"].T


class ReLU(Layer):
    def __init__(self, name="relu"):
        super().__init__(name)

    def forward(self, x, train=False):
        if train:
            self._cache = x > 0
        return np.maximum(x, 0)

    def backward(self, grad_out):
        mask = self._take_cache()
        return grad_out * mask


class BatchNorm(Layer):
    """Per-channel normalization over all rows of a [N, d] input.

    Training mode normalizes with batch statistics (rows pooled jointly,
    i.e. batch x time for framewise sequence inputs) and folds them into
    the running estimates; inference mode uses the running estimates only.
    """

    def __init__(self, name, dim, *, momentum=0.1, epsilon=1e-5, dtype=np.float32):
        super().__init__(name)
        if not 0.0 < momentum < 1.0:
            raise ConfigError(f"{name}: momentum must be in (0, 1), got {momentum}")
        self.dim = dim
        self.momentum = momentum
        self.epsilon = epsilon
        self.add_param("gamma", np.ones(dim, dtype=dtype))
        self.add_param("beta", np.zeros(dim, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(dim, dtype=dtype)
        self.buffers["running_var"] = np.ones(dim, dtype=dtype)

    def forward(self, x, train=False):
        if x.shape[1] != self.dim:
            raise ShapeError(
                f"{self.name}: input has {x.shape[1]} channels, expected {self.dim}"
            )
        gamma, beta = self.params["gamma"], self.params["beta"]
        if not train:
            inv = 1.0 / np.sqrt(self.buffers["running_var"] + self.epsilon)
            return (x - self.buffers["running_mean"]) * (gamma * inv) + beta
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + self.epsilon)
        xhat = (x - mean) * inv_std
        m = self.momentum
        self.buffers["running_mean"] *= 1 - m
        self.buffers["running_mean"] += m * mean
        self.buffers["running_var"] *= 1 - m
        self.buffers["running_var"] += m * var
        self._cache = (xhat, inv_std)
        return xhat * gamma + beta

    def backward(self, grad_out):
        xhat, inv_std = self._take_cache()
        n = xhat.shape[0]
        self.grads["gamma"] += (grad_out * xhat).sum(axis=0)
        self.grads["beta"] += grad_out.sum(axis=0)
        g = grad_out * self.params["gamma"]
        # gradient through the batch statistics
        return inv_std * (g - g.mean(axis=0) - xhat * (g * xhat).sum(axis=0) / n)


class Dropout(Layer):
    """Inverted dropout: survivors scale by 1/(1-p), inference is identity.

    A p of 0 draws no randomness, so zero-rate layers stay deterministic
    even in training mode.
    """

    def __init__(self, name, p, *, seed=0):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"{name}: dropout rate must be in [0, 1), got {p}")
        self.p = p
        self.reseed(seed)

    def reseed(self, seed) -> None:
        self._rng = np.random.default_rng(seed)

    def rng_state(self) -> dict:
        return self._rng.bit_generator.state

    def set_rng_state(self, state: dict) -> None:
        self._rng.bit_generator.state = state

    def forward(self, x, train=False):
        if not train:
            return x
        if self.p == 0.0:
            # sentinel cache: identity mask without consuming randomness
            self._cache = "identity"
            return x
        keep = self._rng.random(x.shape) >= self.p
        mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.p)
        self._cache = mask
        return x * mask

    def backward(self, grad_out):
        mask = self._take_cache()
        if isinstance(mask, str):
            return grad_out
        return grad_out * mask


class Conv1d(Layer):
    """Valid dilated 1-D convolution layer (no bias at the kernel level)."""

    def __init__(self, name, spec, rng, *, dtype=np.float32):
        super().__init__(name)
        self.spec = spec
        fan_in = len(spec.taps) * spec.in_channels
        self.add_param(
            "w",
            he_uniform(rng, (len(spec.taps), spec.in_channels, spec.out_channels), fan_in, dtype),
        )

    def forward(self, x, train=False):
        from .ops import conv1d

        y = conv1d(x, self.params["w"], self.spec)
        if train:
            self._cache = x
        return y

    def backward(self, grad_out):
        x = self._take_cache()
        spec = self.spec
        t_out = grad_out.shape[0]
        grad_in = np.zeros_like(x)
        w, gw = self.params["w"], self.grads["w"]
        base = -spec.taps[0]
        for j, tap in enumerate(spec.taps):
            start = base + tap
            sl = slice(start, start + t_out)
            gw[j] += x[sl].T @ grad_out
            grad_in[sl] += grad_out @ w[j].T
        return grad_in


class Conv2d(Layer):
    """Same-padded 3x3 convolution with optional frequency striding and bias."""

    def __init__(self, name, c_in, c_out, rng, *, freq_stride=1, bias=True, dtype=np.float32):
        super().__init__(name)
        if freq_stride not in (1, 2):
            raise ConfigError(f"{name}: freq_stride must be 1 or 2, got {freq_stride}")
        self.c_in, self.c_out = c_in, c_out
        self.freq_stride = freq_stride
        self.add_param("w", he_uniform(rng, (3, 3, c_in, c_out), 9 * c_in, dtype))
        if bias:
            self.add_param("b", np.zeros(c_out, dtype=dtype))

    def forward(self, x, train=False):
        from .ops import _conv2d_same

        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ShapeError(
                f"{self.name}: expected [T, F, {self.c_in}] input, got {x.shape}"
            )
        y = _conv2d_same(x, self.params["w"], self.freq_stride)
        if "b" in self.params:
            y = y + self.params["b"]
        if train:
            self._cache = x
        return y

    def backward(self, grad_out):
        x = self._take_cache()
        t, f, _ = x.shape
        s = self.freq_stride
        f_out = grad_out.shape[1]
        padded = np.zeros((t + 2, f + 2, self.c_in), dtype=x.dtype)
        padded[1 : t + 1, 1 : f + 1] = x
        grad_padded = np.zeros_like(padded)
        w, gw = self.params["w"], self.grads["w"]
        for i in range(3):
            for j in range(3):
                stop = j + s * (f_out - 1) + 1
                patch = padded[i : i + t, j : stop : s]
                gw[i, j] += np.tensordot(patch, grad_out, axes=([0, 1], [0, 1]))
                grad_padded[i : i + t, j : stop : s] += np.tensordot(
                    grad_out, w[i, j], axes=([2], [1])
                )
        if "b" in self.params:
            self.grads["b"] += grad_out.sum(axis=(0, 1))
        return grad_padded[1 : t + 1, 1 : f + 1]
