"""Parameterised network layers built from the autodiff primitives.

Layers accept either a single example or a leading batch axis:

* ``Conv1D`` / ``Pool1D``: ``[C, L]`` or ``[B, C, L]``
* ``Dense``: ``[..., in]``
* ``LSTM``: ``[T, d]`` or ``[B, T, d]``
* ``MultiHeadAttention`` / ``PositionalEmbedding`` / ``LayerNorm``: ``[N, d]`` or ``[B, N, d]``
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .tensor import Parameter, Tensor

ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "tanh": T.tanh_act,
    "linear": lambda x: x,
}


def get_activation(name: str | None) -> Callable[[Tensor], Tensor]:
    if name is None:
        return ACTIVATIONS["linear"]
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def _rng(rng):
    return rng if rng is not None else np.random.default_rng(0)


class Module:
    """Base class: collects parameters from attributes in definition order."""

    training = False

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for attr, value in vars(self).items():
            name = f"{prefix}{attr}"
            if isinstance(value, Parameter):
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Conv1D(Module):
    """1-D cross-correlation (no kernel flip) with zero padding."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        activation: str | None = None,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ConfigError(
                f"Conv1D needs positive channels/kernel/stride and nonnegative padding, got "
                f"in={in_channels} out={out_channels} k={kernel_size} stride={stride} padding={padding}"
            )
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.activation = activation
        self._act = get_activation(activation)
        rng = _rng(rng)
        self.weight = Parameter(
            glorot_uniform(
                rng,
                (out_channels, in_channels, kernel_size),
                in_channels * kernel_size,
                out_channels * kernel_size,
                dtype,
            ),
            "weight",
        )
        self.bias = Parameter(np.zeros(out_channels, dtype=dtype), "bias")

    @staticmethod
    def count(in_channels: int, out_channels: int, kernel_size: int) -> int:
        return out_channels * (in_channels * kernel_size + 1)

    def output_length(self, length: int) -> int:
        span = length + 2 * self.padding
        if span < self.kernel_size:
            raise ConfigError(
                f"Conv1D kernel of size {self.kernel_size} is longer than the padded input ({span})"
            )
        return (span - self.kernel_size) // self.stride + 1

    def forward(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise DimensionError(f"Conv1D expects [B, {self.in_channels}, L], got {x.shape}")
        out_len = self.output_length(x.shape[-1])
        xp = T.pad_last(x, self.padding, self.padding)
        stop_span = self.stride * (out_len - 1) + 1
        out = None
        for a in range(self.kernel_size):
            tap = T.take(xp, (Ellipsis, slice(a, a + stop_span, self.stride)))
            w_a = T.take(self.weight, (slice(None), slice(None), a))
            term = T.matmul(w_a, tap)
            out = term if out is None else T.add(out, term)
        out = T.add(out, T.reshape(self.bias, (self.out_channels, 1)))
        out = self._act(out)
        if squeeze:
            out = T.reshape(out, out.shape[1:])
        return out


class Pool1D(Module):
    """Non-overlapping max or mean pooling; a trailing remainder is dropped."""

    def __init__(self, size: int, mode: str = "max"):
        if size < 1:
            raise ConfigError(f"pool size must be positive, got {size}")
        if mode not in ("max", "mean"):
            raise ConfigError(f"pool mode must be 'max' or 'mean', got {mode!r}")
        self.size = size
        self.mode = mode

    def output_length(self, length: int) -> int:
        if length < self.size:
            raise ConfigError(f"pool size {self.size} exceeds input length {length}")
        return length // self.size

    def forward(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        n = self.output_length(x.shape[-1])
        if n * self.size != x.shape[-1]:
            x = T.take(x, (Ellipsis, slice(0, n * self.size)))
        windows = T.reshape(x, x.shape[:-1] + (n, self.size))
        if self.mode == "max":
            return T.reduce_max(windows, axis=-1)
        return T.reduce_mean(windows, axis=-1)


class Dense(Module):
    """y = phi(x W^T + b) with W stored as [out x in]."""

    def __init__(
        self,
        in_features: int,
        out_features: int,
        activation: str | None = None,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if in_features < 1 or out_features < 1:
            raise ConfigError(f"Dense needs positive sizes, got {in_features}->{out_features}")
        self.in_features = in_features
        self.out_features = out_features
        self.activation = activation
        self._act = get_activation(activation)
        rng = _rng(rng)
        self.weight = Parameter(
            glorot_uniform(rng, (out_features, in_features), in_features, out_features, dtype), "weight"
        )
        self.bias = Parameter(np.zeros(out_features, dtype=dtype), "bias")

    @staticmethod
    def count(in_features: int, out_features: int) -> int:
        return out_features * (in_features + 1)

    def forward(self, x: Tensor) -> Tensor:
        x = T.as_tensor(x)
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Dense expects last axis {self.in_features}, got shape {x.shape}")
        squeeze = x.ndim == 1
        if squeeze:
            x = T.reshape(x, (1, x.shape[0]))
        y = T.add_bias(T.matmul(x, T.transpose(self.weight)), self.bias)
        y = self._act(y)
        return T.reshape(y, (self.out_features,)) if squeeze else y


@dataclass
class LSTMState:
    h: Tensor
    c: Tensor


class LSTM(Module):
    """Single LSTM layer with separate per-gate weights acting on [h_prev, x_t]."""

    def __init__(
        self,
        input_size: int,
        hidden_size: int,
        forget_bias: bool = True,
        rng: np.random.Generator | None = None,
        dtype=np.float64,
    ):
        if input_size < 1 or hidden_size < 1:
            raise ConfigError(f"LSTM needs positive sizes, got d={input_size} h={hidden_size}")
        self.input_size = input_size
        self.hidden_size = hidden_size
        rng = _rng(rng)
        d, h = input_size, hidden_size
        shape = (h, h + d)
        self.w_f = Parameter(glorot_uniform(rng, shape, h + d, h, dtype), "w_f")
        self.w_i = Parameter(glorot_uniform(rng, shape, h + d, h, dtype), "w_i")
        self.w_c = Parameter(glorot_uniform(rng, shape, h + d, h, dtype), "w_c")
        self.w_o = Parameter(glorot_uniform(rng, shape, h + d, h, dtype), "w_o")
        self.b_f = Parameter(np.full(h, 1.0 if forget_bias else 0.0, dtype=dtype), "b_f")
        self.b_i = Parameter(np.zeros(h, dtype=dtype), "b_i")
        self.b_c = Parameter(np.zeros(h, dtype=dtype), "b_c")
        self.b_o = Parameter(np.zeros(h, dtype=dtype), "b_o")

    @staticmethod
    def count(input_size: int, hidden_size: int) -> int:
        return 4 * hidden_size * (input_size + hidden_size + 1)

    def _gate(self, w: Parameter, b: Parameter, z: Tensor) -> Tensor:
        return T.add_bias(T.matmul(z, T.transpose(w)), b)

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
        x_t, h_prev, c_prev = T.as_tensor(x_t), T.as_tensor(h_prev), T.as_tensor(c_prev)
        if (
            x_t.shape[-1] != self.input_size
            or h_prev.shape[-1] != self.hidden_size
            or c_prev.shape != h_prev.shape
            or x_t.shape[:-1] != h_prev.shape[:-1]
        ):
            raise DimensionError(
                f"lstm_step: x_t {x_t.shape}, h_prev {h_prev.shape}, c_prev {c_prev.shape} "
                f"do not fit d={self.input_size}, h={self.hidden_size}"
            )
        single = x_t.ndim == 1
        if single:
            x_t = T.reshape(x_t, (1, self.input_size))
            h_prev = T.reshape(h_prev, (1, self.hidden_size))
            c_prev = T.reshape(c_prev, (1, self.hidden_size))
        z = T.concat([h_prev, x_t], axis=-1)
        f = T.sigmoid(self._gate(self.w_f, self.b_f, z))
        i = T.sigmoid(self._gate(self.w_i, self.b_i, z))
        cand = T.tanh_act(self._gate(self.w_c, self.b_c, z))
        c = T.add(T.mul(f, c_prev), T.mul(i, cand))
        o = T.sigmoid(self._gate(self.w_o, self.b_o, z))
        h = T.mul(o, T.tanh_act(c))
        if single:
            h = T.reshape(h, (self.hidden_size,))
            c = T.reshape(c, (self.hidden_size,))
        return h, c

    def forward(self, x: Tensor, state: LSTMState | None = None, return_sequence: bool = False):
        """Run over ``x`` of shape [B, T, d]; return last h (or all h as [B, T, h])."""
        x = T.as_tensor(x)
        single = x.ndim == 2
        if single:
            x = T.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[-1] != self.input_size:
            raise DimensionError(f"LSTM expects [B, T, {self.input_size}], got {x.shape}")
        batch, steps = x.shape[0], x.shape[1]
        if state is None:
            zeros = np.zeros((batch, self.hidden_size), dtype=x.dtype)
            h, c = Tensor(zeros), Tensor(zeros.copy())
        else:
            h, c = state.h, state.c
        outputs = []
        for t in range(steps):
            h, c = self.step(T.take(x, (slice(None), t)), h, c)
            if return_sequence:
                outputs.append(T.reshape(h, (batch, 1, self.hidden_size)))
        out = T.concat(outputs, axis=1) if return_sequence else h
        if single:
            out = T.reshape(out, out.shape[1:])
        return out


@dataclass
class HeadMatrices:
    """Per-head attention intermediates for one input sequence."""

    block: int
    head: int
    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray
    X: np.ndarray | None = None


class MultiHeadAttention(Module):
    """softmax(Q K^T / sqrt(d_k)) V per head, heads concatenated then projected.

    Q, K and V of head ``j`` are the column block ``[j*d_k, (j+1)*d_k)`` of
    X W_Q, X W_K and X W_V.  Only the output projection has a bias.
    """

    def __init__(self, d_model: int, heads: int, rng: np.random.Generator | None = None, dtype=np.float64):
        if d_model < 1 or heads < 1 or d_model % heads:
            raise ConfigError(f"d_model={d_model} is not divisible by heads={heads}")
        self.d_model = d_model
        self.heads = heads
        self.d_k = d_model // heads
        rng = _rng(rng)
        sq = (d_model, d_model)
        self.W_Q = Parameter(glorot_uniform(rng, sq, d_model, d_model, dtype), "W_Q")
        self.W_K = Parameter(glorot_uniform(rng, sq, d_model, d_model, dtype), "W_K")
        self.W_V = Parameter(glorot_uniform(rng, sq, d_model, d_model, dtype), "W_V")
        self.W_O = Parameter(glorot_uniform(rng, sq, d_model, d_model, dtype), "W_O")
        self.b_O = Parameter(np.zeros(d_model, dtype=dtype), "b_O")

    @staticmethod
    def count(d_model: int) -> int:
        return 4 * d_model * d_model + d_model

    def forward(self, X: Tensor, details: list | None = None, block: int = 0) -> Tensor:
        """Attend over the rows of ``X``; per-head matrices are appended to ``details``."""
        X = T.as_tensor(X)
        if X.ndim not in (2, 3) or X.shape[-1] != self.d_model or X.shape[-2] < 1:
            raise DimensionError(f"attention expects [..., N>=1, {self.d_model}], got {X.shape}")
        Q = T.matmul(X, self.W_Q)
        K = T.matmul(X, self.W_K)
        V = T.matmul(X, self.W_V)
        inv_scale = 1.0 / math.sqrt(self.d_k)
        outs = []
        for j in range(self.heads):
            cols = (Ellipsis, slice(j * self.d_k, (j + 1) * self.d_k))
            q, k, v = T.take(Q, cols), T.take(K, cols), T.take(V, cols)
            logits = T.scale(T.matmul(q, T.swapaxes(k, -1, -2)), inv_scale)
            A = T.softmax(logits, axis=-1)
            outs.append(T.matmul(A, v))
            if details is not None:
                details.append(HeadMatrices(block, j, q.data.copy(), k.data.copy(), v.data.copy(), A.data.copy()))
        merged = outs[0] if self.heads == 1 else T.concat(outs, axis=-1)
        return T.add_bias(T.matmul(merged, self.W_O), self.b_O)


class PositionalEmbedding(Module):
    """Learned table of one vector per segment, added to the segment features."""

    def __init__(self, n_segments: int, d_model: int, rng: np.random.Generator | None = None, dtype=np.float64):
        if n_segments < 1 or d_model < 1:
            raise ConfigError(f"PositionalEmbedding needs positive sizes, got {n_segments}x{d_model}")
        self.n_segments = n_segments
        self.d_model = d_model
        rng = _rng(rng)
        self.table = Parameter(
            glorot_uniform(rng, (n_segments, d_model), n_segments, d_model, dtype), "table"
        )

    @staticmethod
    def count(n_segments: int, d_model: int) -> int:
        return n_segments * d_model

    def forward(self, X: Tensor) -> Tensor:
        X = T.as_tensor(X)
        if X.shape[-2:] != self.table.shape:
            raise DimensionError(f"positional_add: input {X.shape} does not end in table shape {self.table.shape}")
        return T.add(X, self.table)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6, dtype=np.float64):
        self.dim = dim
        self.eps = eps
        self.gamma = Parameter(np.ones(dim, dtype=dtype), "gamma")
        self.beta = Parameter(np.zeros(dim, dtype=dtype), "beta")

    @staticmethod
    def count(dim: int) -> int:
        return 2 * dim

    def forward(self, x: Tensor) -> Tensor:
        mu = T.reduce_mean(x, axis=-1, keepdims=True)
        centered = T.sub(x, mu)
        var = T.reduce_mean(T.mul(centered, centered), axis=-1, keepdims=True)
        normed = T.div(centered, T.sqrt(T.add(var, self.eps)))
        return T.add(T.mul(normed, self.gamma), self.beta)


class Dropout(Module):
    """Inverted dropout; identity unless ``training`` and ``rate > 0``."""

    def __init__(self, rate: float = 0.0):
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate

    def forward(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        if not training or self.rate == 0.0:
            return x
        if rng is None:
            raise ConfigError("dropout in training mode needs a random generator")
        keep = (rng.random(x.shape) >= self.rate).astype(x.dtype) / (1.0 - self.rate)
        return T.mul(x, Tensor(keep))


# ----------------------------------------------------------------------------
# functional entry points


def conv1d_forward(layer: Conv1D, x: Tensor) -> Tensor:
    return layer(x)


def pool_forward(layer: Pool1D, x: Tensor) -> Tensor:
    return layer(x)


def lstm_step(layer: LSTM, x_t: Tensor, h_prev: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    return layer.step(x_t, h_prev, c_prev)


def attention_forward(layer: MultiHeadAttention, X: Tensor, return_weights: bool = False):
    if return_weights:
        details: list[HeadMatrices] = []
        out = layer(X, details=details)
        return out, [d.A for d in details]
    return layer(X)


def positional_add(emb: PositionalEmbedding, X: Tensor) -> Tensor:
    return emb(X)
