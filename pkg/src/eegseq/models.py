"""The four window classifiers, their configurations and parameter counting."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Any

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, UnsupportedOperationError
from .layers import (
    LSTM,
    Conv1D,
    Dense,
    Dropout,
    HeadMatrices,
    LayerNorm,
    Module,
    MultiHeadAttention,
    Pool1D,
    PositionalEmbedding,
)
from .tensor import Tensor

FAMILIES = ("transformer", "cnn1d", "lstm", "cnn_lstm")
DISPLAY_NAMES = {"transformer": "Transformer", "cnn1d": "CNN1D", "lstm": "LSTM", "cnn_lstm": "CNN-LSTM"}
BUDGET_TARGETS = {"transformer": 34169, "cnn1d": 34855, "lstm": 35225, "cnn_lstm": 33789}
BUDGET_TOLERANCE = 0.05
N_CLASSES = 2


def normalize_family(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    aliases = {"cnn": "cnn1d", "cnn_1d": "cnn1d", "cnnlstm": "cnn_lstm"}
    key = aliases.get(key, key)
    if key not in FAMILIES:
        raise ConfigError(f"unknown model family {name!r}; choose from {', '.join(FAMILIES)}")
    return key


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for one family.

    Fields irrelevant to a family are ignored by it (e.g. ``d_model`` for
    ``cnn1d``).  ``segments`` splits the window into equal time steps for the
    transformer and the LSTM.
    """

    family: str
    window_length: int = 2000
    segments: int = 8
    d_model: int = 64
    heads: int = 4
    blocks: int = 1
    ff_dim: int = 32
    embed_activation: str = "linear"
    conv_channels: tuple[int, ...] = ()
    conv_kernels: tuple[int, ...] = ()
    conv_strides: tuple[int, ...] = ()
    conv_pools: tuple[int, ...] = ()
    conv_padding: int = 0
    conv_activation: str = "relu"
    pool_mode: str = "max"
    lstm_hidden: tuple[int, ...] = ()
    dense_hidden: tuple[int, ...] = ()
    dense_activation: str = "relu"
    dropout: float = 0.0
    residual: bool = True
    layer_norm: bool = True
    forget_bias: bool = True
    budget_matched: bool = False

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items()}
        kwargs["family"] = normalize_family(kwargs["family"])
        return cls(**kwargs)


# Budget-matched configurations for 2000-sample windows, found by a grid
# search over layer widths with count_parameters.
SHIPPED_CONFIGS: dict[str, ModelConfig] = {
    "transformer": ModelConfig(
        family="transformer", segments=40, d_model=64, heads=4, blocks=1, ff_dim=88,
        dense_hidden=(), budget_matched=True,
    ),
    "cnn1d": ModelConfig(
        family="cnn1d",
        conv_channels=(8, 16, 16),
        conv_kernels=(7, 5, 5),
        conv_strides=(1, 1, 1),
        conv_pools=(4, 4, 4),
        dense_hidden=(70,),
        budget_matched=True,
    ),
    "lstm": ModelConfig(family="lstm", segments=20, lstm_hidden=(56,), dense_hidden=(), budget_matched=True),
    "cnn_lstm": ModelConfig(
        family="cnn_lstm",
        conv_channels=(16, 32, 32),
        conv_kernels=(7, 5, 5),
        conv_strides=(1, 1, 1),
        conv_pools=(4, 4, 4),
        lstm_hidden=(64,),
        dense_hidden=(),
        budget_matched=True,
    ),
}


def shipped_config(family: str, window_length: int | None = None, **overrides) -> ModelConfig:
    """A shipped config; any change to it drops the budget-matched tag."""
    cfg = SHIPPED_CONFIGS[normalize_family(family)]
    if window_length is not None and window_length != cfg.window_length:
        overrides["window_length"] = window_length
    changed = {k: v for k, v in overrides.items() if getattr(cfg, k) != v}
    if changed:
        cfg = cfg.replace(budget_matched=False, **changed)
    return cfg


# ----------------------------------------------------------------------------
# shape arithmetic and closed-form parameter counts


def _conv_stack_shape(cfg: ModelConfig) -> tuple[int, int]:
    n = len(cfg.conv_channels)
    if n == 0:
        raise ConfigError(f"{cfg.family} needs at least one conv layer")
    for name in ("conv_kernels", "conv_strides", "conv_pools"):
        if len(getattr(cfg, name)) != n:
            raise ConfigError(f"{name} has {len(getattr(cfg, name))} entries, conv_channels has {n}")
    channels, length = 1, cfg.window_length
    for i, (c, k, s, p) in enumerate(zip(cfg.conv_channels, cfg.conv_kernels, cfg.conv_strides, cfg.conv_pools)):
        if min(c, k, s, p) < 1:
            raise ConfigError(f"conv layer {i}: channels, kernel, stride and pool must be positive")
        span = length + 2 * cfg.conv_padding
        if span < k:
            raise ConfigError(f"conv layer {i}: kernel {k} longer than padded input {span}")
        length = (span - k) // s + 1
        if length < p:
            raise ConfigError(f"conv layer {i}: pool {p} longer than input {length}")
        length //= p
        channels = c
    return channels, length


def validate(cfg: ModelConfig) -> None:
    """Raise ConfigError if ``cfg`` cannot be built."""
    if cfg.family not in FAMILIES:
        raise ConfigError(f"unknown model family {cfg.family!r}")
    if cfg.window_length < 1:
        raise ConfigError(f"window_length must be positive, got {cfg.window_length}")
    if not 0.0 <= cfg.dropout < 1.0:
        raise ConfigError(f"dropout must lie in [0, 1), got {cfg.dropout}")
    if cfg.pool_mode not in ("max", "mean"):
        raise ConfigError(f"pool_mode must be 'max' or 'mean', got {cfg.pool_mode!r}")
    if any(w < 1 for w in cfg.dense_hidden):
        raise ConfigError("dense_hidden widths must be positive")
    if cfg.family in ("transformer", "lstm"):
        if cfg.segments < 1 or cfg.window_length % cfg.segments:
            raise ConfigError(f"segments={cfg.segments} does not divide window_length={cfg.window_length}")
    if cfg.family == "transformer":
        if cfg.d_model < 1 or cfg.heads < 1 or cfg.d_model % cfg.heads:
            raise ConfigError(f"d_model={cfg.d_model} is not divisible by heads={cfg.heads}")
        if cfg.blocks < 1 or cfg.ff_dim < 1:
            raise ConfigError("blocks and ff_dim must be positive")
    if cfg.family in ("cnn1d", "cnn_lstm"):
        _conv_stack_shape(cfg)
    if cfg.family in ("lstm", "cnn_lstm"):
        if not cfg.lstm_hidden or any(h < 1 for h in cfg.lstm_hidden):
            raise ConfigError("lstm_hidden needs at least one positive width")


def _dense_head_count(width: int, hidden: tuple[int, ...]) -> int:
    total = 0
    for h in hidden:
        total += Dense.count(width, h)
        width = h
    return total + Dense.count(width, N_CLASSES)


def count_parameters(cfg: ModelConfig) -> int:
    """Closed-form trainable parameter count of ``cfg``."""
    validate(cfg)
    if cfg.family == "transformer":
        d = cfg.d_model
        seg_w = cfg.window_length // cfg.segments
        total = Dense.count(seg_w, d) + PositionalEmbedding.count(cfg.segments, d)
        per_block = MultiHeadAttention.count(d) + Dense.count(d, cfg.ff_dim) + Dense.count(cfg.ff_dim, d)
        if cfg.layer_norm:
            per_block += 2 * LayerNorm.count(d)
        return total + cfg.blocks * per_block + _dense_head_count(d, cfg.dense_hidden)
    if cfg.family == "lstm":
        width = cfg.window_length // cfg.segments
        total = 0
        for h in cfg.lstm_hidden:
            total += LSTM.count(width, h)
            width = h
        return total + _dense_head_count(width, cfg.dense_hidden)
    total, in_ch = 0, 1
    for c, k in zip(cfg.conv_channels, cfg.conv_kernels):
        total += Conv1D.count(in_ch, c, k)
        in_ch = c
    channels, length = _conv_stack_shape(cfg)
    if cfg.family == "cnn1d":
        return total + _dense_head_count(channels * length, cfg.dense_hidden)
    width = channels
    for h in cfg.lstm_hidden:
        total += LSTM.count(width, h)
        width = h
    return total + _dense_head_count(width, cfg.dense_hidden)


def budget_deviation(cfg: ModelConfig) -> float:
    """Signed relative deviation of the count from the family's budget target."""
    target = BUDGET_TARGETS[cfg.family]
    return (count_parameters(cfg) - target) / target


def within_budget(cfg: ModelConfig) -> bool:
    return abs(budget_deviation(cfg)) <= BUDGET_TOLERANCE


# ----------------------------------------------------------------------------
# models


def segment(x, n: int):
    """Split the last axis (length L) into ``n`` equal rows: [..., L] -> [..., n, L/n]."""
    length = x.shape[-1]
    if n < 1 or length % n:
        raise ConfigError(f"cannot split length {length} into {n} equal segments")
    shape = tuple(x.shape[:-1]) + (n, length // n)
    if isinstance(x, Tensor):
        return T.reshape(x, shape)
    return np.asarray(x).reshape(shape)


class TransformerBlock(Module):
    """Pre-norm self-attention block: x + MHA(LN(x)), then x + FFN(LN(x))."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype):
        d = cfg.d_model
        self.residual = cfg.residual
        self.ln1 = LayerNorm(d, dtype=dtype) if cfg.layer_norm else None
        self.attn = MultiHeadAttention(d, cfg.heads, rng=rng, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype=dtype) if cfg.layer_norm else None
        self.ff1 = Dense(d, cfg.ff_dim, activation="relu", rng=rng, dtype=dtype)
        self.ff2 = Dense(cfg.ff_dim, d, rng=rng, dtype=dtype)
        self.drop = Dropout(cfg.dropout)

    def forward(self, x, training=False, rng=None, details=None, block=0):
        h = self.ln1(x) if self.ln1 is not None else x
        if details is not None:
            start = len(details)
        a = self.attn(h, details=details, block=block)
        if details is not None:
            for hm in details[start:]:
                hm.X = h.data.copy()
        a = self.drop(a, training, rng)
        x = T.add(x, a) if self.residual else a
        h = self.ln2(x) if self.ln2 is not None else x
        f = self.drop(self.ff2(self.ff1(h)), training, rng)
        return T.add(x, f) if self.residual else f


class Model(Module):
    """A window classifier: [B, window_length] -> logits [B, 2]."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        validate(config)
        self.config = config
        self.seed = seed
        self.family = config.family
        self.window_length = config.window_length
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        cfg = config
        self.drop = Dropout(cfg.dropout)
        if cfg.family == "transformer":
            seg_w = cfg.window_length // cfg.segments
            self.embed = Dense(seg_w, cfg.d_model, activation=cfg.embed_activation, rng=rng, dtype=dtype)
            self.pos = PositionalEmbedding(cfg.segments, cfg.d_model, rng=rng, dtype=dtype)
            self.blocks = [TransformerBlock(cfg, rng, dtype) for _ in range(cfg.blocks)]
            width = cfg.d_model
        else:
            width = None
            if cfg.family in ("cnn1d", "cnn_lstm"):
                self.convs = []
                self.pools = []
                in_ch = 1
                for c, k, s, p in zip(cfg.conv_channels, cfg.conv_kernels, cfg.conv_strides, cfg.conv_pools):
                    self.convs.append(
                        Conv1D(in_ch, c, k, stride=s, padding=cfg.conv_padding,
                               activation=cfg.conv_activation, rng=rng, dtype=dtype)
                    )
                    self.pools.append(Pool1D(p, cfg.pool_mode))
                    in_ch = c
                channels, length = _conv_stack_shape(cfg)
                width = channels * length if cfg.family == "cnn1d" else channels
            else:
                width = cfg.window_length // cfg.segments
            if cfg.family in ("lstm", "cnn_lstm"):
                self.lstms = []
                for h in cfg.lstm_hidden:
                    self.lstms.append(LSTM(width, h, forget_bias=cfg.forget_bias, rng=rng, dtype=dtype))
                    width = h
        self.head = []
        for h in cfg.dense_hidden:
            self.head.append(Dense(width, h, activation=cfg.dense_activation, rng=rng, dtype=dtype))
            width = h
        self.out = Dense(width, N_CLASSES, rng=rng, dtype=dtype)
        if cfg.budget_matched and not within_budget(cfg):
            raise ConfigError(
                f"{cfg.family} config tagged budget-matched has {count_parameters(cfg)} parameters, "
                f"outside ±{BUDGET_TOLERANCE:.0%} of {BUDGET_TARGETS[cfg.family]}"
            )

    def _check_input(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            x = T.reshape(x, (1, x.shape[0]))
        if x.ndim != 2 or x.shape[-1] != self.window_length:
            raise DimensionError(
                f"input window length {x.shape[-1]} does not match model window length {self.window_length}"
            )
        return x

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None,
                details: list | None = None) -> Tensor:
        x = T.as_tensor(x)
        if x.dtype != self.dtype:
            x = Tensor(x.data.astype(self.dtype))
        x = self._check_input(x)
        cfg = self.config
        batch = x.shape[0]
        if cfg.family == "transformer":
            h = self.pos(self.embed(segment(x, cfg.segments)))
            for b, block in enumerate(self.blocks):
                h = block(h, training, rng, details, b)
            h = T.reduce_mean(h, axis=1)
        else:
            if cfg.family in ("cnn1d", "cnn_lstm"):
                h = T.reshape(x, (batch, 1, self.window_length))
                for conv, pool in zip(self.convs, self.pools):
                    h = pool(conv(h))
                if cfg.family == "cnn1d":
                    h = T.reshape(h, (batch, h.shape[1] * h.shape[2]))
                else:
                    h = T.swapaxes(h, 1, 2)
            else:
                h = segment(x, cfg.segments)
            if cfg.family in ("lstm", "cnn_lstm"):
                for i, lstm in enumerate(self.lstms):
                    h = lstm(h, return_sequence=i < len(self.lstms) - 1)
        h = self.drop(h, training, rng)
        for dense in self.head:
            h = self.drop(dense(h), training, rng)
        return self.out(h)

    def loss(self, X, y, training: bool = False, rng: np.random.Generator | None = None):
        """Mean cross-entropy and the class probabilities for a batch."""
        logits = self.forward(X, training=training, rng=rng)
        loss = T.cross_entropy(logits, y)
        probs = _softmax_np(logits.data)
        return loss, probs

    def predict_proba(self, X, batch_size: int = 256) -> np.ndarray:
        X = np.asarray(X)
        if X.ndim == 1:
            X = X[None, :]
        out = []
        with T.no_grad():
            for i in range(0, X.shape[0], batch_size):
                out.append(_softmax_np(self.forward(X[i : i + batch_size]).data))
        if not out:
            return np.zeros((0, N_CLASSES), dtype=self.dtype)
        return np.concatenate(out, axis=0)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        if set(params) != set(state):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise ConfigError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, p in params.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise DimensionError(f"{name}: shape {value.shape} != {p.shape}")
            p.data = value.astype(p.dtype, copy=True)


def _softmax_np(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def build(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    """Construct and deterministically initialise a model."""
    return Model(config, seed=seed, dtype=dtype)


def forward_classify(model: Model, x) -> np.ndarray:
    """Probability pair [p(class0), p(class1)] for one window."""
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x.ndim != 1:
        raise DimensionError(f"forward_classify expects a single window, got shape {x.shape}")
    return model.predict_proba(x[None, :])[0]


def export_qkv(model: Model, x) -> list[HeadMatrices]:
    """Per-block, per-head Q, K, V and attention matrices for one window.

    Each entry's ``X`` holds the rows fed to that block's attention layer, so
    ``Q == X @ W_Q[:, head columns]``.
    """
    if model.family != "transformer":
        raise UnsupportedOperationError(f"Q/K/V export needs a transformer model, got {model.family}")
    x = np.asarray(x.data if isinstance(x, Tensor) else x)
    if x.ndim != 1:
        raise DimensionError(f"export_qkv expects a single window, got shape {x.shape}")
    details: list[HeadMatrices] = []
    with T.no_grad():
        model.forward(x[None, :], details=details)
    for hm in details:
        hm.Q, hm.K, hm.V, hm.A = hm.Q[0], hm.K[0], hm.V[0], hm.A[0]
        hm.X = hm.X[0]
    return details
