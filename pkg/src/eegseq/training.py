"""Adam, the mini-batch training loop with early stopping, and test-set evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Split, WindowDataset, carve_validation
from .errors import ConfigError, ContractError
from .metrics import ConfusionMatrix, MetricSet, auc, confusion_from_scores, metrics, roc_curve
from .tensor import Parameter


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 150
    batch_size: int = 128
    patience: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.15
    seeds: tuple[int, ...] = tuple(range(10))

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if not 0 <= self.patience < self.epochs:
            raise ConfigError(f"patience must lie in [0, epochs), got {self.patience} with {self.epochs} epochs")
        if not 0.0 <= self.val_fraction < 0.5:
            raise ConfigError(f"val_fraction must lie in [0, 0.5), got {self.val_fraction}")
        if self.lr <= 0 or self.eps <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("Adam needs lr > 0, eps > 0 and betas in [0, 1)")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


# ----------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, t: int, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns (new_params, new_state)."""
    if t < 1:
        raise ContractError(f"Adam step index starts at 1, got {t}")
    new_params, new_m, new_v = [], [], []
    c1 = 1 - beta1**t
    c2 = 1 - beta2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * (g * g)
        m_hat = m / c1
        v_hat = v / c2
        new_params.append((p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(new_m, new_v, t)


class Adam:
    """Stateful wrapper applying :func:`adam_step` to Parameters."""

    def __init__(self, params: list[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState.zeros_like([p.data for p in self.params])

    def step(self) -> None:
        t = self.state.t + 1
        values, self.state = adam_step(
            [p.data for p in self.params],
            [p.grad for p in self.params],
            self.state,
            t,
            self.lr,
            self.beta1,
            self.beta2,
            self.eps,
        )
        for p, value in zip(self.params, values):
            p.data = value

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()


# ----------------------------------------------------------------------------
# training loop


@dataclass
class History:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float | None] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)
    val_acc: list[float | None] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def rows(self) -> list[tuple]:
        return [
            (e + 1, self.train_loss[e], self.val_loss[e], self.train_acc[e], self.val_acc[e])
            for e in range(self.epochs_run)
        ]

    def to_dict(self) -> dict:
        return {
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
            "best_epoch": self.best_epoch,
            "epochs_run": self.epochs_run,
            "stopped_early": self.stopped_early,
        }


def _accuracy(probs: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((probs[:, 1] > 0.5) == (y == 1)))


def fit(model, X_train, y_train, X_val, y_val, config: TrainConfig, seed: int = 0) -> History:
    """Minimise cross-entropy with Adam; early-stop on validation loss.

    The epoch order comes from a generator seeded by ``seed``.  When
    validation data is given, training halts once ``patience`` consecutive
    epochs fail to lower the best validation loss, and the weights of the
    best epoch are restored.  Without validation data every epoch runs.
    """
    config.validate()
    X_train = np.asarray(X_train)
    y_train = np.asarray(y_train, dtype=np.int64)
    n = len(y_train)
    if n == 0:
        raise ConfigError("training set is empty")
    has_val = X_val is not None and len(y_val) > 0
    if has_val:
        X_val = np.asarray(X_val)
        y_val = np.asarray(y_val, dtype=np.int64)
    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])
    opt = Adam(model.parameters(), config.lr, config.beta1, config.beta2, config.eps)
    history = History()
    best_loss = math.inf
    best_state = model.state_dict()
    wait = 0
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n)
        loss_sum = 0.0
        correct = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            opt.zero_grad()
            loss, probs = model.loss(X_train[idx], y_train[idx], training=True, rng=dropout_rng)
            T.backward(loss)
            opt.step()
            loss_sum += float(loss.data) * len(idx)
            correct += _accuracy(probs, y_train[idx]) * len(idx)
        history.train_loss.append(loss_sum / n)
        history.train_acc.append(correct / n)
        if not has_val:
            history.val_loss.append(None)
            history.val_acc.append(None)
            history.best_epoch = epoch
            continue
        with T.no_grad():
            vloss, vprobs = model.loss(X_val, y_val, training=False)
        vloss = float(vloss.data)
        history.val_loss.append(vloss)
        history.val_acc.append(_accuracy(vprobs, y_val))
        if vloss < best_loss:
            best_loss = vloss
            best_state = model.state_dict()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                history.stopped_early = True
                break
    if has_val:
        model.load_state_dict(best_state)
    return history


def train(model, ds: WindowDataset, split: Split, config: TrainConfig, seed: int = 0) -> History:
    """Train on ``split.train``; validate on ``split.val`` or a carved stratified subset."""
    config.validate()
    if len(split.train) == 0:
        raise ConfigError("training split is empty")
    if ds.window_length != model.window_length:
        raise ConfigError(
            f"dataset window length {ds.window_length} != model window length {model.window_length}"
        )
    if len(split.val) == 0 and config.val_fraction > 0:
        split = carve_validation(split, ds.labels, config.val_fraction, seed)
        if len(split.val) == 0:
            raise ConfigError("validation split is empty; increase val_fraction or the dataset size")
    val_X = ds.windows[split.val] if len(split.val) else None
    val_y = ds.labels[split.val] if len(split.val) else None
    return fit(model, ds.windows[split.train], ds.labels[split.train], val_X, val_y, config, seed)


# ----------------------------------------------------------------------------
# evaluation


@dataclass
class Evaluation:
    confusion: ConfusionMatrix
    metrics: MetricSet
    scores: np.ndarray
    labels: np.ndarray
    roc: list[tuple[float, float, float]]


def evaluate_scores(scores, labels, threshold: float = 0.5) -> Evaluation:
    """Confusion matrix, metrics and ROC from positive-class scores."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if scores.size == 0:
        raise ContractError("evaluation needs a nonempty test set")
    cm = confusion_from_scores(scores, labels, threshold)
    ms = metrics(cm)
    if 0 < labels.sum() < labels.size:
        ms.auc = auc(scores, labels)
        roc = roc_curve(scores, labels)
    else:
        ms.auc = 0.0
        ms.undefined.append("auc")
        roc = []
    return Evaluation(cm, ms, scores, labels, roc)


def evaluate(model, X, y) -> Evaluation:
    probs = model.predict_proba(np.asarray(X))
    return evaluate_scores(probs[:, 1], y)
