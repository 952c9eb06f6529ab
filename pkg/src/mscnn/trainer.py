"""Desk-scale training loop.

Frame-level cross-entropy objective, SGD with momentum, exponential
learning-rate decay between the configured endpoints, and a periodic
semi-orthogonality constraint step on every factorized layer.  All
randomness (shuffling, dropout) derives from the run seed, so two runs
with the same seed produce byte-identical checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingError
from .model import Model

LOG_HEADER = "epoch\tmean_loss\tlr\tmax_ortho_defect"


@dataclass(frozen=True)
class TrainConfig:
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    epochs: int = 6
    minibatch: int = 64
    momentum: float = 0.9
    constraint_interval: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.lr_start < 0 or self.lr_end < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lr_end > self.lr_start:
            raise ConfigError(
                f"lr_end {self.lr_end} must not exceed lr_start {self.lr_start}"
            )
        if self.epochs < 1:
            raise ConfigError("epochs must be positive")
        if self.minibatch < 1:
            raise ConfigError("minibatch must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.constraint_interval < 1:
            raise ConfigError("constraint_interval must be positive")

    def to_dict(self) -> dict:
        return {
            "lr_start": self.lr_start,
            "lr_end": self.lr_end,
            "epochs": self.epochs,
            "minibatch": self.minibatch,
            "momentum": self.momentum,
            "constraint_interval": self.constraint_interval,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def lr_at(config: TrainConfig, step: int, total_steps: int) -> float:
    """Geometric interpolation from lr_start to lr_end; endpoints are exact."""
    if total_steps == 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError(f"step {step} outside [0, {total_steps}]")
    if step == 0:
        return config.lr_start
    if step == total_steps:
        return config.lr_end
    if config.lr_start == 0.0:
        return 0.0
    ratio = config.lr_end / config.lr_start
    return config.lr_start * ratio ** (step / total_steps)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean framewise negative log softmax probability of the labels.

    Returns the loss and its gradient w.r.t. the logits,
    (softmax - onehot) / num_frames.
    """
    labels = np.asarray(labels)
    t, k = logits.shape
    if labels.shape != (t,):
        raise ConfigError(f"labels shape {labels.shape} does not match {t} frames")
    if labels.min() < 0 or labels.max() >= k:
        raise ConfigError(f"labels must lie in [0, {k}), got range "
                          f"[{labels.min()}, {labels.max()}]")
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = float(-log_probs[np.arange(t), labels].mean())
    grad = exp / denom
    grad[np.arange(t), labels] -= 1.0
    return loss, (grad / t).astype(logits.dtype)


class SgdMomentum:
    """v <- mu*v + g; p <- p - lr*v, per named parameter."""

    def __init__(self, model: Model, momentum: float):
        self.model = model
        self.momentum = momentum
        self.velocity = {
            name: np.zeros_like(p) for name, p in model.named_parameters()
        }

    def step(self, lr: float) -> None:
        grads = dict(self.model.named_grads())
        for name, p in self.model.named_parameters():
            v = self.velocity[name]
            v *= self.momentum
            v += grads[name]
            p -= p.dtype.type(lr) * v


@dataclass
class SynthDataset:
    """Labeled utterances whose classes differ only in temporal pulse period."""

    utterances: list[tuple[np.ndarray, int]]
    class_periods: list[int]
    num_classes: int
    feat_dim: int

    def __len__(self):
        return len(self.utterances)


def default_periods(num_classes: int) -> list[int]:
    return [5 * 4**k for k in range(num_classes)]


def synth_dataset(
    num_classes: int,
    num_utterances: int,
    seed: int,
    *,
    num_frames: int = 200,
    feat_dim: int = 40,
    noise: float = 0.1,
    periods: list[int] | None = None,
) -> SynthDataset:
    """Generate utterances of periodic pulse trains, one period per class.

    Every class shares the same per-frame pulse shape and spectral
    profile; only the pulse spacing differs, so single frames carry no
    class information and discrimination requires temporal context
    matched to the period spread.  Frame labels are constant within an
    utterance.  Deterministic per seed.
    """
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    periods = list(periods) if periods is not None else default_periods(num_classes)
    if len(periods) != num_classes:
        raise ConfigError(f"{len(periods)} periods given for {num_classes} classes")
    rng = np.random.default_rng(seed)
    profile = 0.5 + 0.5 * np.sin(np.pi * (np.arange(feat_dim) + 0.5) / feat_dim)
    utterances = []
    for u in range(num_utterances):
        label = u % num_classes
        period = periods[label]
        phase = int(rng.integers(0, period))
        pulse = np.zeros(num_frames)
        centers = np.arange(phase, num_frames, period)
        for c in centers:
            lo, hi = max(0, c - 1), min(num_frames, c + 2)
            pulse[lo:hi] = np.maximum(pulse[lo:hi], [0.5, 1.0, 0.5][lo - (c - 1) : hi - (c - 1)])
        feats = pulse[:, None] * profile[None, :]
        if noise > 0:
            feats = feats + noise * rng.standard_normal((num_frames, feat_dim))
        utterances.append((feats.astype(np.float32), label))
    return SynthDataset(utterances, periods, num_classes, feat_dim)


@dataclass
class TrainState:
    """Mutable progress carried across a pause/resume boundary."""

    global_step: int = 0
    epoch: int = 0
    velocity: dict = field(default_factory=dict)
    dropout_rng: dict = field(default_factory=dict)


@dataclass
class TrainResult:
    log_lines: list[str]
    state: TrainState
    final_loss: float


def total_step_count(config: TrainConfig, dataset_size: int) -> int:
    return config.epochs * math.ceil(dataset_size / config.minibatch)


def train(
    model: Model,
    dataset: SynthDataset,
    config: TrainConfig,
    *,
    start_state: TrainState | None = None,
    stop_after_epoch: int | None = None,
) -> TrainResult:
    """Run (or continue) training; returns per-epoch log lines and end state.

    The schedule spans config.epochs in total; a resumed run picks up at
    start_state.epoch and reproduces an uninterrupted run bit for bit.
    """
    if len(dataset) == 0:
        raise ConfigError("dataset is empty")
    feat_dim = dataset.utterances[0][0].shape[1]
    if feat_dim != model.config.input_dim:
        raise ConfigError(
            f"feature dim mismatch: model expects {model.config.input_dim}, data has {feat_dim}"
        )
    n = len(dataset)
    steps_per_epoch = math.ceil(n / config.minibatch)
    total_steps = config.epochs * steps_per_epoch

    optimizer = SgdMomentum(model, config.momentum)
    if start_state is not None:
        global_step = start_state.global_step
        start_epoch = start_state.epoch
        for name, v in start_state.velocity.items():
            optimizer.velocity[name][...] = v
        model.set_dropout_rng_states(start_state.dropout_rng)
    else:
        global_step = 0
        start_epoch = 0
        model.reseed_dropout(config.seed)

    last_epoch = config.epochs if stop_after_epoch is None else min(stop_after_epoch, config.epochs)
    log_lines = []
    mean_loss = float("nan")
    lr = lr_at(config, min(global_step, total_steps), total_steps)
    for epoch in range(start_epoch, last_epoch):
        order = np.random.default_rng(
            np.random.SeedSequence([config.seed, epoch])
        ).permutation(n)
        losses = []
        for b0 in range(0, n, config.minibatch):
            batch = order[b0 : b0 + config.minibatch]
            model.zero_grads()
            batch_loss = 0.0
            inv_b = 1.0 / len(batch)
            for idx in batch:
                feats, label = dataset.utterances[idx]
                logits = model.forward(feats, train=True)
                labels = np.full(logits.shape[0], label, dtype=np.int64)
                loss, grad = cross_entropy(logits, labels)
                model.backward(grad * logits.dtype.type(inv_b))
                batch_loss += loss * inv_b
            if not math.isfinite(batch_loss):
                raise TrainingError(
                    f"non-finite loss {batch_loss} at step {global_step} (epoch {epoch})"
                )
            lr = lr_at(config, global_step, total_steps)
            optimizer.step(lr)
            global_step += 1
            if global_step % config.constraint_interval == 0:
                model.constraint_step()
            losses.append(batch_loss)
        mean_loss = float(np.mean(losses))
        defect = model.max_ortho_defect()
        log_lines.append(f"{epoch}\t{mean_loss:.6f}\t{lr:.8e}\t{defect:.6e}")
    state = TrainState(
        global_step=global_step,
        epoch=last_epoch,
        velocity={k: v.copy() for k, v in optimizer.velocity.items()},
        dropout_rng=model.dropout_rng_states(),
    )
    return TrainResult(log_lines=log_lines, state=state, final_loss=mean_loss)


def evaluate(model: Model, dataset: SynthDataset) -> dict:
    """Frame accuracy and mean cross-entropy over a dataset, inference mode."""
    correct = 0
    frames = 0
    ce_sum = 0.0
    for feats, label in dataset.utterances:
        logits = model.forward(feats, train=False)
        t = logits.shape[0]
        labels = np.full(t, label, dtype=np.int64)
        loss, _ = cross_entropy(logits, labels)
        correct += int((logits.argmax(axis=1) == label).sum())
        frames += t
        ce_sum += loss * t
    return {
        "frame_accuracy": correct / frames,
        "mean_cross_entropy": ce_sum / frames,
        "num_utterances": len(dataset),
        "num_frames": frames,
    }
