"""Multistream model: shared stem, parallel dilated stacks, combiner, head.

A single stem (5 factorized layers at dilation 1, or the 2-D conv stem for
spectrogram input) feeds M parallel stacks of factorized layers, each
stack using its own dilation rate.  Stream outputs are center-cropped to a
common time range, concatenated in declared stream order, passed through
ReLU -> batch norm -> dropout, and projected by two fully-connected
layers to the output logits.

Also provides the architecture analyzers: grid alignment of dilation
rates against the evaluation stride, receptive fields, and parameter
accounting.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContextError, ShapeError, StaleCacheError
from .frontend import STEM_CHANNELS, Conv2dStem
from .layers import Affine, BatchNorm, Dropout, Layer, ReLU
from .ops import concat_channels, split_channels
from .tdnnf import TdnnfLayer

MAX_BOTTLENECK = 160


def default_bottleneck(embed_dim: int) -> int:
    return min(embed_dim // 2, MAX_BOTTLENECK)


def _clamped_bottleneck(bottleneck: int, d_in: int) -> int:
    """Keep the factorization a true bottleneck even when the input is narrow."""
    if d_in < 2:
        raise ConfigError(f"factorized layers need an input width >= 2, got {d_in}")
    return min(bottleneck, d_in - 1)


@dataclass(frozen=True)
class StreamSpec:
    """One parallel stack: a dilation rate plus layer/width settings."""

    dilation: int
    num_layers: int = 17
    embed_dim: int = 512
    bottleneck_dim: int | None = None
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.dilation < 1:
            raise ConfigError(f"stream dilation must be positive, got {self.dilation}")
        if self.num_layers < 1:
            raise ConfigError(f"stream needs at least one layer, got {self.num_layers}")
        if self.embed_dim < 2:
            raise ConfigError(f"stream embed_dim must be >= 2, got {self.embed_dim}")

    @property
    def bottleneck(self) -> int:
        return self.bottleneck_dim if self.bottleneck_dim else default_bottleneck(self.embed_dim)

    @property
    def frames_consumed(self) -> int:
        return 2 * self.num_layers * self.dilation

    def grid_aligned(self, subsample_rate: int) -> bool:
        return self.dilation % subsample_rate == 0


@dataclass(frozen=True)
class ModelConfig:
    """Declarative description of the full architecture."""

    streams: tuple[StreamSpec, ...]
    input_dim: int = 40
    output_dim: int = 512
    stem_kind: str = "tdnnf"  # "tdnnf" | "conv2d"
    stem_layers: int = 5
    stem_dim: int | None = None  # tdnnf stem width; defaults to max stream embed_dim
    subsample_rate: int = 3
    combiner_dropout: float = 0.1
    head_hidden_dim: int | None = None  # defaults to the concat width
    skip_scale: float = 0.66

    def __post_init__(self):
        object.__setattr__(self, "streams", tuple(self.streams))
        if not self.streams:
            raise ConfigError("model needs at least one stream")
        layer_counts = {s.num_layers for s in self.streams}
        if len(layer_counts) != 1:
            raise ConfigError(f"all streams must share num_layers, got {sorted(layer_counts)}")
        if self.stem_kind not in ("tdnnf", "conv2d"):
            raise ConfigError(f"unknown stem kind {self.stem_kind!r}")
        if self.stem_kind == "conv2d" and self.stem_layers != len(STEM_CHANNELS):
            raise ConfigError(
                f"conv2d stem has a fixed depth of {len(STEM_CHANNELS)} layers"
            )
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be positive")
        if self.subsample_rate < 1:
            raise ConfigError(f"subsample_rate must be >= 1, got {self.subsample_rate}")
        if self.stem_layers < 0:
            raise ConfigError("stem_layers must be non-negative")

    @property
    def resolved_stem_dim(self) -> int:
        if self.stem_dim is not None:
            return self.stem_dim
        return max(s.embed_dim for s in self.streams)

    @property
    def concat_dim(self) -> int:
        return sum(s.embed_dim for s in self.streams)

    @property
    def resolved_head_hidden(self) -> int:
        return self.head_hidden_dim if self.head_hidden_dim else self.concat_dim

    @property
    def stream_input_dim(self) -> int:
        if self.stem_kind == "conv2d":
            f = self.input_dim
            for i in range(len(STEM_CHANNELS)):
                stride = 2 if i % 2 == 0 else 1
                f = (f + stride - 1) // stride
            return f * STEM_CHANNELS[-1]
        return self.resolved_stem_dim if self.stem_layers > 0 else self.input_dim

    @property
    def stem_frames_consumed(self) -> int:
        return 2 * self.stem_layers if self.stem_kind == "tdnnf" else 0

    @property
    def min_input_frames(self) -> int:
        return self.stem_frames_consumed + max(s.frames_consumed for s in self.streams) + 1

    def to_dict(self) -> dict:
        return {
            "streams": [
                {
                    "dilation": s.dilation,
                    "num_layers": s.num_layers,
                    "embed_dim": s.embed_dim,
                    "bottleneck_dim": s.bottleneck_dim,
                    "dropout_p": s.dropout_p,
                }
                for s in self.streams
            ],
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "stem_kind": self.stem_kind,
            "stem_layers": self.stem_layers,
            "stem_dim": self.stem_dim,
            "subsample_rate": self.subsample_rate,
            "combiner_dropout": self.combiner_dropout,
            "head_hidden_dim": self.head_hidden_dim,
            "skip_scale": self.skip_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        streams = tuple(StreamSpec(**s) for s in d["streams"])
        rest = {k: v for k, v in d.items() if k != "streams"}
        return cls(streams=streams, **rest)


def _stable_seed(base_seed: int, tag: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([base_seed, zlib.crc32(tag.encode())])


class Model:
    """A built network with forward/backward passes over [T, input_dim] features."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.seed = seed
        self.dtype = dtype
        cfg = config

        self.stem: list[Layer] = []
        if cfg.stem_kind == "conv2d":
            rng = np.random.default_rng(_stable_seed(seed, "stem"))
            self.stem = [Conv2dStem(cfg.input_dim, rng, dtype=dtype)]
        else:
            rng = np.random.default_rng(_stable_seed(seed, "stem"))
            d_prev = cfg.input_dim
            for i in range(cfg.stem_layers):
                d_out = cfg.resolved_stem_dim
                self.stem.append(
                    TdnnfLayer(
                        f"stem.{i}",
                        d_prev,
                        d_out,
                        _clamped_bottleneck(default_bottleneck(d_out), d_prev),
                        dilation=1,
                        rng=rng,
                        dropout_p=0.0,
                        skip_scale=cfg.skip_scale,
                        skip=(d_prev == d_out),
                        dtype=dtype,
                    )
                )
                d_prev = d_out

        # streams with identical specs share an init seed, so duplicate
        # stream definitions build identical parameter tensors
        self.streams: list[list[TdnnfLayer]] = []
        for m, spec in enumerate(cfg.streams):
            tag = f"stream:{spec.dilation}:{spec.num_layers}:{spec.embed_dim}:{spec.bottleneck}"
            rng = np.random.default_rng(_stable_seed(seed, tag))
            stack = []
            d_prev = cfg.stream_input_dim
            for i in range(spec.num_layers):
                stack.append(
                    TdnnfLayer(
                        f"stream{m}.{i}",
                        d_prev,
                        spec.embed_dim,
                        _clamped_bottleneck(spec.bottleneck, d_prev),
                        dilation=spec.dilation,
                        rng=rng,
                        dropout_p=spec.dropout_p,
                        skip_scale=cfg.skip_scale,
                        skip=(d_prev == spec.embed_dim),
                        dtype=dtype,
                    )
                )
                d_prev = spec.embed_dim
            self.streams.append(stack)

        self.combiner_relu = ReLU("combiner.relu")
        self.combiner_bn = BatchNorm("combiner.bn", cfg.concat_dim, dtype=dtype)
        self.combiner_dropout = Dropout("combiner.dropout", cfg.combiner_dropout)
        rng = np.random.default_rng(_stable_seed(seed, "head"))
        hidden = cfg.resolved_head_hidden
        self.head_fc1 = Affine("head.fc1", cfg.concat_dim, hidden, rng, dtype=dtype)
        self.head_relu = ReLU("head.relu")
        self.head_fc2 = Affine("head.fc2", hidden, cfg.output_dim, rng, dtype=dtype)
        self._bwd_state = None
        self.reseed_dropout(seed)

    # ---- structure walking -------------------------------------------------

    def _groups(self):
        yield "stem", self.stem
        for m, stack in enumerate(self.streams):
            yield f"stream{m}", stack
        yield "combiner", [self.combiner_relu, self.combiner_bn, self.combiner_dropout]
        yield "head", [self.head_fc1, self.head_relu, self.head_fc2]

    def _walk(self, layer: Layer):
        yield layer
        for child in layer.children():
            yield from self._walk(child)

    def layers(self):
        for _, group in self._groups():
            for layer in group:
                yield from self._walk(layer)

    def named_parameters(self):
        for layer in self.layers():
            for key, value in layer.params.items():
                yield f"{layer.name}.{key}", value

    def named_grads(self):
        for layer in self.layers():
            for key, value in layer.grads.items():
                yield f"{layer.name}.{key}", value

    def named_buffers(self):
        for layer in self.layers():
            for key, value in layer.buffers.items():
                yield f"{layer.name}.{key}", value

    def tdnnf_layers(self):
        return [l for l in self.layers() if isinstance(l, TdnnfLayer)]

    def dropout_layers(self):
        return [l for l in self.layers() if isinstance(l, Dropout)]

    def zero_grads(self):
        for layer in self.layers():
            for g in layer.grads.values():
                g[...] = 0

    def reseed_dropout(self, seed: int) -> None:
        for layer in self.dropout_layers():
            layer.reseed(_stable_seed(seed, f"dropout:{layer.name}"))

    def dropout_rng_states(self) -> dict:
        return {l.name: l.rng_state() for l in self.dropout_layers()}

    def set_dropout_rng_states(self, states: dict) -> None:
        for layer in self.dropout_layers():
            if layer.name in states:
                layer.set_rng_state(states[layer.name])

    def constraint_step(self) -> None:
        for layer in self.tdnnf_layers():
            layer.constraint_step()

    def max_ortho_defect(self) -> float:
        return max(l.ortho_defect() for l in self.tdnnf_layers())

    # ---- forward / backward -----------------------------------------------

    def stem_forward(self, features: np.ndarray, train: bool = False) -> np.ndarray:
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"model expects [T, {self.config.input_dim}] features, got {features.shape}"
            )
        y = features
        for layer in self.stem:
            y = layer.forward(y, train)
        return y

    def _stream_stack_forward(self, stack, x, train, dilation=None):
        y = x
        for layer in stack:
            y = layer.forward(y, train, dilation=dilation) if dilation else layer.forward(y, train)
        return y

    def forward_from_stem(self, stem_out: np.ndarray, train: bool = False) -> np.ndarray:
        cfg = self.config
        t = stem_out.shape[0]
        max_consumed = max(s.frames_consumed for s in cfg.streams)
        if t <= max_consumed:
            raise ContextError(
                f"need at least {cfg.min_input_frames} input frames "
                f"({max_consumed + 1} past the stem), got {t} past the stem"
            )
        outs = []
        crops = []
        for spec, stack in zip(cfg.streams, self.streams):
            y = self._stream_stack_forward(stack, stem_out, train)
            crop = (max_consumed - spec.frames_consumed) // 2
            crops.append(crop)
            outs.append(y[crop : y.shape[0] - crop] if crop else y)
        z = concat_channels(outs)
        z = self.combiner_relu.forward(z, train)
        z = self.combiner_bn.forward(z, train)
        z = self.combiner_dropout.forward(z, train)
        h = self.head_fc1.forward(z, train)
        h = self.head_relu.forward(h, train)
        logits = self.head_fc2.forward(h, train)
        if train:
            self._bwd_state = (stem_out.shape, crops, [o.shape[0] + 2 * c for o, c in zip(outs, crops)])
        return logits

    def forward(self, features: np.ndarray, train: bool = False) -> np.ndarray:
        stem_out = self.stem_forward(features, train)
        return self.forward_from_stem(stem_out, train)

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        if self._bwd_state is None:
            raise StaleCacheError("model backward() without a preceding training forward()")
        stem_shape, crops, full_lens = self._bwd_state
        self._bwd_state = None
        g = self.head_fc2.backward(grad_logits)
        g = self.head_relu.backward(g)
        g = self.head_fc1.backward(g)
        g = self.combiner_dropout.backward(g)
        g = self.combiner_bn.backward(g)
        g = self.combiner_relu.backward(g)
        blocks = split_channels(g, [s.embed_dim for s in self.config.streams])
        grad_stem = np.zeros(stem_shape, dtype=grad_logits.dtype)
        for block, crop, full_len, stack in zip(blocks, crops, full_lens, self.streams):
            if crop:
                padded = np.zeros((full_len, block.shape[1]), dtype=block.dtype)
                padded[crop : full_len - crop] = block
                block = padded
            gs = block
            for layer in reversed(stack):
                gs = layer.backward(gs)
            grad_stem += gs
        g = grad_stem
        for layer in reversed(self.stem):
            g = layer.backward(g)
        return g

    # ---- sub-sampled inference ----------------------------------------------

    def subsampled_forward(self, features: np.ndarray, rate: int | None = None) -> np.ndarray:
        """Evaluate stream stacks only on the rate-strided frame grid.

        Requires every stream dilation to be a multiple of the rate; the
        result equals forward() followed by taking every rate-th output
        frame, bit for bit.
        """
        cfg = self.config
        s = cfg.subsample_rate if rate is None else rate
        bad = [spec.dilation for spec in cfg.streams if spec.dilation % s != 0]
        if bad:
            raise ConfigError(
                f"sub-sampling at rate {s} requires stream dilations divisible by {s}; "
                f"violated by dilation(s) {bad}"
            )
        stem_out = self.stem_forward(features, train=False)
        return self.subsampled_from_stem(stem_out, s)

    def subsampled_from_stem(self, stem_out: np.ndarray, rate: int) -> np.ndarray:
        cfg = self.config
        bad = [spec.dilation for spec in cfg.streams if spec.dilation % rate != 0]
        if bad:
            raise ConfigError(
                f"sub-sampling at rate {rate} requires stream dilations divisible by {rate}; "
                f"violated by dilation(s) {bad}"
            )
        sub = stem_out[::rate]
        max_consumed = max(s2.frames_consumed for s2 in cfg.streams)
        if sub.shape[0] <= max_consumed // rate:
            raise ContextError(
                f"need more than {max_consumed // rate} grid frames past the stem, got {sub.shape[0]}"
            )
        outs = []
        for spec, stack in zip(cfg.streams, self.streams):
            y = self._stream_stack_forward(stack, sub, False, dilation=spec.dilation // rate)
            crop = (max_consumed - spec.frames_consumed) // 2 // rate
            outs.append(y[crop : y.shape[0] - crop] if crop else y)
        z = concat_channels(outs)
        z = self.combiner_relu.forward(z, False)
        z = self.combiner_bn.forward(z, False)
        z = self.combiner_dropout.forward(z, False)
        h = self.head_fc1.forward(z, False)
        h = self.head_relu.forward(h, False)
        return self.head_fc2.forward(h, False)


def build_model(config: ModelConfig, seed: int = 0, dtype=np.float32) -> Model:
    return Model(config, seed=seed, dtype=dtype)


# ---- analyzers ---------------------------------------------------------------


def check_grid_alignment(config: ModelConfig) -> tuple[list[bool], bool]:
    """Per-stream dilation-vs-stride divisibility plus the overall verdict."""
    flags = [s.grid_aligned(config.subsample_rate) for s in config.streams]
    return flags, all(flags)


def receptive_field(config: ModelConfig) -> dict:
    """Frames of context per stream and for the whole model."""
    per_stream = [s.frames_consumed + 1 for s in config.streams]
    stem = config.stem_frames_consumed + 1
    total = stem + max(per_stream) - 1
    return {
        "streams": per_stream,
        "stem": stem,
        "total": total,
        "min_input_frames": config.min_input_frames,
    }


def _tdnnf_param_count(d_in: int, d_out: int, bottleneck: int) -> int:
    factor_a = 2 * d_in * bottleneck
    factor_b = 2 * bottleneck * d_out + d_out
    bn = 2 * d_out
    return factor_a + factor_b + bn


def count_parameters(config: ModelConfig) -> tuple[int, dict[str, int]]:
    """Trainable parameter total with a stem/streams/combiner/head breakdown.

    Mirrors exactly the tensors build_model() creates (batch-norm running
    statistics are buffers, not parameters).
    """
    breakdown: dict[str, int] = {}
    if config.stem_kind == "conv2d":
        stem = 0
        c_in = 1
        for c_out in STEM_CHANNELS:
            stem += 9 * c_in * c_out + c_out
            c_in = c_out
    else:
        stem = 0
        d_prev = config.input_dim
        for _ in range(config.stem_layers):
            d_out = config.resolved_stem_dim
            stem += _tdnnf_param_count(
                d_prev, d_out, _clamped_bottleneck(default_bottleneck(d_out), d_prev)
            )
            d_prev = d_out
    breakdown["stem"] = stem

    for m, spec in enumerate(config.streams):
        d_prev = config.stream_input_dim
        total = 0
        for _ in range(spec.num_layers):
            total += _tdnnf_param_count(
                d_prev, spec.embed_dim, _clamped_bottleneck(spec.bottleneck, d_prev)
            )
            d_prev = spec.embed_dim
        breakdown[f"stream{m}"] = total

    breakdown["combiner"] = 2 * config.concat_dim
    hidden = config.resolved_head_hidden
    breakdown["head"] = (
        config.concat_dim * hidden + hidden + hidden * config.output_dim + config.output_dim
    )
    return sum(breakdown.values()), breakdown
