"""INI-style run configuration.

Four sections — [model], [train], [data], [augment] — of flat key=value
lines.  Stream dilations use dash notation ("6-9-12").  Unknown sections
or keys are rejected by name; there is no silent typo tolerance.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass

from .errors import ConfigError
from .frontend import SpecAugmentPolicy
from .model import ModelConfig, StreamSpec
from .trainer import TrainConfig

_MODEL_KEYS = {
    "streams",
    "embed_dim",
    "bottleneck_dim",
    "num_layers",
    "dropout",
    "input_dim",
    "output_dim",
    "stem",
    "stem_layers",
    "stem_dim",
    "subsample_rate",
    "combiner_dropout",
    "head_hidden_dim",
    "skip_scale",
}
_TRAIN_KEYS = {
    "lr_start",
    "lr_end",
    "epochs",
    "minibatch",
    "momentum",
    "constraint_interval",
    "seed",
}
_DATA_KEYS = {
    "train_dir",
    "heldout_dir",
    "synth_classes",
    "synth_utterances",
    "synth_heldout_utterances",
    "synth_frames",
    "synth_noise",
    "synth_periods",
    "synth_seed",
    "feat_dim",
}
_AUGMENT_KEYS = {
    "num_freq_masks",
    "num_time_masks",
    "max_freq_width",
    "max_time_width",
    "mask_value",
    "seed",
}
_SECTIONS = {
    "model": _MODEL_KEYS,
    "train": _TRAIN_KEYS,
    "data": _DATA_KEYS,
    "augment": _AUGMENT_KEYS,
}


@dataclass
class DataConfig:
    train_dir: str | None = None
    heldout_dir: str | None = None
    synth_classes: int = 3
    synth_utterances: int = 120
    synth_heldout_utterances: int = 30
    synth_frames: int = 120
    synth_noise: float = 0.1
    synth_periods: list[int] | None = None
    synth_seed: int = 100
    feat_dim: int | None = None  # defaults to the model's input_dim


@dataclass
class RunConfig:
    model: ModelConfig | None
    train: TrainConfig
    data: DataConfig
    augment: SpecAugmentPolicy


def _parse_int(section, key, value):
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}") from None


def _parse_float(section, key, value):
    try:
        return float(value)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from None


def _parse_int_list(section, key, value, sep):
    try:
        return [int(v) for v in value.split(sep) if v != ""]
    except ValueError:
        raise ConfigError(
            f"[{section}] {key}: expected {sep!r}-separated integers, got {value!r}"
        ) from None


def _read_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        delimiters=("=",), inline_comment_prefixes=("#",), interpolation=None
    )
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key in parser[section]:
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}] of {path}")
    return parser


def _model_from_section(sec) -> ModelConfig:
    if "streams" not in sec:
        raise ConfigError("[model] is missing the required 'streams' key")
    dilations = _parse_int_list("model", "streams", sec["streams"], "-")
    if not dilations:
        raise ConfigError("[model] streams must name at least one dilation rate")
    num_streams = len(dilations)

    def per_stream(key, default, parse=_parse_int):
        if key not in sec:
            return [default] * num_streams
        values = sec[key]
        if "," in values:
            out = [parse("model", key, v) for v in values.split(",")]
            if len(out) != num_streams:
                raise ConfigError(
                    f"[model] {key}: {len(out)} values for {num_streams} streams"
                )
            return out
        return [parse("model", key, values)] * num_streams

    embed = per_stream("embed_dim", 512)
    bottleneck = per_stream("bottleneck_dim", 0)
    layers = per_stream("num_layers", 17)
    dropout = per_stream("dropout", 0.1, _parse_float)
    streams = tuple(
        StreamSpec(
            dilation=r,
            num_layers=layers[i],
            embed_dim=embed[i],
            bottleneck_dim=bottleneck[i] or None,
            dropout_p=dropout[i],
        )
        for i, r in enumerate(dilations)
    )
    kwargs = {}
    if "input_dim" in sec:
        kwargs["input_dim"] = _parse_int("model", "input_dim", sec["input_dim"])
    if "output_dim" in sec:
        kwargs["output_dim"] = _parse_int("model", "output_dim", sec["output_dim"])
    if "stem" in sec:
        kwargs["stem_kind"] = sec["stem"].strip()
    if "stem_layers" in sec:
        kwargs["stem_layers"] = _parse_int("model", "stem_layers", sec["stem_layers"])
    if "stem_dim" in sec:
        kwargs["stem_dim"] = _parse_int("model", "stem_dim", sec["stem_dim"])
    if "subsample_rate" in sec:
        kwargs["subsample_rate"] = _parse_int("model", "subsample_rate", sec["subsample_rate"])
    if "combiner_dropout" in sec:
        kwargs["combiner_dropout"] = _parse_float(
            "model", "combiner_dropout", sec["combiner_dropout"]
        )
    if "head_hidden_dim" in sec:
        kwargs["head_hidden_dim"] = _parse_int("model", "head_hidden_dim", sec["head_hidden_dim"])
    if "skip_scale" in sec:
        kwargs["skip_scale"] = _parse_float("model", "skip_scale", sec["skip_scale"])
    return ModelConfig(streams=streams, **kwargs)


def _train_from_section(sec) -> TrainConfig:
    kwargs = {}
    for key in ("lr_start", "lr_end", "momentum"):
        if key in sec:
            kwargs[key] = _parse_float("train", key, sec[key])
    for key in ("epochs", "minibatch", "constraint_interval", "seed"):
        if key in sec:
            kwargs[key] = _parse_int("train", key, sec[key])
    return TrainConfig(**kwargs)


def _data_from_section(sec) -> DataConfig:
    cfg = DataConfig()
    if "train_dir" in sec:
        cfg.train_dir = sec["train_dir"].strip() or None
    if "heldout_dir" in sec:
        cfg.heldout_dir = sec["heldout_dir"].strip() or None
    for key in (
        "synth_classes",
        "synth_utterances",
        "synth_heldout_utterances",
        "synth_frames",
        "synth_seed",
        "feat_dim",
    ):
        if key in sec:
            setattr(cfg, key, _parse_int("data", key, sec[key]))
    if "synth_noise" in sec:
        cfg.synth_noise = _parse_float("data", "synth_noise", sec["synth_noise"])
    if "synth_periods" in sec:
        cfg.synth_periods = _parse_int_list("data", "synth_periods", sec["synth_periods"], ",")
    return cfg


def _augment_from_section(sec) -> SpecAugmentPolicy:
    kwargs = {}
    for key in ("num_freq_masks", "num_time_masks", "max_freq_width", "max_time_width", "seed"):
        if key in sec:
            kwargs[key] = _parse_int("augment", key, sec[key])
    if "mask_value" in sec:
        kwargs["mask_value"] = _parse_float("augment", "mask_value", sec["mask_value"])
    return SpecAugmentPolicy(**kwargs)


def load_config(path) -> RunConfig:
    parser = _read_ini(path)
    model = _model_from_section(parser["model"]) if parser.has_section("model") else None
    train = _train_from_section(parser["train"]) if parser.has_section("train") else TrainConfig()
    data = _data_from_section(parser["data"]) if parser.has_section("data") else DataConfig()
    augment = (
        _augment_from_section(parser["augment"])
        if parser.has_section("augment")
        else SpecAugmentPolicy()
    )
    return RunConfig(model=model, train=train, data=data, augment=augment)


def load_model_config(path) -> ModelConfig:
    run = load_config(path)
    if run.model is None:
        raise ConfigError(f"{path} has no [model] section")
    return run.model
