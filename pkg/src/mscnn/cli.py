"""Command-line surface: featurize, analyze, train, eval, bench.

Exit codes: 0 success, 1 internal error, 2 usage or input error.  All
commands are deterministic given --seed (falling back to the MSCNN_SEED
environment variable, then the config), except bench wall-clock timings.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .checkpoint import load_checkpoint, restore_model, save_checkpoint
from .config import DataConfig, load_config
from .errors import MscnnError
from .frontend import logmel, read_fmat, read_wav, spec_augment, write_fmat
from .model import Model, check_grid_alignment, count_parameters, receptive_field
from .trainer import SynthDataset, evaluate, synth_dataset, train

LABELS_FILE = "labels.tsv"


def _resolve_seed(args, config_seed: int | None = None) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("MSCNN_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise MscnnError(f"MSCNN_SEED must be an integer, got {env!r}") from None
    if config_seed is not None:
        return config_seed
    return 0


def _print_report(report: dict, as_json: bool) -> None:
    if as_json:
        print(json.dumps(report, indent=2, sort_keys=True))
        return
    for key in sorted(report):
        print(f"{key}: {report[key]}")


# ---- data directories --------------------------------------------------------


def export_dataset(dataset: SynthDataset, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, (feats, label) in enumerate(dataset.utterances):
        name = f"utt{i:05d}.fmat"
        write_fmat(out_dir / name, feats)
        lines.append(f"{name}\t{label}")
    (out_dir / LABELS_FILE).write_text("\n".join(lines) + "\n")


def load_dataset_dir(path: Path) -> SynthDataset:
    labels_path = path / LABELS_FILE
    if not labels_path.exists():
        raise MscnnError(f"{path}: missing {LABELS_FILE}")
    utterances = []
    for line in labels_path.read_text().splitlines():
        if not line.strip():
            continue
        name, _, label = line.partition("\t")
        feats = read_fmat(path / name)
        utterances.append((feats, int(label)))
    if not utterances:
        raise MscnnError(f"{path}: no utterances listed in {LABELS_FILE}")
    num_classes = max(label for _, label in utterances) + 1
    return SynthDataset(utterances, [], num_classes, utterances[0][0].shape[1])


def _build_datasets(data: DataConfig, input_dim: int) -> tuple[SynthDataset, SynthDataset]:
    if data.train_dir:
        train_set = load_dataset_dir(Path(data.train_dir))
        heldout = load_dataset_dir(Path(data.heldout_dir)) if data.heldout_dir else train_set
        return train_set, heldout
    feat_dim = data.feat_dim or input_dim
    train_set = synth_dataset(
        data.synth_classes,
        data.synth_utterances,
        data.synth_seed,
        num_frames=data.synth_frames,
        feat_dim=feat_dim,
        noise=data.synth_noise,
        periods=data.synth_periods,
    )
    heldout = synth_dataset(
        data.synth_classes,
        data.synth_heldout_utterances,
        data.synth_seed + 1,
        num_frames=data.synth_frames,
        feat_dim=feat_dim,
        noise=data.synth_noise,
        periods=data.synth_periods,
    )
    return train_set, heldout


# ---- commands ------------------------------------------------------------------


def cmd_featurize(args) -> int:
    wav_path = Path(args.wav)
    if not wav_path.exists():
        raise MscnnError(f"input WAV not found: {wav_path}")
    samples, rate = read_wav(wav_path)
    spec = logmel(samples, rate)
    if args.augment:
        policy = load_config(args.config).augment if args.config else None
        if policy is None:
            from .frontend import SpecAugmentPolicy

            policy = SpecAugmentPolicy()
        policy = replace(policy, seed=_resolve_seed(args, policy.seed))
        spec = spec_augment(spec, policy)
    write_fmat(args.out, spec.frames)
    print(f"wrote {spec.frames.shape[0]} x {spec.frames.shape[1]} features to {args.out}")
    return 0


def analyze_report(config) -> dict:
    flags, aligned = check_grid_alignment(config)
    rf = receptive_field(config)
    total, breakdown = count_parameters(config)
    return {
        "streams": [
            {
                "dilation": s.dilation,
                "num_layers": s.num_layers,
                "embed_dim": s.embed_dim,
                "bottleneck_dim": s.bottleneck,
                "grid_aligned": flags[m],
                "receptive_field": rf["streams"][m],
            }
            for m, s in enumerate(config.streams)
        ],
        "subsample_rate": config.subsample_rate,
        "all_grid_aligned": aligned,
        "stem_kind": config.stem_kind,
        "stem_receptive_field": rf["stem"],
        "model_receptive_field": rf["total"],
        "min_input_frames": rf["min_input_frames"],
        "combiner_input_dim": config.concat_dim,
        "parameter_total": total,
        "parameter_breakdown": breakdown,
    }


def _print_analyze(report: dict) -> None:
    for m, s in enumerate(report["streams"]):
        print(
            f"stream {m}: dilation={s['dilation']} layers={s['num_layers']} "
            f"dim={s['embed_dim']} bottleneck={s['bottleneck_dim']} "
            f"grid_aligned={s['grid_aligned']} receptive_field={s['receptive_field']}"
        )
    for key in (
        "subsample_rate",
        "all_grid_aligned",
        "stem_kind",
        "stem_receptive_field",
        "model_receptive_field",
        "min_input_frames",
        "combiner_input_dim",
        "parameter_total",
    ):
        print(f"{key}: {report[key]}")
    for group, count in report["parameter_breakdown"].items():
        print(f"parameter_breakdown.{group}: {count}")


def cmd_analyze(args) -> int:
    run = load_config(args.config)
    if run.model is None:
        raise MscnnError(f"{args.config} has no [model] section")
    report = analyze_report(run.model)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        _print_analyze(report)
    return 0


def cmd_train(args) -> int:
    run = load_config(args.config)
    if run.model is None:
        raise MscnnError(f"{args.config} has no [model] section")
    seed = _resolve_seed(args, run.train.seed)
    train_cfg = replace(run.train, seed=seed)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_set, heldout = _build_datasets(run.data, run.model.input_dim)
    if args.export_data:
        export_dataset(train_set, out_dir / "data" / "train")
        export_dataset(heldout, out_dir / "data" / "heldout")

    start_state = None
    if args.resume:
        ckpt = load_checkpoint(args.resume)
        model = restore_model(ckpt)
        if model.config != run.model:
            raise MscnnError(
                f"checkpoint model config does not match {args.config}"
            )
        start_state = ckpt.train_state
    else:
        model = Model(run.model, seed=seed)

    result = train(
        model,
        train_set,
        train_cfg,
        start_state=start_state,
        stop_after_epoch=args.stop_after_epoch,
    )
    ckpt_path = out_dir / "final.msck"
    save_checkpoint(ckpt_path, model, train_config=train_cfg, state=result.state)
    log_path = out_dir / "train.log"
    log_path.write_text("\n".join(result.log_lines) + "\n" if result.log_lines else "")
    for line in result.log_lines:
        print(line)
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    dataset = load_dataset_dir(Path(args.data))
    if dataset.feat_dim != model.config.input_dim:
        raise MscnnError(
            f"feature dim mismatch: model expects {model.config.input_dim}, "
            f"data has {dataset.feat_dim}"
        )
    report = evaluate(model, dataset)
    _print_report(report, args.json)
    return 0


def cmd_bench(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    model = restore_model(ckpt)
    report = bench_mod.run_benchmark(
        model,
        args.frames,
        repeats=args.repeats,
        threads=args.threads,
        frame_shift_ms=args.frame_shift_ms,
        seed=_resolve_seed(args),
    )
    if args.baseline:
        base_model = restore_model(load_checkpoint(args.baseline))
        base = bench_mod.run_benchmark(
            base_model,
            args.frames,
            repeats=args.repeats,
            threads=args.threads,
            frame_shift_ms=args.frame_shift_ms,
            seed=_resolve_seed(args),
        )
        report["baseline_rtf"] = base["rtf"]
        report["relative_rtf_improvement_pct"] = 100.0 * bench_mod.relative_improvement(
            base["rtf"], report["rtf"]
        )
    _print_report(report, args.json)
    return 0


# ---- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mscnn",
        description="Multistream dilated-convolution acoustic model toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("featurize", help="extract log-mel features from a WAV file")
    p.add_argument("--wav", required=True, help="input mono 16-bit PCM WAV")
    p.add_argument("--out", required=True, help="output FMAT1 feature file")
    p.add_argument("--augment", action="store_true", help="apply time/frequency masking")
    p.add_argument("--config", help="config file providing the [augment] policy")
    p.add_argument("--seed", type=int, help="seed for mask placement")
    p.set_defaults(func=cmd_featurize)

    p = sub.add_parser("analyze", help="report architecture properties of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train a model per the config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="overrides [train] seed")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--stop-after-epoch", type=int, default=None, help="pause after this epoch")
    p.add_argument("--export-data", action="store_true", help="write the datasets used")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="frame accuracy of a checkpoint on a data directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="directory of .fmat files plus labels.tsv")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="inference throughput and real-time factor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--frame-shift-ms", type=float, default=10.0)
    p.add_argument("--baseline", help="second checkpoint to compare against")
    p.add_argument("--seed", type=int)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (MscnnError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - internal failure path
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
