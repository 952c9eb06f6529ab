"""Inference throughput measurement and real-time-factor arithmetic."""

from __future__ import annotations

import threading
import time

import numpy as np

from .errors import ConfigError
from .model import Model, receptive_field


def real_time_factor(seconds: float, frames: int, frame_shift_s: float) -> float:
    """Processing time divided by the audio duration the frames cover."""
    if frames <= 0 or frame_shift_s <= 0:
        raise ConfigError("frames and frame shift must be positive")
    return seconds / (frames * frame_shift_s)


def relative_improvement(rtf_base: float, rtf_new: float) -> float:
    """(base - new) / base, as a fraction."""
    if rtf_base == 0:
        raise ConfigError("baseline RTF must be non-zero")
    return (rtf_base - rtf_new) / rtf_base


def run_benchmark(
    model: Model,
    frames: int,
    *,
    repeats: int = 5,
    threads: int = 1,
    frame_shift_ms: float = 10.0,
    seed: int = 0,
) -> dict:
    """Median-of-repeats forward timing on random features.

    With threads > 1, that many workers run the same measurement on
    disjoint inputs concurrently and the aggregate throughput is
    reported alongside the single-thread numbers.
    """
    minimum = receptive_field(model.config)["min_input_frames"]
    if frames < minimum:
        raise ConfigError(
            f"--frames {frames} is below the model's minimum input of {minimum} frames "
            f"(receptive field {receptive_field(model.config)['total']})"
        )
    if repeats < 1:
        raise ConfigError("repeats must be positive")
    rng = np.random.default_rng(seed)
    features = rng.standard_normal((frames, model.config.input_dim)).astype(model.dtype)
    model.forward(features, train=False)  # warm-up
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        model.forward(features, train=False)
        times.append(time.perf_counter() - t0)
    median = float(np.median(times))
    shift_s = frame_shift_ms / 1000.0
    report = {
        "frames": frames,
        "repeats": repeats,
        "frame_shift_ms": frame_shift_ms,
        "median_seconds": median,
        "frames_per_second": frames / median,
        "rtf": real_time_factor(median, frames, shift_s),
    }
    if threads > 1:
        inputs = [
            rng.standard_normal((frames, model.config.input_dim)).astype(model.dtype)
            for _ in range(threads)
        ]
        done = []

        def worker(x):
            for _ in range(repeats):
                model.forward(x, train=False)
            done.append(1)

        pool = [threading.Thread(target=worker, args=(x,)) for x in inputs]
        t0 = time.perf_counter()
        for th in pool:
            th.start()
        for th in pool:
            th.join()
        wall = time.perf_counter() - t0
        report["threads"] = threads
        report["aggregate_frames_per_second"] = threads * repeats * frames / wall
    return report
