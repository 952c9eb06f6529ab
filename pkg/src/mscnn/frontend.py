"""Feature pipeline: log-mel extraction, band masking, and the 2-D stem.

Also owns the on-disk feature-matrix format shared with the CLI:
magic "FMAT1", u32 LE rows, u32 LE cols, then rows*cols little-endian
32-bit floats in row-major order.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import Conv2d, Layer, ReLU

LOG_FLOOR = 1e-10
STEM_CHANNELS = (128, 256, 256, 256, 256)


@dataclass
class Spectrogram:
    """Time x frequency feature matrix with framing metadata."""

    frames: np.ndarray
    frame_shift_ms: float = 10.0
    frame_length_ms: float = 25.0
    mel_bins: int = 40
    sample_rate_hz: int = 16000


@dataclass(frozen=True)
class SpecAugmentPolicy:
    num_freq_masks: int = 2
    num_time_masks: int = 2
    max_freq_width: int = 8
    max_time_width: int = 20
    mask_value: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.num_freq_masks < 0 or self.num_time_masks < 0:
            raise ConfigError("mask counts must be non-negative")
        if self.max_freq_width <= 0 or self.max_time_width <= 0:
            raise ConfigError("max mask widths must be positive")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_filterbank(num_bins: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters [num_bins, n_fft//2 + 1] on the mel scale."""
    nyquist = sample_rate / 2.0
    mel_points = np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), num_bins + 2)
    hz_points = mel_to_hz(mel_points)
    bin_freqs = np.linspace(0.0, nyquist, n_fft // 2 + 1)
    bank = np.zeros((num_bins, n_fft // 2 + 1))
    for m in range(num_bins):
        left, center, right = hz_points[m], hz_points[m + 1], hz_points[m + 2]
        up = (bin_freqs - left) / (center - left)
        down = (right - bin_freqs) / (right - center)
        bank[m] = np.maximum(0.0, np.minimum(up, down))
    return bank


def logmel(
    samples: np.ndarray,
    sample_rate: int,
    *,
    frame_shift_ms: float = 10.0,
    frame_length_ms: float = 25.0,
    mel_bins: int = 40,
) -> Spectrogram:
    """Log-mel spectrogram of a mono sample sequence.

    Frames are Hamming-windowed, FFT'd to a magnitude spectrum, pooled by
    a triangular mel filterbank, and floored at 1e-10 before the log.
    """
    if sample_rate not in (8000, 16000):
        raise ConfigError(f"unsupported sample rate {sample_rate}; expected 8000 or 16000")
    samples = np.asarray(samples, dtype=np.float64)
    frame_len = int(round(sample_rate * frame_length_ms / 1000.0))
    frame_step = int(round(sample_rate * frame_shift_ms / 1000.0))
    if samples.size < frame_len:
        raise ConfigError(
            f"audio too short: {samples.size} samples, need at least {frame_len} for one frame"
        )
    num_frames = (samples.size - frame_len) // frame_step + 1
    n_fft = 1
    while n_fft < frame_len:
        n_fft *= 2
    window = np.hamming(frame_len)
    idx = np.arange(frame_len)[None, :] + frame_step * np.arange(num_frames)[:, None]
    windowed = samples[idx] * window
    magnitude = np.abs(np.fft.rfft(windowed, n=n_fft, axis=1))
    bank = mel_filterbank(mel_bins, n_fft, sample_rate)
    energies = magnitude @ bank.T
    feats = np.log(np.maximum(energies, LOG_FLOOR)).astype(np.float32)
    return Spectrogram(
        frames=feats,
        frame_shift_ms=frame_shift_ms,
        frame_length_ms=frame_length_ms,
        mel_bins=mel_bins,
        sample_rate_hz=sample_rate,
    )


def spec_augment(spec: Spectrogram, policy: SpecAugmentPolicy) -> Spectrogram:
    """Mask random frequency bands then random time bands, reproducibly.

    For each mask a width is drawn uniformly from [0, max_width] and a
    start uniformly over positions where the band still fits; everything
    outside the masked bands is left bit-identical.
    """
    t, f = spec.frames.shape
    if policy.max_freq_width > f:
        raise ConfigError(f"max_freq_width {policy.max_freq_width} exceeds F={f}")
    if policy.max_time_width > t:
        raise ConfigError(f"max_time_width {policy.max_time_width} exceeds T={t}")
    rng = np.random.default_rng(policy.seed)
    out = spec.frames.copy()
    value = out.dtype.type(policy.mask_value)
    for _ in range(policy.num_freq_masks):
        width = int(rng.integers(0, policy.max_freq_width + 1))
        start = int(rng.integers(0, f - width + 1))
        out[:, start : start + width] = value
    for _ in range(policy.num_time_masks):
        width = int(rng.integers(0, policy.max_time_width + 1))
        start = int(rng.integers(0, t - width + 1))
        out[start : start + width, :] = value
    return replace(spec, frames=out)


class Conv2dStem(Layer):
    """Five same-padded 3x3 conv layers over [T, F] spectrograms.

    Channel widths are 128 then 256; frequency is halved on layers 1, 3
    and 5 (1-based), for an 8x reduction overall.  The [T, F_out, C]
    output is flattened to [T, F_out * C] so it can feed 1-D streams; the
    time extent is always preserved.
    """

    def __init__(self, mel_bins, rng, *, channels=STEM_CHANNELS, dtype=np.float32):
        super().__init__("stem2d")
        if mel_bins < 8:
            raise ConfigError(
                f"conv2d stem needs at least 8 mel bins to survive three halvings, got {mel_bins}"
            )
        self.mel_bins = mel_bins
        self.channels = tuple(channels)
        self.freq_extents: list[int] = []
        self.convs: list[Conv2d] = []
        self.relus: list[ReLU] = []
        f = mel_bins
        c_in = 1
        for i, c_out in enumerate(self.channels):
            stride = 2 if i % 2 == 0 else 1
            self.convs.append(
                Conv2d(f"stem2d.{i}", c_in, c_out, rng, freq_stride=stride, dtype=dtype)
            )
            self.relus.append(ReLU(f"stem2d.{i}.relu"))
            f = (f + stride - 1) // stride
            self.freq_extents.append(f)
            c_in = c_out
        self.output_dim = f * self.channels[-1]

    def children(self):
        out: list[Layer] = []
        for conv, act in zip(self.convs, self.relus):
            out.append(conv)
            out.append(act)
        return out

    def forward(self, x, train=False):
        if x.ndim != 2 or x.shape[1] != self.mel_bins:
            raise ShapeError(
                f"stem2d: expected [T, {self.mel_bins}] spectrogram, got {x.shape}"
            )
        t = x.shape[0]
        y = x[:, :, None]
        for conv, act in zip(self.convs, self.relus):
            y = act.forward(conv.forward(y, train), train)
        if train:
            self._cache = y.shape
        return y.reshape(t, self.output_dim)

    def backward(self, grad_out):
        shape = self._take_cache()
        g = grad_out.reshape(shape)
        for conv, act in zip(reversed(self.convs), reversed(self.relus)):
            g = conv.backward(act.backward(g))
        return g[:, :, 0]


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono 16-bit PCM WAV into float samples scaled to [-1, 1)."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise ConfigError(f"{path}: expected mono audio, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise ConfigError(f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit")
        rate = wav.getframerate()
        raw = wav.readframes(wav.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


FMAT_MAGIC = b"FMAT1"


def write_fmat(path, matrix: np.ndarray) -> None:
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise ShapeError(f"feature matrix must be 2-D, got {m.ndim}-D")
    with open(path, "wb") as fh:
        fh.write(FMAT_MAGIC)
        fh.write(struct.pack("<II", m.shape[0], m.shape[1]))
        fh.write(m.tobytes())


def read_fmat(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:5] != FMAT_MAGIC:
        raise ConfigError(f"{path}: not a FMAT1 feature file")
    rows, cols = struct.unpack_from("<II", data, 5)
    expected = 13 + 4 * rows * cols
    if len(data) != expected:
        raise ConfigError(f"{path}: truncated feature file ({len(data)} vs {expected} bytes)")
    flat = np.frombuffer(data, dtype="<f4", count=rows * cols, offset=13)
    return flat.reshape(rows, cols).astype(np.float32)
