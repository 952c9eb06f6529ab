"""Dense numeric kernels every layer is built from.

Arrays are plain numpy ndarrays in row-major, channels-last layout:
1D sequences are [T, C], 2D feature maps are [T, F, C].  float32 is the
working precision for parameters and activations; float64 is used for
gradient verification.  All kernels are pure functions of their inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContextError, ShapeError


def matmul_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b whose row results do not depend on how many rows are computed.

    Frame-wise outputs must be identical whether frames go through the
    network together or in a strided subset (sub-sampled inference has to
    be bit-identical to strided dense inference).  BLAS breaks that in two
    ways: single-row products dispatch to a different kernel, and kernels
    for awkward column counts vectorize the remainder across rows.  Both
    disappear when the product has >= 2 rows and a multiple-of-16 column
    count, so pad to that shape and slice the padding back off.
    """
    n = b.shape[1]
    pad_n = (-n) % 16
    if pad_n:
        b = np.concatenate([b, np.zeros((b.shape[0], pad_n), dtype=b.dtype)], axis=1)
    if a.shape[0] == 1:
        return (np.concatenate([a, a], axis=0) @ b)[:1, :n]
    out = a @ b
    return out[:, :n] if pad_n else out


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a [m, k] and b [k, n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions differ: a is {a.shape[0]}x{a.shape[1]}, "
            f"b is {b.shape[0]}x{b.shape[1]}"
        )
    return matmul_rows(a, b)


@dataclass(frozen=True)
class ConvSpec1D:
    """Geometry of a dilated 1-D convolution.

    Taps are integer time offsets read relative to an output frame's
    window, e.g. [-3, 0, 3] for a 3-tap kernel with dilation 3.  Dilation
    is implicit in the offsets.
    """

    in_channels: int
    out_channels: int
    taps: tuple[int, ...] = field(default=(0,))

    def __post_init__(self):
        if self.in_channels <= 0 or self.out_channels <= 0:
            raise ShapeError("conv channels must be positive")
        taps = tuple(int(t) for t in self.taps)
        if not taps:
            raise ShapeError("conv spec needs at least one tap")
        if any(b <= a for a, b in zip(taps, taps[1:])):
            raise ShapeError(f"taps must be strictly increasing, got {taps}")
        object.__setattr__(self, "taps", taps)

    @property
    def span(self) -> int:
        return self.taps[-1] - self.taps[0]


def conv1d(x: np.ndarray, weights: np.ndarray, spec: ConvSpec1D) -> np.ndarray:
    """Valid dilated 1-D convolution over the time axis.

    Args:
        x: input [T, in_channels].
        weights: [len(taps), in_channels, out_channels].
        spec: tap geometry and channel counts.

    Returns:
        [T - span, out_channels] where span = max(taps) - min(taps).
        Output frame t reads exactly input frames {t - min(taps) + tap}.
    """
    if x.ndim != 2:
        raise ShapeError(f"conv1d input must be [T, C], got {x.ndim}-D")
    t_in, c_in = x.shape
    if c_in != spec.in_channels:
        raise ShapeError(
            f"conv1d input has {c_in} channels but spec.in_channels is {spec.in_channels}"
        )
    expected = (len(spec.taps), spec.in_channels, spec.out_channels)
    if weights.shape != expected:
        raise ShapeError(f"conv1d weights shape {weights.shape} != expected {expected}")
    span = spec.span
    t_out = t_in - span
    if t_out < 1:
        raise ContextError(
            f"insufficient temporal context: need at least {span + 1} frames, got {t_in}"
        )
    out = np.zeros((t_out, spec.out_channels), dtype=x.dtype)
    base = -spec.taps[0]
    for j, tap in enumerate(spec.taps):
        start = base + tap
        out += matmul_rows(x[start : start + t_out], weights[j])
    return out


def _conv2d_same(x: np.ndarray, weights: np.ndarray, freq_stride: int) -> np.ndarray:
    """Zero-padded 3x3 convolution, stride applied to the frequency axis only."""
    t, f, c_in = x.shape
    c_out = weights.shape[3]
    f_out = (f + freq_stride - 1) // freq_stride
    padded = np.zeros((t + 2, f + 2, c_in), dtype=x.dtype)
    padded[1 : t + 1, 1 : f + 1] = x
    out = np.zeros((t, f_out, c_out), dtype=x.dtype)
    for i in range(3):
        for j in range(3):
            stop = j + freq_stride * (f_out - 1) + 1
            patch = padded[i : i + t, j : stop : freq_stride]
            out += np.tensordot(patch, weights[i, j], axes=([2], [0]))
    return out


def conv2d(x: np.ndarray, weights: np.ndarray, freq_stride: int = 1) -> np.ndarray:
    """Same-padded 3x3 2-D convolution over a [T, F, Cin] feature map.

    The time extent is always preserved; the frequency axis is strided by
    freq_stride, yielding F' = ceil(F / freq_stride) columns.
    """
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be [T, F, C], got {x.ndim}-D")
    if freq_stride not in (1, 2):
        raise ShapeError(f"freq_stride must be 1 or 2, got {freq_stride}")
    t, f, c_in = x.shape
    if f < 3:
        raise ShapeError(f"conv2d input frequency extent F={f} is below the minimum of 3")
    if weights.ndim != 4 or weights.shape[:2] != (3, 3):
        raise ShapeError(f"conv2d weights must be [3, 3, Cin, Cout], got {weights.shape}")
    if weights.shape[2] != c_in:
        raise ShapeError(
            f"conv2d input has {c_in} channels but weights expect {weights.shape[2]}"
        )
    return _conv2d_same(x, weights, freq_stride)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.shape != b.shape:
        raise ShapeError(f"add operands differ in shape: {a.shape} vs {b.shape}")
    return a + b


def scale(x: np.ndarray, alpha: float) -> np.ndarray:
    return x * x.dtype.type(alpha)


def concat_channels(parts: list[np.ndarray]) -> np.ndarray:
    """Concatenate [T, d_m] blocks along channels, preserving block order."""
    if not parts:
        raise ShapeError("concat_channels needs at least one operand")
    t = parts[0].shape[0]
    for m, p in enumerate(parts):
        if p.ndim != 2:
            raise ShapeError(f"concat operand {m} must be [T, d], got {p.ndim}-D")
        if p.shape[0] != t:
            raise ShapeError(
                f"concat operand {m} has {p.shape[0]} frames, expected {t}"
            )
    return np.concatenate(parts, axis=1)


def split_channels(x: np.ndarray, sizes: list[int]) -> list[np.ndarray]:
    """Inverse of concat_channels for the given block sizes."""
    if sum(sizes) != x.shape[1]:
        raise ShapeError(
            f"split sizes sum to {sum(sizes)} but input has {x.shape[1]} channels"
        )
    out, start = [], 0
    for s in sizes:
        out.append(x[:, start : start + s])
        start += s
    return out
