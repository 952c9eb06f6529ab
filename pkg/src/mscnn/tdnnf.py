"""Factorized dilated time-delay layer.

A 3-tap dilated convolution over [-r, 0, +r] decomposed into two factors:
the first splices offsets {-r, 0} into a semi-orthogonally-constrained
bottleneck projection, the second splices offsets {0, +r} back up to the
output width, followed by an identity skip connection, batch norm and
dropout.  Each layer trims r frames of context on either side, so a stack
of L layers at dilation r consumes 2*L*r frames in total.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ContextError
from .layers import BatchNorm, Dropout, Layer, he_uniform
from .ops import matmul_rows

SEMI_ORTHO_ALPHA = 0.125


def constrain_semi_orthogonal(m: np.ndarray, alpha: float = SEMI_ORTHO_ALPHA) -> np.ndarray:
    """One step of the update pulling m (rows = bottleneck dim) toward m @ m.T = I."""
    p = m @ m.T
    p[np.diag_indices_from(p)] -= 1.0
    return m - alpha * (p @ m)


def semi_orthogonal_defect(m: np.ndarray) -> float:
    p = m @ m.T
    p[np.diag_indices_from(p)] -= 1.0
    return float(np.linalg.norm(p))


class TdnnfLayer(Layer):
    """One factorized layer: splice/project/splice/expand + skip + BN + dropout.

    The identity skip requires d_in == d_out; when the widths differ the
    skip is disabled (only the case for the first layer after a stem of a
    different width).
    """

    def __init__(
        self,
        name,
        d_in,
        d_out,
        bottleneck,
        dilation,
        rng,
        *,
        dropout_p=0.1,
        skip_scale=0.66,
        skip=None,
        dropout_seed=0,
        dtype=np.float32,
    ):
        super().__init__(name)
        if bottleneck >= d_in:
            raise ConfigError(
                f"{name}: bottleneck {bottleneck} must be smaller than d_in {d_in}"
            )
        if dilation < 1:
            raise ConfigError(f"{name}: dilation must be positive, got {dilation}")
        if skip is None:
            skip = d_in == d_out
        if skip and d_in != d_out:
            raise ConfigError(
                f"{name}: identity skip needs d_in == d_out, got {d_in} vs {d_out}"
            )
        self.d_in, self.d_out = d_in, d_out
        self.bottleneck = bottleneck
        self.dilation = dilation
        self.skip = skip
        self.skip_scale = skip_scale
        self.add_param("factor_a", he_uniform(rng, (2 * d_in, bottleneck), 2 * d_in, dtype))
        self.add_param("factor_b", he_uniform(rng, (2 * bottleneck, d_out), 2 * bottleneck, dtype))
        self.add_param("bias", np.zeros(d_out, dtype=dtype))
        self.bn = BatchNorm(f"{name}.bn", d_out, dtype=dtype)
        self.dropout = Dropout(f"{name}.dropout", dropout_p, seed=dropout_seed)

    def children(self):
        return [self.bn, self.dropout]

    def constraint_step(self, alpha: float = SEMI_ORTHO_ALPHA) -> None:
        m = np.ascontiguousarray(self.params["factor_a"].T)
        self.params["factor_a"][...] = constrain_semi_orthogonal(m, alpha).T

    def ortho_defect(self) -> float:
        return semi_orthogonal_defect(np.ascontiguousarray(self.params["factor_a"].T))

    def output_frames(self, t_in: int, dilation: int | None = None) -> int:
        return t_in - 2 * (self.dilation if dilation is None else dilation)

    def forward(self, x, train=False, dilation=None):
        """Run the layer; dilation may be overridden for grid-strided inference."""
        r = self.dilation if dilation is None else dilation
        t = x.shape[0]
        if t < 2 * r + 1:
            raise ContextError(
                f"{self.name}: need at least {2 * r + 1} frames for dilation {r}, got {t}"
            )
        if dilation is not None and train:
            raise ConfigError(f"{self.name}: dilation override is inference-only")
        # first factor reads offsets {-r, 0}
        u = np.concatenate([x[: t - r], x[r:]], axis=1)
        h = matmul_rows(u, self.params["factor_a"])
        # second factor reads offsets {0, +r} of the bottleneck sequence
        v = np.concatenate([h[: t - 2 * r], h[r:]], axis=1)
        y = matmul_rows(v, self.params["factor_b"]) + self.params["bias"]
        if self.skip:
            y = y + x.dtype.type(self.skip_scale) * x[r : t - r]
        y = self.bn.forward(y, train)
        y = self.dropout.forward(y, train)
        if train:
            self._cache = (x, u, v, r)
        return y

    def backward(self, grad_out):
        x, u, v, r = self._take_cache()
        t = x.shape[0]
        g = self.dropout.backward(grad_out)
        g = self.bn.backward(g)
        self.grads["factor_b"] += v.T @ g
        self.grads["bias"] += g.sum(axis=0)
        gv = g @ self.params["factor_b"].T
        b = self.bottleneck
        gh = np.zeros((t - r, b), dtype=x.dtype)
        gh[: t - 2 * r] += gv[:, :b]
        gh[r:] += gv[:, b:]
        self.grads["factor_a"] += u.T @ gh
        gu = gh @ self.params["factor_a"].T
        grad_in = np.zeros_like(x)
        grad_in[: t - r] += gu[:, : self.d_in]
        grad_in[r:] += gu[:, self.d_in :]
        if self.skip:
            grad_in[r : t - r] += x.dtype.type(self.skip_scale) * g
        return grad_in
