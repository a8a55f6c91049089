"""Minimal neural building blocks on H x W x D feature maps.

Feature maps are plain numpy arrays laid out (H, W, D): row index first,
then column, channels last. Reductions go through ``np.einsum`` /
``ndarray.mean`` without BLAS dispatch, so the summation order depends
only on the shapes and repeated runs are bit-identical.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from fourierslam.config import get_dtype
from fourierslam.errors import ShapeError


def as_feature_map(x, name="x"):
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(get_dtype())
    if x.ndim != 3 or min(x.shape) < 1:
        raise ShapeError(f"{name}: expected an H x W x D feature map, got shape {x.shape}")
    return x


@dataclass(frozen=True)
class LayerNormParams:
    """Per-channel affine layer norm. ``None`` gain/shift mean 1 and 0."""

    gain: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None
    eps: float = 1e-5

    def __post_init__(self):
        # eps == 0 is allowed for exact hand checks; zero variance is guarded separately.
        if not self.eps >= 0:
            raise ValueError(f"layer norm eps must be >= 0, got {self.eps}")


@dataclass(frozen=True)
class ConvParams:
    weight: np.ndarray  # (kh, kw, d_in, d_out)
    bias: np.ndarray  # (d_out,)
    stride: int = 1
    padding: int = 0

    def __post_init__(self):
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be (kh, kw, d_in, d_out), got {self.weight.shape}")
        if self.bias.shape != (self.weight.shape[3],):
            raise ShapeError(
                f"conv bias length {self.bias.shape} does not match d_out={self.weight.shape[3]}"
            )
        if self.stride < 1 or self.padding < 0:
            raise ValueError(f"invalid stride/padding {self.stride}/{self.padding}")

    @property
    def d_in(self):
        return self.weight.shape[2]

    @property
    def d_out(self):
        return self.weight.shape[3]

    @property
    def kernel(self):
        return self.weight.shape[:2]

    @classmethod
    def identity(cls, d, dtype=None):
        dtype = dtype or get_dtype()
        return cls(np.eye(d, dtype=dtype)[None, None], np.zeros(d, dtype=dtype))

    @classmethod
    def zeros(cls, d_in, d_out, kernel=1, dtype=None):
        dtype = dtype or get_dtype()
        return cls(np.zeros((kernel, kernel, d_in, d_out), dtype), np.zeros(d_out, dtype))

    @classmethod
    def random(cls, rng, d_in, d_out, kernel=1, stride=1, padding=0, dtype=None):
        """He-style init scaled by 1/sqrt(fan_in); bias starts at zero."""
        dtype = dtype or get_dtype()
        fan_in = kernel * kernel * d_in
        w = rng.standard_normal((kernel, kernel, d_in, d_out)) / np.sqrt(fan_in)
        return cls(w.astype(dtype), np.zeros(d_out, dtype), stride, padding)


def layer_norm(x, p=None):
    """Normalize each position's channel vector to zero mean, unit variance.

    Positions whose channels are all equal map exactly to ``p.shift``.
    """
    x = as_feature_map(x)
    d = x.shape[-1]
    p = p or LayerNormParams()
    gain = np.ones(d, x.dtype) if p.gain is None else np.asarray(p.gain, x.dtype)
    shift = np.zeros(d, x.dtype) if p.shift is None else np.asarray(p.shift, x.dtype)
    if gain.shape != (d,) or shift.shape != (d,):
        raise ShapeError(f"layer norm gain/shift must have length {d}")

    constant = np.all(x == x[..., :1], axis=-1, keepdims=True)
    centered = np.where(constant, 0, x - x.mean(axis=-1, keepdims=True))
    var = (centered * centered).mean(axis=-1, keepdims=True)
    denom = np.sqrt(var + x.dtype.type(p.eps))
    denom = np.where(denom == 0, 1, denom)
    return (centered / denom * gain + shift).astype(x.dtype, copy=False)


def conv2d(x, p):
    """Zero-padded cross-correlation convolution, (H, W, D_in) -> (H', W', D_out)."""
    x = as_feature_map(x)
    if x.shape[-1] != p.d_in:
        raise ShapeError(f"conv expects {p.d_in} input channels, got {x.shape[-1]}")
    kh, kw = p.kernel
    pad = p.padding
    if pad:
        x = np.pad(x, ((pad, pad), (pad, pad), (0, 0)))
    if x.shape[0] < kh or x.shape[1] < kw:
        raise ShapeError(f"conv kernel {kh}x{kw} larger than padded input {x.shape[:2]}")
    windows = sliding_window_view(x, (kh, kw), axis=(0, 1))[:: p.stride, :: p.stride]
    dtype = np.result_type(x.dtype, p.weight.dtype)
    out = np.einsum("hwcij,ijco->hwo", windows, p.weight.astype(dtype, copy=False))
    return out + p.bias.astype(dtype, copy=False)


def relu(x):
    return np.maximum(x, 0)
