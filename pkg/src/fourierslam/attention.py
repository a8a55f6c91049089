"""Fourier self- and cross-attention and the two-branch RGB-D encoder.

Attention maps are circular cross-correlations of the query and key maps
computed in the frequency domain (``spectral_correlate``), normalized per
position and multiplied element-wise with the value map. Each block is
residual: ``out = f + Conv1x1(LN(corr(Q, K)) * V)``.
"""

from dataclasses import dataclass, fields
from pathlib import Path
from typing import List

import numpy as np

from fourierslam.config import get_dtype
from fourierslam.errors import DataError, ShapeError
from fourierslam.nn import ConvParams, LayerNormParams, as_feature_map, conv2d, layer_norm, relu
from fourierslam.spectral import spectral_correlate
from fourierslam.tensor_io import read_tensor, write_tensor

MANIFEST = "manifest.txt"


@dataclass(frozen=True)
class AttentionParams:
    """Projections, norm and output conv for one branch of one attention block."""

    q: ConvParams
    k: ConvParams
    v: ConvParams
    norm: LayerNormParams
    out: ConvParams

    def __post_init__(self):
        d = self.out.d_in
        for role in ("q", "k", "v"):
            c = getattr(self, role)
            if c.d_in != d or c.d_out != d:
                raise ShapeError(f"{role} projection must map {d} -> {d} channels")
        if self.out.kernel != (1, 1) or self.out.d_out != d:
            raise ShapeError("output conv must be 1x1 with D -> D channels")

    @property
    def channels(self):
        return self.out.d_in

    @classmethod
    def random(cls, rng, d, dtype=None):
        return cls(
            ConvParams.random(rng, d, d, dtype=dtype),
            ConvParams.random(rng, d, d, dtype=dtype),
            ConvParams.random(rng, d, d, dtype=dtype),
            LayerNormParams(),
            ConvParams.random(rng, d, d, dtype=dtype),
        )


def _same_spatial(conv, f):
    out = conv2d(f, conv)
    if out.shape[:2] != f.shape[:2]:
        raise ShapeError(f"projection changed the spatial extent {f.shape[:2]} -> {out.shape[:2]}")
    return out


def project_qkv(f, p):
    f = as_feature_map(f)
    if f.shape[-1] != p.channels:
        raise ShapeError(f"attention params expect {p.channels} channels, got {f.shape[-1]}")
    return _same_spatial(p.q, f), _same_spatial(p.k, f), _same_spatial(p.v, f)


def _attend(residual, query, key, value, p, mode):
    attn = layer_norm(spectral_correlate(query, key, mode), p.norm)
    return residual + conv2d(attn * value, p.out)


def fourier_self_attention(f, p, mode=None):
    f = as_feature_map(f)
    q, k, v = project_qkv(f, p)
    return _attend(f, q, k, v, p, mode)


def fourier_cross_attention(f_r, f_d, p_r, p_d, mode=None):
    """Bidirectional cross-attention between the RGB and depth branches.

    The RGB output correlates the depth query with the RGB key and weights
    the RGB value; the depth output mirrors this (RGB query, depth key).
    ``p_r`` / ``p_d`` hold each branch's projections and its output norm/conv.
    """
    f_r = as_feature_map(f_r, "f_r")
    f_d = as_feature_map(f_d, "f_d")
    if f_r.shape != f_d.shape:
        raise ShapeError(f"branch features differ in shape: {f_r.shape} vs {f_d.shape}")
    q_r, k_r, v_r = project_qkv(f_r, p_r)
    q_d, k_d, v_d = project_qkv(f_d, p_d)
    out_r = _attend(f_r, q_d, k_r, v_r, p_r, mode)
    out_d = _attend(f_d, q_r, k_d, v_d, p_d, mode)
    return out_r, out_d


@dataclass(frozen=True)
class EncoderParams:
    rgb_stack: List[ConvParams]
    depth_stack: List[ConvParams]
    self_rgb: AttentionParams
    self_depth: AttentionParams
    cross_rgb: AttentionParams
    cross_depth: AttentionParams
    feature_stride: int = 8

    def __post_init__(self):
        if self.feature_stride < 1:
            raise ValueError("feature stride must be >= 1")
        d = self.self_rgb.channels
        for name in ("self_depth", "cross_rgb", "cross_depth"):
            if getattr(self, name).channels != d:
                raise ShapeError(f"{name} has {getattr(self, name).channels} channels, expected {d}")
        for name in ("rgb_stack", "depth_stack"):
            stack = getattr(self, name)
            if not stack or stack[-1].d_out != d:
                raise ShapeError(f"{name} must end in {d} channels")
            total = int(np.prod([c.stride for c in stack]))
            if total != self.feature_stride:
                raise ShapeError(f"{name} strides multiply to {total}, not {self.feature_stride}")

    @property
    def channels(self):
        return self.self_rgb.channels


def conv_stack(rng, d_in, d, stride, dtype=None):
    """3x3 same-size conv, ReLU, then a stride x stride patchify conv."""
    return [
        ConvParams.random(rng, d_in, d, kernel=3, padding=1, dtype=dtype),
        ConvParams.random(rng, d, d, kernel=stride, stride=stride, dtype=dtype),
    ]


def init_encoder_params(channels=16, feature_stride=8, seed=0, dtype=None):
    """Seeded random encoder parameters (no training happens in this package)."""
    dtype = dtype or get_dtype()
    rng = np.random.default_rng(seed)
    return EncoderParams(
        rgb_stack=conv_stack(rng, 3, channels, feature_stride, dtype),
        depth_stack=conv_stack(rng, 1, channels, feature_stride, dtype),
        self_rgb=AttentionParams.random(rng, channels, dtype),
        self_depth=AttentionParams.random(rng, channels, dtype),
        cross_rgb=AttentionParams.random(rng, channels, dtype),
        cross_depth=AttentionParams.random(rng, channels, dtype),
        feature_stride=feature_stride,
    )


def _run_stack(x, stack):
    for i, conv in enumerate(stack):
        x = conv2d(x, conv)
        if i < len(stack) - 1:
            x = relu(x)
    return x


def encode_pair(rgb, depth, p, mode=None):
    """RGB (H, W, 3) and depth (H, W[, 1]) -> two (H/s, W/s, D) fused maps."""
    rgb = as_feature_map(rgb, "rgb")
    depth = np.asarray(depth)
    if depth.ndim == 2:
        depth = depth[..., None]
    depth = as_feature_map(depth, "depth")
    if rgb.shape[-1] != 3 or depth.shape[-1] != 1:
        raise ShapeError(f"expected RGB with 3 channels and depth with 1, got {rgb.shape}, {depth.shape}")
    if rgb.shape[:2] != depth.shape[:2]:
        raise ShapeError(f"RGB {rgb.shape[:2]} and depth {depth.shape[:2]} extents differ")
    s = p.feature_stride
    if rgb.shape[0] % s or rgb.shape[1] % s:
        raise ShapeError(f"image extents {rgb.shape[:2]} not divisible by feature stride {s}")
    f_r = _run_stack(rgb, p.rgb_stack)
    f_d = _run_stack(depth, p.depth_stack)
    f_r = fourier_self_attention(f_r, p.self_rgb, mode)
    f_d = fourier_self_attention(f_d, p.self_depth, mode)
    return fourier_cross_attention(f_r, f_d, p.cross_rgb, p.cross_depth, mode)


# --- parameter bundles -------------------------------------------------------
#
# A bundle is a directory of FMFT tensors plus manifest.txt with lines
#   tensor <role> <file>
#   meta <key> <value>
# Roles look like "rgb_stack.0.weight" or "self_rgb.q.bias"; conv meta keys
# are "<conv role>.stride" / ".padding", norm eps is "<block>.norm.eps".


def _conv_entries(prefix, conv):
    yield "tensor", f"{prefix}.weight", conv.weight
    yield "tensor", f"{prefix}.bias", conv.bias
    yield "meta", f"{prefix}.stride", conv.stride
    yield "meta", f"{prefix}.padding", conv.padding


def _attention_entries(prefix, a):
    for role in ("q", "k", "v", "out"):
        yield from _conv_entries(f"{prefix}.{role}", getattr(a, role))
    d = a.channels
    gain = np.ones(d) if a.norm.gain is None else a.norm.gain
    shift = np.zeros(d) if a.norm.shift is None else a.norm.shift
    dtype = a.out.weight.dtype
    yield "tensor", f"{prefix}.norm.gain", np.asarray(gain, dtype)
    yield "tensor", f"{prefix}.norm.shift", np.asarray(shift, dtype)
    yield "meta", f"{prefix}.norm.eps", a.norm.eps


def save_encoder_params(p, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["# FMFT parameter bundle", f"meta feature_stride {p.feature_stride}"]
    entries = []
    for name in ("rgb_stack", "depth_stack"):
        for i, conv in enumerate(getattr(p, name)):
            entries.extend(_conv_entries(f"{name}.{i}", conv))
    for name in ("self_rgb", "self_depth", "cross_rgb", "cross_depth"):
        entries.extend(_attention_entries(name, getattr(p, name)))
    for kind, role, value in entries:
        if kind == "tensor":
            fname = f"{role}.fmft"
            write_tensor(directory / fname, value)
            lines.append(f"tensor {role} {fname}")
        else:
            lines.append(f"meta {role} {value!r}")
    (directory / MANIFEST).write_text("\n".join(lines) + "\n")


def _read_manifest(directory):
    path = directory / MANIFEST
    if not path.is_file():
        raise DataError(f"{path}: parameter manifest not found")
    tensors, meta = {}, {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3 or parts[0] not in ("tensor", "meta"):
            raise DataError(f"{path}:{lineno}: expected 'tensor <role> <file>' or 'meta <key> <value>'")
        kind, key, value = parts
        if kind == "tensor":
            try:
                tensors[key] = read_tensor(directory / value)
            except FileNotFoundError:
                raise DataError(f"{directory / value}: tensor file missing") from None
        else:
            try:
                meta[key] = float(value)
            except ValueError:
                raise DataError(f"{path}:{lineno}: meta value {value!r} is not a number") from None
    return tensors, meta


def load_encoder_params(directory):
    directory = Path(directory)
    tensors, meta = _read_manifest(directory)

    def need(store, key):
        if key not in store:
            raise DataError(f"{directory / MANIFEST}: missing entry {key!r}")
        return store[key]

    def conv(prefix):
        return ConvParams(
            need(tensors, f"{prefix}.weight"),
            need(tensors, f"{prefix}.bias"),
            int(need(meta, f"{prefix}.stride")),
            int(need(meta, f"{prefix}.padding")),
        )

    def attention(prefix):
        return AttentionParams(
            conv(f"{prefix}.q"),
            conv(f"{prefix}.k"),
            conv(f"{prefix}.v"),
            LayerNormParams(
                need(tensors, f"{prefix}.norm.gain"),
                need(tensors, f"{prefix}.norm.shift"),
                need(meta, f"{prefix}.norm.eps"),
            ),
            conv(f"{prefix}.out"),
        )

    def stack(name):
        layers, i = [], 0
        while f"{name}.{i}.weight" in tensors:
            layers.append(conv(f"{name}.{i}"))
            i += 1
        return layers

    kwargs = {
        "rgb_stack": stack("rgb_stack"),
        "depth_stack": stack("depth_stack"),
        "feature_stride": int(need(meta, "feature_stride")),
    }
    for f in fields(EncoderParams):
        if f.name.startswith(("self_", "cross_")):
            kwargs[f.name] = attention(f.name)
    return EncoderParams(**kwargs)
