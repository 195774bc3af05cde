"""Mask features, audio-constrained queries, dynamic-kernel masks, reference head.

Segmentation features come from a top-down pathway: the encoder output on
the stride-8 grid is upsampled through the selected finer pyramid levels
(1x1 laterals, 3x3 convs), then average-pooled back onto the stride-8
grid, which is where masks are predicted and supervised.

Queries are per-video object-sequence embeddings. Their positional term
is the temporal mean of the audio features; per-frame audio additionally
conditions the dynamic mask kernels and the reference head.
"""

from __future__ import annotations

import numpy as np

from .backbone import glorot, zeros
from .config import ConfigError
from .encoder import AttentionParams, LayerNormAffine, multi_head_attention
from .features import AudioFeatures, VideoFeatures, VisualPyramid
from .tensor import (DimensionError, Tensor, add, avg_pool2d, concat, conv2d, expand, linear,
                     matmul, mean_pool, narrow, relu, reshape, sigmoid, softmax, transpose,
                     upsample_nearest2)


class SegFeatureParams:
    def __init__(self, channels: int, seg_levels: list[int], pyramid_channels: dict[int, int],
                 rng: np.random.Generator, dtype=np.float32):
        self.seg_levels = list(seg_levels)
        self.stages = []
        for stride in self.seg_levels:
            cin = pyramid_channels[stride]
            lat_w = glorot(rng, (cin, channels), cin, channels, dtype)
            lat_b = zeros((channels,), dtype)
            conv_w = glorot(rng, (3, 3, channels, channels), 9 * channels, 9 * channels, dtype)
            conv_b = zeros((channels,), dtype)
            self.stages.append((stride, lat_w, lat_b, conv_w, conv_b))

    def named_params(self, prefix: str = "seg"):
        for stride, lw, lb, cw, cb in self.stages:
            yield f"{prefix}.s{stride}.lat_w", lw
            yield f"{prefix}.s{stride}.lat_b", lb
            yield f"{prefix}.s{stride}.conv_w", cw
            yield f"{prefix}.s{stride}.conv_b", cb


def build_seg_features(v_final: VideoFeatures, pyramid: VisualPyramid, p: SegFeatureParams) -> Tensor:
    """(T, H/8, W/8, C) mask features from the fused encoder output + pyramid."""
    t = v_final.frames
    h8, w8 = v_final.grid
    hin, win = pyramid.input_hw
    if (h8, w8) != (hin // 8, win // 8):
        raise ConfigError(f"build_seg_features: encoder grid {v_final.grid} vs input {pyramid.input_hw}")
    x = reshape(v_final.tokens, (t, h8, w8, v_final.channels))
    for stride, lat_w, lat_b, conv_w, conv_b in p.stages:
        lateral = pyramid.level(stride)
        x = upsample_nearest2(x)
        if x.shape[1:3] != lateral.shape[1:3]:
            raise ConfigError(f"build_seg_features: stride-{stride} level {lateral.shape} "
                              f"does not match pathway {x.shape}")
        x = add(x, linear(lateral, lat_w, lat_b))
        x = conv2d(x, conv_w, conv_b, stride=1)
    factor = 2 ** len(p.stages)
    if factor > 1:
        x = avg_pool2d(x, factor)
    return x


class DecoderLayerParams:
    def __init__(self, channels: int, ffn_dim: int, rng: np.random.Generator, dtype=np.float32):
        self.self_attn = AttentionParams(channels, rng, dtype)
        self.ln1 = LayerNormAffine(channels, dtype)
        self.cross_attn = AttentionParams(channels, rng, dtype)
        self.ln2 = LayerNormAffine(channels, dtype)
        self.ffn_w1 = glorot(rng, (channels, ffn_dim), channels, ffn_dim, dtype)
        self.ffn_b1 = zeros((ffn_dim,), dtype)
        self.ffn_w2 = glorot(rng, (ffn_dim, channels), ffn_dim, channels, dtype)
        self.ffn_b2 = zeros((channels,), dtype)
        self.ln3 = LayerNormAffine(channels, dtype)

    def named_params(self, prefix: str):
        yield from self.self_attn.named_params(f"{prefix}.self")
        yield from self.ln1.named_params(f"{prefix}.ln1")
        yield from self.cross_attn.named_params(f"{prefix}.cross")
        yield from self.ln2.named_params(f"{prefix}.ln2")
        yield f"{prefix}.ffn_w1", self.ffn_w1
        yield f"{prefix}.ffn_b1", self.ffn_b1
        yield f"{prefix}.ffn_w2", self.ffn_w2
        yield f"{prefix}.ffn_b2", self.ffn_b2
        yield from self.ln3.named_params(f"{prefix}.ln3")


class QueryDecoder:
    def __init__(self, channels: int, num_queries: int, layers: int, ffn_dim: int, n_heads: int,
                 rng: np.random.Generator, dtype=np.float32):
        if num_queries < 1:
            raise ConfigError(f"num_queries must be >= 1, got {num_queries}")
        self.n_heads = n_heads
        self.embeddings = Tensor((0.1 * rng.standard_normal((num_queries, channels))).astype(dtype),
                                 requires_grad=True)
        self.layers = [DecoderLayerParams(channels, ffn_dim, rng, dtype) for _ in range(layers)]

    def __call__(self, audio: AudioFeatures, seg: Tensor, embeddings: Tensor | None = None) -> Tensor:
        """Decode queries against seg tokens; returns (N, C)."""
        q = embeddings if embeddings is not None else self.embeddings
        if q.shape[1] != audio.channels or seg.shape[3] != q.shape[1]:
            raise DimensionError(f"decode_queries: queries {q.shape}, audio {audio.tokens.shape}, "
                                 f"seg {seg.shape}")
        pos = mean_pool(audio.tokens, axis=0)                       # (C,) audio constraint
        q = add(q, pos)
        t, h, w, c = seg.shape
        mem = reshape(seg, (t * h * w, c))
        for layer in self.layers:
            q = layer.ln1(add(q, multi_head_attention(q, q, layer.self_attn, self.n_heads)))
            q = layer.ln2(add(q, multi_head_attention(q, mem, layer.cross_attn, self.n_heads)))
            ff = linear(relu(linear(q, layer.ffn_w1, layer.ffn_b1)), layer.ffn_w2, layer.ffn_b2)
            q = layer.ln3(add(q, ff))
        return q

    def named_params(self, prefix: str = "decoder"):
        yield f"{prefix}.embeddings", self.embeddings
        for i, layer in enumerate(self.layers):
            yield from layer.named_params(f"{prefix}.layer{i}")


class KernelHeadParams:
    """Two-layer MLP from (query, per-frame audio) to C+1 dynamic conv weights."""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.w1 = glorot(rng, (2 * channels, hidden), 2 * channels, hidden, dtype)
        self.b1 = zeros((hidden,), dtype)
        self.w2 = glorot(rng, (hidden, channels + 1), hidden, channels + 1, dtype)
        self.b2 = zeros((channels + 1,), dtype)

    def named_params(self, prefix: str = "kernel"):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2


def _query_frame_grid(decoded: Tensor, audio: AudioFeatures) -> Tensor:
    """(N, T, 2C): every query paired with every frame's audio token."""
    n, c = decoded.shape
    t = audio.frames
    q = expand(reshape(decoded, (n, 1, c)), 1, t)
    a = expand(reshape(audio.tokens, (1, t, c)), 0, n)
    return concat([q, a], axis=-1)


def dynamic_masks(decoded: Tensor, audio: AudioFeatures, seg: Tensor, p: KernelHeadParams) -> Tensor:
    """Per-query per-frame 1x1 dynamic conv over seg features -> (N, T, h, w) probs."""
    n = decoded.shape[0]
    t, h, w, c = seg.shape
    grid = _query_frame_grid(decoded, audio)                        # (N, T, 2C)
    kernels = linear(relu(linear(grid, p.w1, p.b1)), p.w2, p.b2)    # (N, T, C+1)
    kw = narrow(kernels, 2, 0, c)
    kb = narrow(kernels, 2, c, 1)                                   # (N, T, 1)
    seg_flat = reshape(seg, (t, h * w, c))
    wt = transpose(kw, (1, 2, 0))                                   # (T, C, N)
    logits = transpose(matmul(seg_flat, wt), (2, 0, 1))             # (N, T, h*w)
    logits = add(logits, expand(kb, 2, h * w))
    return reshape(sigmoid(logits), (n, t, h, w))


class RefHeadParams:
    """Single linear layer + softmax over {background, referred-and-visible}."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.w = glorot(rng, (2 * channels, 2), 2 * channels, 2, dtype)
        self.b = zeros((2,), dtype)

    def named_params(self, prefix: str = "ref"):
        yield f"{prefix}.w", self.w
        yield f"{prefix}.b", self.b


def reference_head(decoded: Tensor, audio: AudioFeatures, p: RefHeadParams) -> Tensor:
    """(N, T, 2) probabilities; index 1 = referred and visible this frame."""
    grid = _query_frame_grid(decoded, audio)
    return softmax(linear(grid, p.w, p.b), axis=-1)
