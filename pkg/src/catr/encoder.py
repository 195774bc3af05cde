"""Decoupled audio-visual transformer encoder.

Each block runs three fusion steps:
  1. spatial fusion - per-frame self-attention over the P video tokens
     plus the frame's single audio token;
  2. temporal audio-to-video - per spatial position, video queries attend
     over audio frames;
  3. temporal video-to-audio - audio queries attend over spatially pooled
     video frames; the updated audio is also broadcast back over positions.
Video output is the element-wise sum of the two temporal paths, then
layer norm; audio output is the video-to-audio result. Residual + layer
norm follow every attention (plain transformer practice; deep stacks
diverge without it).

A learned temporal position table is added to both streams before the
first block. There are no positional terms across spatial tokens, so
spatial fusion is exactly permutation-equivariant over positions.
"""

from __future__ import annotations

import math

import numpy as np

from .backbone import glorot, zeros
from .config import ConfigError
from .features import AudioFeatures, VideoFeatures
from .tensor import (DimensionError, Tensor, add, concat, expand, layer_norm, linear, matmul,
                     mean_pool, mul, narrow, reshape, softmax, transpose)

# Tests may set this to a list; every attention op then appends its
# probability arrays (post-softmax) for invariant checking.
ATTN_PROBE: list | None = None


class AttentionParams:
    """Q/K/V projections, each C x C with n_heads * d_head == C."""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float32):
        self.wq = glorot(rng, (channels, channels), channels, channels, dtype)
        self.wk = glorot(rng, (channels, channels), channels, channels, dtype)
        self.wv = glorot(rng, (channels, channels), channels, channels, dtype)

    def named_params(self, prefix: str):
        yield f"{prefix}.wq", self.wq
        yield f"{prefix}.wk", self.wk
        yield f"{prefix}.wv", self.wv


class LayerNormAffine:
    def __init__(self, channels: int, dtype=np.float32):
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = zeros((channels,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return add(mul(layer_norm(x, axis=-1), self.gamma), self.beta)

    def named_params(self, prefix: str):
        yield f"{prefix}.gamma", self.gamma
        yield f"{prefix}.beta", self.beta


def multi_head_attention(q_in: Tensor, kv_in: Tensor, p: AttentionParams, n_heads: int) -> Tensor:
    """Attention over the second-to-last axis; identical leading (batch) axes.

    q_in: (..., Sq, C), kv_in: (..., Skv, C) -> (..., Sq, C).
    """
    if q_in.shape[:-2] != kv_in.shape[:-2] or q_in.shape[-1] != kv_in.shape[-1]:
        raise DimensionError(f"attention: query {q_in.shape} vs key/value {kv_in.shape}")
    c = q_in.shape[-1]
    d_head = c // n_heads
    lead = q_in.shape[:-2]
    nl = len(lead)
    sq, skv = q_in.shape[-2], kv_in.shape[-2]

    def heads(x, s):
        x = reshape(x, (*lead, s, n_heads, d_head))
        axes = tuple(range(nl)) + (nl + 1, nl, nl + 2)
        return transpose(x, axes)  # (..., heads, s, d_head)

    q = heads(linear(q_in, p.wq), sq)
    k = heads(linear(kv_in, p.wk), skv)
    v = heads(linear(kv_in, p.wv), skv)

    kt = transpose(k, tuple(range(nl)) + (nl, nl + 2, nl + 1))
    scores = mul(matmul(q, kt), 1.0 / math.sqrt(d_head))
    probs = softmax(scores, axis=-1)
    if ATTN_PROBE is not None:
        ATTN_PROBE.append(probs.data.copy())
    out = matmul(probs, v)  # (..., heads, sq, d_head)
    axes_back = tuple(range(nl)) + (nl + 1, nl, nl + 2)
    out = transpose(out, axes_back)
    return reshape(out, (*lead, sq, c))


class DavtBlockParams:
    def __init__(self, channels: int, n_heads: int, rng: np.random.Generator, dtype=np.float32):
        if channels % n_heads:
            raise ConfigError(f"channels {channels} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.sf = AttentionParams(channels, rng, dtype)
        self.ln_sf = LayerNormAffine(channels, dtype)
        self.tav = AttentionParams(channels, rng, dtype)
        self.ln_tav = LayerNormAffine(channels, dtype)
        self.tva = AttentionParams(channels, rng, dtype)
        self.ln_tva = LayerNormAffine(channels, dtype)
        self.ln_merge = LayerNormAffine(channels, dtype)

    def named_params(self, prefix: str):
        for sub, obj in [("sf", self.sf), ("ln_sf", self.ln_sf), ("tav", self.tav),
                         ("ln_tav", self.ln_tav), ("tva", self.tva), ("ln_tva", self.ln_tva),
                         ("ln_merge", self.ln_merge)]:
            yield from obj.named_params(f"{prefix}.{sub}")


def spatial_fusion(v: VideoFeatures, a: AudioFeatures, p: DavtBlockParams) -> tuple[VideoFeatures, AudioFeatures]:
    """Per-frame self-attention over P video tokens + 1 audio token."""
    if v.frames != a.frames:
        raise DimensionError(f"spatial_fusion: {v.frames} video frames vs {a.frames} audio frames")
    if v.channels != a.channels:
        raise DimensionError(f"spatial_fusion: channel mismatch {v.channels} vs {a.channels}")
    t, pdim, c = v.tokens.shape
    seq = concat([v.tokens, reshape(a.tokens, (t, 1, c))], axis=1)  # (T, P+1, C)
    fused = p.ln_sf(add(seq, multi_head_attention(seq, seq, p.sf, p.n_heads)))
    v_out = narrow(fused, 1, 0, pdim)
    a_out = reshape(narrow(fused, 1, pdim, 1), (t, c))
    return VideoFeatures(v_out, v.grid), AudioFeatures(a_out)


def temporal_av(v: VideoFeatures, a: AudioFeatures, p: DavtBlockParams) -> VideoFeatures:
    """Per spatial position, video queries attend over the T audio frames."""
    if v.frames != a.frames or v.channels != a.channels:
        raise DimensionError(f"temporal_av: video {v.tokens.shape} vs audio {a.tokens.shape}")
    t, pdim, c = v.tokens.shape
    q = transpose(v.tokens, (1, 0, 2))                              # (P, T, C)
    kv = expand(reshape(a.tokens, (1, t, c)), 0, pdim)              # (P, T, C)
    out = multi_head_attention(q, kv, p.tav, p.n_heads)
    out = transpose(out, (1, 0, 2))                                 # (T, P, C)
    return VideoFeatures(p.ln_tav(add(v.tokens, out)), v.grid)


def temporal_va(v: VideoFeatures, a: AudioFeatures, p: DavtBlockParams) -> tuple[VideoFeatures, AudioFeatures]:
    """Audio queries attend over spatially mean-pooled video frames.

    The updated audio is broadcast over spatial positions as the video-shaped
    output so it can be element-wise added to the audio-to-video path.
    """
    if v.frames != a.frames or v.channels != a.channels:
        raise DimensionError(f"temporal_va: video {v.tokens.shape} vs audio {a.tokens.shape}")
    t, pdim, c = v.tokens.shape
    pooled = mean_pool(v.tokens, axis=1)                            # (T, C)
    out = multi_head_attention(a.tokens, pooled, p.tva, p.n_heads)
    a_out = p.ln_tva(add(a.tokens, out))
    v_out = expand(reshape(a_out, (t, 1, c)), 1, pdim)
    return VideoFeatures(v_out, v.grid), AudioFeatures(a_out)


def davt_block(v: VideoFeatures, a: AudioFeatures, p: DavtBlockParams,
               use_temporal_av: bool = True, use_temporal_va: bool = True
               ) -> tuple[VideoFeatures, AudioFeatures]:
    v_tilde, a_tilde = spatial_fusion(v, a, p)
    v_hat = temporal_av(v_tilde, a_tilde, p) if use_temporal_av else v_tilde
    if use_temporal_va:
        v_check, a_check = temporal_va(v_tilde, a_tilde, p)
        merged = add(v_hat.tokens, v_check.tokens)
    else:
        a_check = a_tilde
        merged = v_hat.tokens
    v_out = VideoFeatures(p.ln_merge(merged), v.grid)
    return v_out, a_check


class DavtEncoder:
    def __init__(self, channels: int, blocks: int, n_heads: int, max_frames: int,
                 rng: np.random.Generator, dtype=np.float32,
                 use_temporal_av: bool = True, use_temporal_va: bool = True):
        if blocks < 1:
            raise ConfigError(f"encoder needs at least one block, got {blocks}")
        self.blocks = [DavtBlockParams(channels, n_heads, rng, dtype) for _ in range(blocks)]
        self.pos = Tensor((0.02 * rng.standard_normal((max_frames, channels))).astype(dtype),
                          requires_grad=True)
        self.use_temporal_av = use_temporal_av
        self.use_temporal_va = use_temporal_va

    def __call__(self, v: VideoFeatures, a: AudioFeatures) -> tuple[list[VideoFeatures], AudioFeatures]:
        t, pdim, c = v.tokens.shape
        if t > self.pos.shape[0]:
            raise ConfigError(f"{t} frames exceeds position table length {self.pos.shape[0]}")
        pos = narrow(self.pos, 0, 0, t)                             # (T, C)
        v = VideoFeatures(add(v.tokens, expand(reshape(pos, (t, 1, c)), 1, pdim)), v.grid)
        a = AudioFeatures(add(a.tokens, pos))
        outputs: list[VideoFeatures] = []
        for block in self.blocks:
            v, a = davt_block(v, a, block, self.use_temporal_av, self.use_temporal_va)
            outputs.append(v)
        return outputs, a

    def named_params(self, prefix: str = "encoder"):
        yield f"{prefix}.pos", self.pos
        for i, block in enumerate(self.blocks):
            yield from block.named_params(f"{prefix}.block{i}")
