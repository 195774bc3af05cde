"""Attention-cost model: joint spatio-temporal attention vs the decoupled
factorization, in score-matrix entries and in measured transient bytes.

Counting convention: one "score entry" is one pre-softmax attention logit
per head-independent position, i.e. the (queries x keys) matrix size of
one attention application, summed over independent applications but not
over heads (heads multiply the byte figure, not the entry count).

  joint      : all T*(P+1) tokens attend to each other -> (T*(P+1))^2
  decoupled  : per-frame spatial fusion  T*(P+1)^2
               per-position temporal A-V P*T^2
               pooled temporal V-A       T^2

The factorization changes the function being computed; outputs only agree
with the joint form in the degenerate T=1 case, so only costs (never
equivalence) are compared here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ResourceError(RuntimeError):
    """Configuration too large to measure safely."""


@dataclass
class AttnCostReport:
    frames: int
    grid_h: int
    grid_w: int
    joint_entries: int
    spatial_entries: int
    tav_entries: int
    tva_entries: int
    paper_literal_entries: int  # (P + T)^2 reading of the merged dimension

    @property
    def decoupled_entries(self) -> int:
        return self.spatial_entries + self.tav_entries + self.tva_entries

    @property
    def ratio(self) -> float:
        return self.joint_entries / self.decoupled_entries


def analytic_costs(frames: int, grid_h: int, grid_w: int) -> AttnCostReport:
    if frames < 1 or grid_h < 1 or grid_w < 1:
        raise ValueError("analytic_costs: dimensions must be positive")
    p = grid_h * grid_w
    return AttnCostReport(
        frames=frames, grid_h=grid_h, grid_w=grid_w,
        joint_entries=(frames * (p + 1)) ** 2,
        spatial_entries=frames * (p + 1) ** 2,
        tav_entries=p * frames ** 2,
        tva_entries=frames ** 2,
        paper_literal_entries=(p + frames) ** 2,
    )


def enumerate_costs(frames: int, grid_h: int, grid_w: int) -> dict[str, int]:
    """Literal token-pair enumeration; slow but definitionally correct.

    Tokens are (frame, slot) with slot in [0, P] (slot P is the audio token).
    """
    p = grid_h * grid_w
    tokens = [(t, s) for t in range(frames) for s in range(p + 1)]

    joint = 0
    for _q in tokens:
        for _k in tokens:
            joint += 1

    spatial = 0
    for t in range(frames):
        frame_tokens = [s for s in range(p + 1)]
        for _q in frame_tokens:
            for _k in frame_tokens:
                spatial += 1

    tav = 0
    for _pos in range(p):
        for _qt in range(frames):
            for _kt in range(frames):
                tav += 1

    tva = 0
    for _qt in range(frames):
        for _kt in range(frames):
            tva += 1

    return {"joint": joint, "spatial": spatial, "tav": tav, "tva": tva,
            "decoupled": spatial + tav + tva}


class ScoreMeter:
    """Tracks live bytes of attention score/probability buffers."""

    def __init__(self):
        self.live = 0
        self.peak = 0
        self.per_stage: dict[str, int] = {}

    def alloc(self, stage: str, nbytes: int):
        self.live += nbytes
        self.peak = max(self.peak, self.live)
        self.per_stage[stage] = self.per_stage.get(stage, 0) + nbytes

    def free(self, nbytes: int):
        self.live -= nbytes


def _attention_stage(meter: ScoreMeter, stage: str, q: np.ndarray, k: np.ndarray,
                     v: np.ndarray, n_heads: int) -> np.ndarray:
    """Multi-head attention with instrumented score-buffer accounting.

    q: (..., S_q, C); k, v: (..., S_kv, C)."""
    *lead, sq, c = q.shape
    skv = k.shape[-2]
    d = c // n_heads

    def heads(x, s):
        return np.moveaxis(x.reshape(*lead, s, n_heads, d), -2, -3)

    qh, kh, vh = heads(q, sq), heads(k, skv), heads(v, skv)
    scores = (qh @ np.swapaxes(kh, -1, -2)) / math.sqrt(d)
    meter.alloc(stage, scores.nbytes)
    scores -= scores.max(axis=-1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=-1, keepdims=True)  # softmax in place: probs reuse the buffer
    out = scores @ vh
    meter.free(scores.nbytes)
    return np.moveaxis(out, -3, -2).reshape(*lead, sq, c)


_BYTE_LIMIT = 2 << 30


def measure_peak(variant: str, frames: int, grid_h: int, grid_w: int, channels: int = 32,
                 n_heads: int = 4, dtype=np.float64, seed: int = 0) -> dict:
    """Run one forward pass of the given attention variant and return the peak
    live score-buffer bytes (plus per-stage totals)."""
    p = grid_h * grid_w
    if variant not in ("joint", "decoupled"):
        raise ValueError(f"measure_peak: unknown variant {variant!r}")
    itemsize = np.dtype(dtype).itemsize
    projected = ((frames * (p + 1)) ** 2 if variant == "joint"
                 else frames * (p + 1) ** 2) * n_heads * itemsize
    if projected > _BYTE_LIMIT:
        raise ResourceError(f"{variant} variant would allocate {projected} bytes of scores "
                            f"(limit {_BYTE_LIMIT}); reduce T/h/w")

    rng = np.random.default_rng(seed)
    meter = ScoreMeter()
    video = rng.standard_normal((frames, p, channels)).astype(dtype)
    audio = rng.standard_normal((frames, channels)).astype(dtype)

    if variant == "joint":
        tokens = np.concatenate([video, audio[:, None, :]], axis=1).reshape(frames * (p + 1), channels)
        _attention_stage(meter, "joint", tokens, tokens, tokens, n_heads)
    else:
        seq = np.concatenate([video, audio[:, None, :]], axis=1)      # (T, P+1, C)
        fused = _attention_stage(meter, "spatial", seq, seq, seq, n_heads)
        v_t, a_t = fused[:, :p, :], fused[:, p, :]
        q_av = np.swapaxes(v_t, 0, 1)                                  # (P, T, C)
        kv_av = np.broadcast_to(a_t, (p, frames, channels)).copy()
        _attention_stage(meter, "tav", q_av, kv_av, kv_av, n_heads)
        pooled = v_t.mean(axis=1)                                      # (T, C)
        _attention_stage(meter, "tva", a_t, pooled, pooled, n_heads)

    return {"variant": variant, "peak_bytes": meter.peak, "per_stage": meter.per_stage,
            "itemsize": itemsize, "n_heads": n_heads}
