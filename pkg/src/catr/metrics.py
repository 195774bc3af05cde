"""Region Jaccard and boundary F-score over mask sequences.

Boundary pixels are mask pixels with a 4-neighbor outside the mask (the
canvas border counts as outside). Precision/recall match boundary pixels
within a Chebyshev tolerance of max(1, round(0.8% of the image diagonal)).
Empty-vs-empty scores 1.0 so correctly-silent frames count as perfect;
empty-vs-nonempty scores 0.0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


def jaccard(pred: np.ndarray, gt: np.ndarray) -> float:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"jaccard: shapes {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def mask_boundary(mask: np.ndarray) -> np.ndarray:
    """4-connected boundary: mask pixels with some 4-neighbor outside."""
    m = np.asarray(mask).astype(bool)
    if not m.any():
        return np.zeros_like(m)
    pad = np.pad(m, 1, constant_values=False)
    interior = (pad[1:-1, 1:-1] & pad[:-2, 1:-1] & pad[2:, 1:-1]
                & pad[1:-1, :-2] & pad[1:-1, 2:])
    return m & ~interior


def _chebyshev_dilate(mask: np.ndarray, tol: int) -> np.ndarray:
    out = np.zeros_like(mask)
    h, w = mask.shape
    for dy in range(-tol, tol + 1):
        ys0, ys1 = max(0, dy), min(h, h + dy)
        for dx in range(-tol, tol + 1):
            xs0, xs1 = max(0, dx), min(w, w + dx)
            out[ys0:ys1, xs0:xs1] |= mask[ys0 - dy:ys1 - dy, xs0 - dx:xs1 - dx]
    return out


def default_boundary_tol(height: int, width: int) -> int:
    return max(1, round(0.008 * float(np.hypot(height, width))))


def boundary_f(pred: np.ndarray, gt: np.ndarray, tol: int | None = None) -> float:
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ValueError(f"boundary_f: shapes {pred.shape} vs {gt.shape}")
    if tol is None:
        tol = default_boundary_tol(*pred.shape)
    bp, bg = mask_boundary(pred), mask_boundary(gt)
    np_, ng = bp.sum(), bg.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    precision = float((bp & _chebyshev_dilate(bg, tol)).sum() / np_)
    recall = float((bg & _chebyshev_dilate(bp, tol)).sum() / ng)
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass
class VideoEval:
    jaccard: float
    boundary: float
    per_frame_j: list[float] = field(default_factory=list)
    per_frame_f: list[float] = field(default_factory=list)


@dataclass
class EvalReport:
    videos: list[VideoEval]
    m_j: float
    m_f: float

    def to_dict(self) -> dict:
        return {
            "m_j": self.m_j,
            "m_f": self.m_f,
            "videos": [{"jaccard": v.jaccard, "boundary": v.boundary,
                        "per_frame_j": v.per_frame_j, "per_frame_f": v.per_frame_f}
                       for v in self.videos],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def evaluate(pred_masks: list[np.ndarray], gt_masks: list[np.ndarray],
             tol: int | None = None) -> EvalReport:
    """Per-frame metrics, averaged per video, then over videos."""
    if len(pred_masks) != len(gt_masks):
        raise ValueError(f"evaluate: {len(pred_masks)} predictions vs {len(gt_masks)} ground truths")
    videos = []
    for pred, gt in zip(pred_masks, gt_masks):
        if pred.shape != gt.shape:
            raise ValueError(f"evaluate: prediction {pred.shape} vs ground truth {gt.shape}")
        js = [jaccard(pred[t], gt[t]) for t in range(pred.shape[0])]
        fs = [boundary_f(pred[t], gt[t], tol) for t in range(pred.shape[0])]
        videos.append(VideoEval(jaccard=float(np.mean(js)), boundary=float(np.mean(fs)),
                                per_frame_j=js, per_frame_f=fs))
    m_j = float(np.mean([v.jaccard for v in videos])) if videos else 0.0
    m_f = float(np.mean([v.boundary for v in videos])) if videos else 0.0
    return EvalReport(videos=videos, m_j=m_j, m_f=m_f)
