"""Sequence matching, training loss, and inference-time selection.

The N query proposals compete for the single ground-truth sequence: the
matching cost is (1 - dice) plus mean per-frame cross-entropy on the
reference probabilities, minimized exhaustively (ties -> lowest index).
The training loss supervises the matched query's masks with weighted dice
+ focal terms, and the reference probabilities of ALL queries (non-matched
queries toward "not referred").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import LossConfig
from .imageops import bilinear_upsample
from .tensor import Tensor, add, clip, log, mul, narrow, power, reshape, tsum

PROB_EPS = 1e-7


# -- plain-number forms (matching, evaluation, oracles) ----------------------------

def dice_coeff(pred: np.ndarray, gt: np.ndarray, eps: float = 1.0) -> float:
    """Soft dice over a whole sequence: (2 sum(p*g) + eps) / (sum p + sum g + eps)."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"dice_coeff: shapes {pred.shape} vs {gt.shape}")
    inter = float((pred * gt).sum())
    return (2.0 * inter + eps) / (float(pred.sum()) + float(gt.sum()) + eps)


def _ref_ce_rows(ref_probs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Mean per-frame cross-entropy for each query; ref_probs (N, T, 2), targets (T,)."""
    p = np.clip(ref_probs, PROB_EPS, 1.0)
    t = targets.astype(np.float64)
    ce = -(t * np.log(p[..., 1]) + (1.0 - t) * np.log(p[..., 0]))
    return ce.mean(axis=-1)


@dataclass
class MatchResult:
    pos_index: int
    costs: np.ndarray  # (N,)


def match(mask_probs: np.ndarray, ref_probs: np.ndarray,
          gt_masks: np.ndarray, gt_vis: np.ndarray, eps: float = 1.0) -> MatchResult:
    """Exhaustive argmin of (1 - dice) + reference CE over the N proposals."""
    n = mask_probs.shape[0]
    if n < 1:
        raise ValueError("match: need at least one proposal")
    costs = np.empty(n, dtype=np.float64)
    ce = _ref_ce_rows(ref_probs, gt_vis)
    for i in range(n):
        costs[i] = (1.0 - dice_coeff(mask_probs[i], gt_masks, eps)) + ce[i]
    return MatchResult(pos_index=int(np.argmin(costs)), costs=costs)


def select_inference(ref_probs: np.ndarray, mask_probs: np.ndarray,
                     out_hw: tuple[int, int]) -> tuple[int, np.ndarray]:
    """Pick the proposal with the highest mean per-frame reference score,
    upsample its probabilities to (H, W) bilinearly and threshold at 0.5."""
    scores = ref_probs[:, :, 1].mean(axis=1)
    idx = int(np.argmax(scores))
    t, h, w = mask_probs[idx].shape
    hout, wout = out_hw
    if hout % h or wout % w or hout // h != wout // w:
        raise ValueError(f"select_inference: cannot upsample {h}x{w} to {hout}x{wout}")
    probs = bilinear_upsample(mask_probs[idx], hout // h)
    return idx, probs >= 0.5


# -- differentiable forms (training) -------------------------------------------------

def soft_dice_loss(pred: Tensor, gt: np.ndarray, eps: float = 1.0) -> Tensor:
    """1 - dice between predicted probabilities and (possibly soft) targets."""
    g = Tensor(np.asarray(gt, dtype=pred.data.dtype))
    inter = tsum(mul(pred, g))
    denom = add(add(tsum(pred), tsum(g)), float(eps))
    dice = mul(add(mul(inter, 2.0), float(eps)), power(denom, -1.0))
    return add(mul(dice, -1.0), 1.0)


def focal_loss(pred: Tensor, gt: np.ndarray, gamma: float, alpha: float) -> Tensor:
    """Per-pixel focal term averaged over all pixels and frames.

    Soft targets weight the positive/negative branches by the coverage
    fraction: -[g*a*(1-p)^y*log(p) + (1-g)*(1-a)*p^y*log(1-p)].
    """
    g = np.asarray(gt, dtype=pred.data.dtype)
    p = clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    one_minus = add(mul(p, -1.0), 1.0)
    pos = mul(mul(power(one_minus, gamma), log(p)), Tensor(g * -alpha))
    neg = mul(mul(power(p, gamma), log(one_minus)), Tensor((1.0 - g) * -(1.0 - alpha)))
    total = add(tsum(pos), tsum(neg))
    return mul(total, 1.0 / pred.size)


def reference_ce(ref_probs: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross-entropy over queries and frames; targets (N, T) in [0, 1]."""
    t = np.asarray(targets, dtype=ref_probs.data.dtype)
    p = clip(ref_probs, PROB_EPS, 1.0)
    n, tt, _ = ref_probs.shape
    p1 = reshape(narrow(p, 2, 1, 1), (n, tt))
    p0 = reshape(narrow(p, 2, 0, 1), (n, tt))
    ce = add(mul(log(p1), Tensor(-t)), mul(log(p0), Tensor(-(1.0 - t))))
    return mul(tsum(ce), 1.0 / (n * tt))


@dataclass
class LossBreakdown:
    total: Tensor
    dice: float
    focal: float
    ref: float
    pos_index: int


def total_loss(mask_probs: Tensor, ref_probs: Tensor, gt_masks: np.ndarray,
               gt_vis: np.ndarray, cfg: LossConfig, eps: float = 1.0) -> LossBreakdown:
    """Match, then weighted dice + focal on the matched query and reference CE
    on all queries (matched toward per-frame visibility, others toward 0)."""
    n = mask_probs.shape[0]
    result = match(mask_probs.data, ref_probs.data, gt_masks, gt_vis, eps)
    i = result.pos_index

    matched = reshape(narrow(mask_probs, 0, i, 1), mask_probs.shape[1:])
    dice_term = soft_dice_loss(matched, gt_masks, eps)
    focal_term = focal_loss(matched, gt_masks, cfg.focal_gamma, cfg.focal_alpha)

    targets = np.zeros((n, len(gt_vis)), dtype=np.float64)
    targets[i] = gt_vis
    ref_term = reference_ce(ref_probs, targets)

    total = add(add(mul(dice_term, cfg.lambda_dice), mul(focal_term, cfg.lambda_focal)),
                mul(ref_term, cfg.lambda_ref))
    return LossBreakdown(total=total, dice=dice_term.item(), focal=focal_term.item(),
                         ref=ref_term.item(), pos_index=i)
