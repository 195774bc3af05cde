"""Matching, loss terms, and inference selection against closed-form and
brute-force oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catr.config import LossConfig
from catr.losses import (MatchResult, dice_coeff, focal_loss, match, reference_ce,
                         select_inference, soft_dice_loss, total_loss)
from catr.tensor import Tensor, gradcheck, sigmoid, tensor, tsum


class TestDice:
    def test_perfect_overlap(self):
        m = np.ones((2, 3, 3))
        assert dice_coeff(m, m) == pytest.approx(1.0)

    def test_both_empty(self):
        z = np.zeros((2, 3, 3))
        assert dice_coeff(z, z) == pytest.approx(1.0)

    def test_pixel_count_oracle_eps0(self):
        pred = np.array([[1.0, 0.0], [0.0, 0.0]])
        gt = np.array([[1.0, 1.0], [0.0, 0.0]])
        assert dice_coeff(pred, gt, eps=0.0) == pytest.approx(2.0 / 3.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            dice_coeff(np.zeros((2, 2)), np.zeros((3, 2)))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        pred = rng.uniform(0, 1, (2, 4, 4))
        gt = (rng.uniform(0, 1, (2, 4, 4)) > 0.5).astype(float)
        inter = sum(pred[t, y, x] * gt[t, y, x]
                    for t in range(2) for y in range(4) for x in range(4))
        want = (2 * inter + 1) / (pred.sum() + gt.sum() + 1)
        assert dice_coeff(pred, gt) == pytest.approx(want, rel=1e-12)


class TestMatch:
    def test_singleton(self):
        res = match(np.full((1, 1, 2, 2), 0.3), np.full((1, 1, 2), 0.5),
                    np.ones((1, 2, 2)), np.ones(1))
        assert res.pos_index == 0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(1)
        n, t = 5, 3
        preds = rng.uniform(0, 1, (n, t, 4, 4))
        refs = rng.dirichlet([1, 1], size=(n, t))
        gt = (rng.uniform(0, 1, (t, 4, 4)) > 0.6).astype(float)
        vis = (gt.reshape(t, -1).sum(1) > 0).astype(float)
        res = match(preds, refs, gt, vis)
        costs = []
        for i in range(n):
            ce = np.mean([-math.log(max(refs[i, f, 1], 1e-7)) if vis[f]
                          else -math.log(max(refs[i, f, 0], 1e-7)) for f in range(t)])
            costs.append((1 - dice_coeff(preds[i], gt)) + ce)
        assert res.pos_index == int(np.argmin(costs))
        np.testing.assert_allclose(res.costs, costs, rtol=1e-9)

    def test_tie_breaks_to_lowest_index(self):
        rng = np.random.default_rng(2)
        pred = rng.uniform(0, 1, (1, 2, 3, 3))
        gt = (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float)
        vis = np.ones(2)
        ref = np.full((1, 2, 2), 0.5)
        preds = np.concatenate([pred, rng.uniform(0, 1, (1, 2, 3, 3)), pred])
        refs = np.concatenate([ref, ref, ref])
        res = match(preds, refs, gt, vis)
        base = match(pred, ref, gt, vis)
        if base.costs[0] <= res.costs[1]:
            assert res.pos_index == 0  # duplicate at index 2 never wins the tie

    def test_argmin_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(3)
        res = match(rng.uniform(0, 1, (4, 2, 3, 3)), rng.dirichlet([1, 1], (4, 2)),
                    (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float), np.ones(2))
        transformed = np.exp(2.0 * res.costs) + 5.0
        assert int(np.argmin(transformed)) == res.pos_index


class TestLossTerms:
    def test_perfect_prediction_loss_near_zero(self):
        gt = np.zeros((2, 4, 4))
        gt[0, 1:3, 1:3] = 1.0
        vis = np.array([1.0, 0.0])
        n = 3
        eps = 1e-6
        probs = np.clip(np.tile(gt, (n, 1, 1, 1)), eps, 1 - eps)
        refs = np.zeros((n, 2, 2)) + eps
        refs[:, :, 0] = 1 - eps
        refs[0, 0] = [eps, 1 - eps]   # matched query says "referred" on visible frame
        lb = total_loss(Tensor(probs), Tensor(refs), gt, vis, LossConfig())
        assert lb.total.item() < 0.01

    def test_dice_only_perfect(self):
        gt = np.zeros((1, 4, 4))
        gt[0, :2, :2] = 1.0
        probs = np.clip(gt[None], 1e-9, 1 - 1e-9)
        cfg = LossConfig(lambda_dice=1.0, lambda_focal=0.0, lambda_ref=0.0)
        refs = np.full((1, 1, 2), 0.5)
        lb = total_loss(Tensor(probs), Tensor(refs), gt, np.ones(1), cfg)
        assert lb.total.item() == pytest.approx(0.0, abs=0.05)  # eps=1 smoothing floor

    def test_focal_single_pixel_hand_value(self):
        pred = Tensor(np.array([[[0.6]]]))
        gt = np.array([[[1.0]]])
        val = focal_loss(pred, gt, gamma=2.0, alpha=0.25).item()
        want = -0.25 * (0.4 ** 2) * math.log(0.6)
        assert val == pytest.approx(want, rel=1e-9)
        assert val == pytest.approx(0.02043, abs=5e-6)

    def test_focal_negative_branch(self):
        pred = Tensor(np.array([[[0.3]]]))
        gt = np.array([[[0.0]]])
        want = -(1 - 0.25) * (0.3 ** 2) * math.log(0.7)
        assert focal_loss(pred, gt, 2.0, 0.25).item() == pytest.approx(want, rel=1e-9)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            probs = rng.uniform(0.01, 0.99, (2, 2, 3, 3))
            refs = rng.dirichlet([1, 1], (2, 2))
            gt = (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float)
            vis = (gt.reshape(2, -1).sum(1) > 0).astype(float)
            lb = total_loss(Tensor(probs), Tensor(refs), gt, vis, LossConfig())
            assert lb.total.item() >= 0.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        gt = (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float)
        vis = np.ones(2)
        cfg = LossConfig()
        logits = tensor(rng.standard_normal((1, 2, 3, 3)), requires_grad=True)
        ref_logits = tensor(rng.standard_normal((1, 2, 2)), requires_grad=True)

        def f(ml, rl):
            from catr.tensor import softmax
            probs = sigmoid(ml)
            refs = softmax(rl, axis=-1)
            return total_loss(probs, refs, gt, vis, cfg).total

        assert gradcheck(f, logits, ref_logits) < 1e-4

    def test_reference_ce_covers_all_queries(self):
        # non-matched queries supervised toward "not referred": raising their
        # referred-probability must raise the loss
        gt = np.zeros((1, 2, 2))
        gt[0, 0, 0] = 1.0
        vis = np.ones(1)
        masks = np.full((3, 1, 2, 2), 0.05)
        masks[0] = gt * 0.9 + 0.05                  # only query 0 fits the mask
        base_refs = np.full((3, 1, 2), 0.5)
        base_refs[0] = [0.1, 0.9]
        lb1 = total_loss(Tensor(masks), Tensor(base_refs), gt, vis, LossConfig())
        worse_refs = base_refs.copy()
        worse_refs[2] = [0.2, 0.8]                  # a non-matched query claims "referred"
        lb2 = total_loss(Tensor(masks), Tensor(worse_refs), gt, vis, LossConfig())
        assert lb2.pos_index == lb1.pos_index == 0
        assert lb2.ref > lb1.ref


class TestSelectInference:
    def test_argmax_example(self):
        refs = np.zeros((3, 2, 2))
        refs[:, :, 1] = np.array([[0.1, 0.1], [0.7, 0.7], [0.2, 0.2]])
        masks = np.random.default_rng(6).uniform(0, 1, (3, 2, 4, 4))
        idx, _ = select_inference(refs, masks, (8, 8))
        assert idx == 1

    def test_all_equal_tie_to_zero(self):
        refs = np.full((4, 2, 2), 0.5)
        masks = np.random.default_rng(7).uniform(0, 1, (4, 2, 4, 4))
        idx, _ = select_inference(refs, masks, (8, 8))
        assert idx == 0

    def test_brute_force_max_oracle(self):
        rng = np.random.default_rng(8)
        refs = rng.dirichlet([1, 1], (4, 3))
        masks = rng.uniform(0, 1, (4, 3, 2, 2))
        idx, binary = select_inference(refs, masks, (4, 4))
        scores = [refs[i, :, 1].mean() for i in range(4)]
        best = max(range(4), key=lambda i: (scores[i], -i))
        assert idx == best
        assert binary.shape == (3, 4, 4) and binary.dtype == bool

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(9)
        logits = rng.standard_normal((3, 4, 2))

        def soft(x):
            e = np.exp(x - x.max(-1, keepdims=True))
            return e / e.sum(-1, keepdims=True)

        s1 = soft(logits)[:, :, 1].mean(axis=1)
        s2 = soft(logits + 3.7)[:, :, 1].mean(axis=1)
        np.testing.assert_allclose(s1, s2, atol=1e-9)


def test_soft_dice_tensor_matches_plain():
    rng = np.random.default_rng(10)
    pred = rng.uniform(0, 1, (2, 4, 4))
    gt = (rng.uniform(0, 1, (2, 4, 4)) > 0.5).astype(float)
    loss = soft_dice_loss(Tensor(pred), gt)
    assert loss.item() == pytest.approx(1.0 - dice_coeff(pred, gt), rel=1e-9)


def test_reference_ce_hand_value():
    probs = np.array([[[0.2, 0.8], [0.9, 0.1]]])  # one query, two frames
    targets = np.array([[1.0, 0.0]])
    want = (-math.log(0.8) - math.log(0.9)) / 2
    assert reference_ce(Tensor(probs), targets).item() == pytest.approx(want, rel=1e-9)
