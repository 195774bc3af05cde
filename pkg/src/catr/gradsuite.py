"""Gradient-check registry: every differentiable operation and composite,
each verified against central finite differences at float64, tiny shapes."""

from __future__ import annotations

import numpy as np

import catr.tensor as T

from .backbone import AudioEmbed, VisualStub
from .config import LossConfig
from .decoder import (KernelHeadParams, QueryDecoder, RefHeadParams, SegFeatureParams,
                      build_seg_features, dynamic_masks, reference_head)
from .encoder import DavtBlockParams, DavtEncoder, davt_block, spatial_fusion, temporal_av, temporal_va
from .features import AudioFeatures, VideoFeatures, VisualPyramid
from .gate import BlockGate
from .losses import focal_loss, reference_ce, soft_dice_loss, total_loss
from .tensor import Tensor, gradcheck, tensor, tsum

EPS = 1e-5


def _rt(rng, *shape):
    return tensor(rng.standard_normal(shape), requires_grad=True)


def _mix(rng, *shape):
    return tensor(rng.standard_normal(shape))


def _check_matmul(rng):
    a, b = _rt(rng, 3, 4), _rt(rng, 4, 2)
    return gradcheck(lambda x, y: tsum(T.matmul(x, y)), a, b, eps=EPS)


def _check_add_trailing(rng):
    a, b = _rt(rng, 2, 3, 4), _rt(rng, 4)
    m = _mix(rng, 2, 3, 4)
    return gradcheck(lambda x, y: tsum(T.mul(T.add(x, y), m)), a, b, eps=EPS)


def _check_mul(rng):
    a, b = _rt(rng, 3, 4), _rt(rng, 3, 4)
    return gradcheck(lambda x, y: tsum(T.mul(x, y)), a, b, eps=EPS)


def _check_softmax(rng):
    x = _rt(rng, 3, 5)
    m = _mix(rng, 3, 5)
    return gradcheck(lambda t: tsum(T.mul(T.softmax(t, -1), m)), x, eps=EPS)


def _check_sigmoid(rng):
    x = _rt(rng, 6)
    m = _mix(rng, 6)
    return gradcheck(lambda t: tsum(T.mul(T.sigmoid(t), m)), x, eps=EPS)


def _check_relu(rng):
    x = tensor(rng.standard_normal(8) + np.sign(rng.standard_normal(8)) * 0.1, requires_grad=True)
    m = _mix(rng, 8)
    return gradcheck(lambda t: tsum(T.mul(T.relu(t), m)), x, eps=EPS)


def _check_log(rng):
    x = tensor(rng.uniform(0.5, 2.0, 6), requires_grad=True)
    return gradcheck(lambda t: tsum(T.log(t)), x, eps=EPS)


def _check_power(rng):
    x = tensor(rng.uniform(0.5, 2.0, 6), requires_grad=True)
    return gradcheck(lambda t: tsum(T.power(t, 2.0)), x, eps=EPS)


def _check_clip(rng):
    x = tensor(rng.uniform(-2, 2, 8), requires_grad=True)
    m = _mix(rng, 8)
    return gradcheck(lambda t: tsum(T.mul(T.clip(t, -3.0, 3.0), m)), x, eps=EPS)


def _check_layer_norm(rng):
    x = _rt(rng, 3, 6)
    m = _mix(rng, 3, 6)
    return gradcheck(lambda t: tsum(T.mul(T.layer_norm(t, -1), m)), x, eps=EPS)


def _check_mean_pool(rng):
    x = _rt(rng, 4, 5)
    m = _mix(rng, 5)
    return gradcheck(lambda t: tsum(T.mul(T.mean_pool(t, 0), m)), x, eps=EPS)


def _check_concat_narrow(rng):
    a, b = _rt(rng, 2, 3), _rt(rng, 2, 2)
    m = _mix(rng, 2, 4)
    return gradcheck(lambda x, y: tsum(T.mul(T.narrow(T.concat([x, y], 1), 1, 1, 4), m)),
                     a, b, eps=EPS)


def _check_expand_transpose(rng):
    x = _rt(rng, 3, 1, 2)
    m = _mix(rng, 4, 3, 2)
    return gradcheck(lambda t: tsum(T.mul(T.transpose(T.expand(t, 1, 4), (1, 0, 2)), m)), x, eps=EPS)


def _check_linear(rng):
    x, w, b = _rt(rng, 2, 3, 4), _rt(rng, 4, 5), _rt(rng, 5)
    m = _mix(rng, 2, 3, 5)
    return gradcheck(lambda a, c, d: tsum(T.mul(T.linear(a, c, d), m)), x, w, b, eps=EPS)


def _check_conv_s1(rng):
    x, w, b = _rt(rng, 1, 4, 4, 2), _rt(rng, 3, 3, 2, 2), _rt(rng, 2)
    m = _mix(rng, 1, 4, 4, 2)
    return gradcheck(lambda a, c, d: tsum(T.mul(T.conv2d(a, c, d, stride=1), m)), x, w, b, eps=EPS)


def _check_conv_s2(rng):
    x, w = _rt(rng, 1, 4, 4, 2), _rt(rng, 3, 3, 2, 3)
    m = _mix(rng, 1, 2, 2, 3)
    return gradcheck(lambda a, c: tsum(T.mul(T.conv2d(a, c, stride=2), m)), x, w, eps=EPS)


def _check_avg_pool(rng):
    x = _rt(rng, 1, 4, 4, 2)
    m = _mix(rng, 1, 2, 2, 2)
    return gradcheck(lambda t: tsum(T.mul(T.avg_pool2d(t, 2), m)), x, eps=EPS)


def _check_upsample(rng):
    x = _rt(rng, 1, 2, 2, 2)
    m = _mix(rng, 1, 4, 4, 2)
    return gradcheck(lambda t: tsum(T.mul(T.upsample_nearest2(t), m)), x, eps=EPS)


def _check_visual_stub(rng):
    stub = VisualStub(8, np.random.default_rng(11), dtype=np.float64)
    x = _rt(rng, 1, 8, 8, 3)
    return gradcheck(lambda v: tsum(stub(v).level(8)), x, eps=EPS)


def _check_audio_embed(rng):
    emb = AudioEmbed(6, np.random.default_rng(12), dtype=np.float64)
    x = _rt(rng, 2, 128)
    return gradcheck(lambda r: tsum(emb(r).tokens), x, eps=EPS)


def _block_params(seed, c=6, heads=2):
    return DavtBlockParams(c, heads, np.random.default_rng(seed), dtype=np.float64)


def _check_spatial_fusion(rng):
    p = _block_params(13)
    v, a = _rt(rng, 2, 4, 6), _rt(rng, 2, 6)

    def f(vt, at):
        vo, ao = spatial_fusion(VideoFeatures(vt, (2, 2)), AudioFeatures(at), p)
        return tsum(vo.tokens) + tsum(ao.tokens)

    return gradcheck(f, v, a, eps=EPS)


def _check_temporal_av(rng):
    p = _block_params(14)
    v, a = _rt(rng, 2, 4, 6), _rt(rng, 2, 6)

    def f(vt, at):
        return tsum(temporal_av(VideoFeatures(vt, (2, 2)), AudioFeatures(at), p).tokens)

    return gradcheck(f, v, a, eps=EPS)


def _check_temporal_va(rng):
    p = _block_params(15)
    v, a = _rt(rng, 2, 4, 6), _rt(rng, 2, 6)

    def f(vt, at):
        vo, ao = temporal_va(VideoFeatures(vt, (2, 2)), AudioFeatures(at), p)
        return tsum(vo.tokens) + tsum(ao.tokens)

    return gradcheck(f, v, a, eps=EPS)


def _check_davt_block(rng):
    p = _block_params(16)
    v, a = _rt(rng, 2, 4, 6), _rt(rng, 2, 6)

    def f(vt, at):
        vo, ao = davt_block(VideoFeatures(vt, (2, 2)), AudioFeatures(at), p)
        return tsum(vo.tokens) + tsum(ao.tokens)

    return gradcheck(f, v, a, eps=EPS)


def _check_encode_l2(rng):
    encdr = DavtEncoder(4, 2, 2, 4, np.random.default_rng(17), dtype=np.float64)
    v, a = _rt(rng, 2, 4, 4), _rt(rng, 2, 4)

    def f(vt, at):
        outs, ao = encdr(VideoFeatures(vt, (2, 2)), AudioFeatures(at))
        return tsum(outs[-1].tokens) + tsum(ao.tokens)

    return gradcheck(f, v, a, eps=EPS)


def _check_gate_fold_l2(rng):
    gate = BlockGate(6, 6, 2, np.random.default_rng(18), dtype=np.float64)
    a, b = _rt(rng, 2, 4, 6), _rt(rng, 2, 4, 6)

    def f(x, y):
        return tsum(gate([VideoFeatures(x, (2, 2)), VideoFeatures(y, (2, 2))]).tokens)

    return gradcheck(f, a, b, eps=EPS)


def _check_seg_features(rng):
    c = 4
    ch = {2: 1, 4: 2, 8: c}
    pyr = VisualPyramid(levels={s: _mix(rng, 1, 16 // s, 16 // s, ch[s]) for s in (2, 4, 8)},
                        input_hw=(16, 16))
    params = SegFeatureParams(c, [4, 2], ch, np.random.default_rng(19), dtype=np.float64)
    x = _rt(rng, 1, 4, c)
    return gradcheck(lambda t: tsum(build_seg_features(VideoFeatures(t, (2, 2)), pyr, params)),
                     x, eps=EPS)


def _check_decoder_stack(rng):
    c = 4
    dec = QueryDecoder(c, 2, 2, c, 2, np.random.default_rng(20), dtype=np.float64)
    kern = KernelHeadParams(c, c, np.random.default_rng(21), dtype=np.float64)
    ref = RefHeadParams(c, np.random.default_rng(22), dtype=np.float64)
    seg, audio = _rt(rng, 1, 2, 2, c), _rt(rng, 1, c)

    def f(s, a):
        decoded = dec(AudioFeatures(a), s)
        return (tsum(dynamic_masks(decoded, AudioFeatures(a), s, kern))
                + tsum(reference_head(decoded, AudioFeatures(a), ref)))

    return gradcheck(f, seg, audio, eps=EPS)


def _check_dice_loss(rng):
    gt = (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float)
    x = _rt(rng, 2, 3, 3)
    return gradcheck(lambda t: soft_dice_loss(T.sigmoid(t), gt), x, eps=EPS)


def _check_focal_loss(rng):
    gt = (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float)
    x = _rt(rng, 2, 3, 3)
    return gradcheck(lambda t: focal_loss(T.sigmoid(t), gt, 2.0, 0.25), x, eps=EPS)


def _check_reference_ce(rng):
    targets = (rng.uniform(0, 1, (2, 3)) > 0.5).astype(float)
    x = _rt(rng, 2, 3, 2)
    return gradcheck(lambda t: reference_ce(T.softmax(t, -1), targets), x, eps=EPS)


def _check_total_loss(rng):
    gt = (rng.uniform(0, 1, (2, 3, 3)) > 0.5).astype(float)
    vis = np.ones(2)
    cfg = LossConfig()
    ml = _rt(rng, 2, 2, 3, 3)
    rl = _rt(rng, 2, 2, 2)

    def f(m, r):
        return total_loss(T.sigmoid(m), T.softmax(r, -1), gt, vis, cfg).total

    return gradcheck(f, ml, rl, eps=EPS)


CHECKS = {
    "matmul": _check_matmul,
    "add_trailing_broadcast": _check_add_trailing,
    "mul": _check_mul,
    "softmax": _check_softmax,
    "sigmoid": _check_sigmoid,
    "relu": _check_relu,
    "log": _check_log,
    "power": _check_power,
    "clip": _check_clip,
    "layer_norm": _check_layer_norm,
    "mean_pool": _check_mean_pool,
    "concat_narrow": _check_concat_narrow,
    "expand_transpose": _check_expand_transpose,
    "linear": _check_linear,
    "conv2d_stride1": _check_conv_s1,
    "conv2d_stride2": _check_conv_s2,
    "avg_pool2d": _check_avg_pool,
    "upsample_nearest2": _check_upsample,
    "visual_stub": _check_visual_stub,
    "audio_embed": _check_audio_embed,
    "spatial_fusion": _check_spatial_fusion,
    "temporal_av": _check_temporal_av,
    "temporal_va": _check_temporal_va,
    "davt_block": _check_davt_block,
    "encode_l2": _check_encode_l2,
    "gate_fold_l2": _check_gate_fold_l2,
    "build_seg_features": _check_seg_features,
    "decoder_stack": _check_decoder_stack,
    "dice_loss": _check_dice_loss,
    "focal_loss": _check_focal_loss,
    "reference_ce": _check_reference_ce,
    "total_loss": _check_total_loss,
}

THRESHOLD = 1e-4


def run_all(seed: int = 0) -> dict[str, float]:
    """Worst relative error per registered check."""
    results = {}
    for name, fn in CHECKS.items():
        rng = np.random.default_rng(seed + hash(name) % 10_000)
        results[name] = float(fn(rng))
    return results
