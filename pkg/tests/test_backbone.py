"""Feature stubs: pyramid shape contract, linearity, gradients."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catr.backbone import AudioEmbed, VisualStub
from catr.config import ConfigError
from catr.tensor import DimensionError, Tensor, gradcheck, tensor, tsum

F64 = np.float64


def make_stub(c=16, seed=0):
    return VisualStub(c, np.random.default_rng(seed), dtype=F64)


def test_pyramid_shapes_32():
    stub = make_stub(64, 1)
    pyr = stub(tensor(np.zeros((3, 32, 32, 3))))
    assert pyr.level(2).shape == (3, 16, 16, 16)
    assert pyr.level(4).shape == (3, 8, 8, 32)
    assert pyr.level(8).shape == (3, 4, 4, 64)
    tokens = stub.deepest_tokens(pyr)
    assert tokens.tokens.shape == (3, 16, 64) and tokens.grid == (4, 4)


def test_zero_video_zero_features():
    stub = make_stub()
    pyr = stub(tensor(np.zeros((2, 16, 16, 3))))
    for s in (2, 4, 8):
        np.testing.assert_array_equal(pyr.level(s).data, 0.0)


def test_indivisible_dims_rejected():
    stub = make_stub()
    with pytest.raises(ConfigError):
        stub(tensor(np.zeros((1, 20, 16, 3))))


def test_gradcheck_through_stub():
    stub = make_stub(8, 2)
    x = tensor(np.random.default_rng(3).standard_normal((1, 8, 8, 3)), requires_grad=True)

    def f(v):
        return tsum(stub(v).level(8))

    assert gradcheck(f, x) < 1e-4


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4).map(lambda k: 8 * k), st.integers(1, 4).map(lambda k: 8 * k))
def test_stride_contract_property(h, w):
    stub = make_stub(8, 4)
    pyr = stub(tensor(np.zeros((1, h, w, 3))))
    for s in (2, 4, 8):
        assert pyr.level(s).shape[1:3] == (h // s, w // s)


class TestAudioEmbed:
    def test_identity_init_returns_input(self):
        emb = AudioEmbed(128, np.random.default_rng(5), dtype=F64)
        emb.w.data = np.eye(128)
        emb.b.data[:] = 0.0
        raw = np.random.default_rng(6).standard_normal((4, 128))
        np.testing.assert_allclose(emb(tensor(raw)).tokens.data, raw, atol=1e-12)

    def test_output_shape(self):
        emb = AudioEmbed(64, np.random.default_rng(7), dtype=F64)
        assert emb(tensor(np.zeros((5, 128)))).tokens.shape == (5, 64)

    def test_wrong_descriptor_width(self):
        emb = AudioEmbed(64, np.random.default_rng(8), dtype=F64)
        with pytest.raises(DimensionError):
            emb(tensor(np.zeros((5, 64))))

    def test_linearity_with_zero_bias(self):
        emb = AudioEmbed(32, np.random.default_rng(9), dtype=F64)
        emb.b.data[:] = 0.0
        rng = np.random.default_rng(10)
        a, b = rng.standard_normal((3, 128)), rng.standard_normal((3, 128))
        lhs = emb(tensor(a + b)).tokens.data
        rhs = emb(tensor(a)).tokens.data + emb(tensor(b)).tokens.data
        np.testing.assert_allclose(lhs, rhs, atol=1e-6)

    def test_gradcheck(self):
        emb = AudioEmbed(8, np.random.default_rng(11), dtype=F64)
        raw = tensor(np.random.default_rng(12).standard_normal((2, 128)), requires_grad=True)
        assert gradcheck(lambda r: tsum(emb(r).tokens), raw) < 1e-4
