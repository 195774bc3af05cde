"""Full-pipeline model: shapes, determinism, checkpoints, ablation switches."""

import numpy as np
import pytest

from catr.config import ConfigError, ModelConfig
from catr.data import random_scene, render
from catr.model import CatrModel


def tiny_cfg(**kw):
    base = dict(channels=16, blocks=2, n_heads=2, num_queries=4, decoder_layers=1,
                max_frames=6, seg_levels=[4])
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="module")
def sample():
    return render(random_scene(21, frames=3, height=32, width=32, size_lo=4, size_hi=7))


def test_output_shapes(sample):
    model = CatrModel(tiny_cfg(), seed=1)
    out = model.forward(sample.video, sample.audio)
    assert out.mask_probs.shape == (4, 3, 4, 4)
    assert out.ref_probs.shape == (4, 3, 2)
    assert out.grid == (4, 4)
    assert np.all(out.mask_probs.data >= 0) and np.all(out.mask_probs.data <= 1)
    np.testing.assert_allclose(out.ref_probs.data.sum(-1), 1.0, atol=1e-5)


def test_forward_deterministic(sample):
    model = CatrModel(tiny_cfg(), seed=2)
    a = model.forward(sample.video, sample.audio)
    b = model.forward(sample.video, sample.audio)
    np.testing.assert_array_equal(a.mask_probs.data, b.mask_probs.data)
    np.testing.assert_array_equal(a.ref_probs.data, b.ref_probs.data)


def test_same_seed_same_init():
    p1 = CatrModel(tiny_cfg(), seed=3).state()
    p2 = CatrModel(tiny_cfg(), seed=3).state()
    assert set(p1) == set(p2)
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])


def test_checkpoint_roundtrip(tmp_path, sample):
    model = CatrModel(tiny_cfg(), seed=4)
    out1 = model.forward(sample.video, sample.audio)
    model.save(tmp_path / "ck", {"step": 3})
    loaded = CatrModel.load(tmp_path / "ck")
    out2 = loaded.forward(sample.video, sample.audio)
    np.testing.assert_array_equal(out1.mask_probs.data, out2.mask_probs.data)
    np.testing.assert_array_equal(out1.ref_probs.data, out2.ref_probs.data)


def test_checkpoint_rejects_wrong_state(tmp_path):
    model = CatrModel(tiny_cfg(), seed=5)
    state = model.state()
    state.pop(next(iter(state)))
    with pytest.raises(ConfigError):
        model.load_state(state)


def test_ablation_flags_change_forward(sample):
    full = CatrModel(tiny_cfg(), seed=6).forward(sample.video, sample.audio)
    no_gate = CatrModel(tiny_cfg(use_gate=False), seed=6).forward(sample.video, sample.audio)
    no_tav = CatrModel(tiny_cfg(use_temporal_av=False), seed=6).forward(sample.video, sample.audio)
    assert not np.array_equal(full.mask_probs.data, no_gate.mask_probs.data)
    assert not np.array_equal(full.mask_probs.data, no_tav.mask_probs.data)


def test_num_queries_data_independent(sample):
    model = CatrModel(tiny_cfg(num_queries=7), seed=7)
    out = model.forward(sample.video, sample.audio)
    assert out.mask_probs.shape[0] == 7
    longer = render(random_scene(22, frames=5, height=32, width=32, size_lo=4, size_hi=7))
    out2 = model.forward(longer.video, longer.audio)
    assert out2.mask_probs.shape[:2] == (7, 5)


def test_frames_beyond_position_table_rejected():
    model = CatrModel(tiny_cfg(max_frames=2), seed=8)
    long_sample = render(random_scene(23, frames=4, height=32, width=32, size_lo=4, size_hi=7))
    with pytest.raises(ConfigError):
        model.forward(long_sample.video, long_sample.audio)
