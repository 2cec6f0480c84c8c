import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hpac import autodiff as ad
from hpac.errors import ConfigurationError, IncompatibleCheckpointError, TrainingAborted
from hpac.model import ModelConfig, init_model, predict_proba
from hpac.pcap import split_dataset
from hpac.segmenter import batch_segments, segment_all
from hpac.toy import make_toy_corpus
from hpac.trainer import (AdamState, TrainConfig, adam_step, evaluate, focal_loss, load_checkpoint,
                          save_checkpoint, train)

SMALL_MODEL = ModelConfig(k=20, d=8, heads=2, kernel=3, m_max=8, seed=2)
SMALL_TRAIN = TrainConfig(epochs=2, steps_per_epoch=3, batch_size=8, seed=4)


@pytest.fixture(scope="module")
def small_data():
    split = split_dataset(make_toy_corpus(n=60, seed=9), (0.6, 0.2, 0.2), seed=0)
    return segment_all(split.train, 20), segment_all(split.validation, 20)


def _probs(p_t, label):
    row = [1 - p_t, p_t] if label == 1 else [p_t, 1 - p_t]
    return np.array([row])


def test_focal_gamma0_half_cross_entropy():
    loss = focal_loss(_probs(0.5, 1), [1], alpha=0.5, gamma=0.0).item()
    assert abs(loss - 0.5 * math.log(2)) < 1e-15
    assert abs(loss - 0.34657) < 1e-5


def test_focal_hand_value():
    loss = focal_loss(_probs(0.9, 1), [1], alpha=0.25, gamma=2.0).item()
    assert abs(loss - 0.25 * 0.01 * -math.log(0.9)) < 1e-15
    assert abs(loss - 2.634e-4) < 1e-7


def test_focal_perfect_prediction():
    assert focal_loss(_probs(1.0, 0), [0]).item() == 0.0
    assert focal_loss(_probs(1.0, 1), [1]).item() == 0.0


def test_focal_class0_weight():
    loss = focal_loss(_probs(0.5, 0), [0], alpha=0.25, gamma=0.0).item()
    assert abs(loss - 0.75 * math.log(2)) < 1e-15


@settings(max_examples=50, deadline=None)
@given(st.sampled_from([0.0, 0.5, 1.0, 2.0, 5.0]), st.floats(0.05, 0.95), st.integers(0, 1))
def test_focal_monotone(gamma, alpha, label):
    grid = np.linspace(0.01, 1.0, 100)
    vals = [focal_loss(_probs(p, label), [label], alpha, gamma).item() for p in grid]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_adam_first_step_is_lr():
    p = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    state = AdamState.for_params({"p": p})
    adam_step({"p": p}, {"p": np.array([5.0, -0.3, 1e-3])}, state, lr=0.01)
    np.testing.assert_allclose(p.data - [1.0, -2.0, 3.0], [-0.01, 0.01, -0.01], rtol=1e-4)


def test_adam_zero_grad_fixed_point():
    p = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    state = AdamState.for_params({"p": p})
    for _ in range(3):
        adam_step({"p": p}, {"p": np.zeros(2)}, state, lr=0.1)
    assert p.data.tolist() == [1.0, -2.0]


@pytest.mark.parametrize("lr", [1e-4, 1e-3, 1e-2])
def test_adam_reduces_quadratic(lr, rng):
    target = rng.normal(size=5)
    p = ad.Tensor(rng.normal(size=5), requires_grad=True)
    state = AdamState.for_params({"p": p})

    def loss():
        return float(((p.data - target) ** 2).sum())

    before = loss()
    adam_step({"p": p}, {"p": 2 * (p.data - target)}, state, lr)
    assert loss() < before


def test_adam_nan_aborts():
    p = ad.Tensor(np.zeros(2), requires_grad=True)
    state = AdamState.for_params({"p": p})
    with pytest.raises(TrainingAborted, match="'p'"):
        adam_step({"p": p}, {"p": np.array([np.nan, 0.0])}, state, lr=0.1)
    assert p.data.tolist() == [0.0, 0.0]


def test_zero_epochs_returns_initial(small_data):
    tr, va = small_data
    model = init_model(SMALL_MODEL)
    before = model.state_dict()
    out, history = train(model, tr, va, replace(SMALL_TRAIN, epochs=0))
    assert history == []
    for name, value in out.state_dict().items():
        assert np.array_equal(value, before[name])


def test_training_is_deterministic(small_data):
    tr, va = small_data
    m1, h1 = train(init_model(SMALL_MODEL), tr, va, SMALL_TRAIN)
    m2, h2 = train(init_model(SMALL_MODEL), tr, va, SMALL_TRAIN)
    assert h1 == h2
    for name, value in m1.state_dict().items():
        assert np.array_equal(value, m2.state_dict()[name])


def test_best_checkpoint_matches_history(small_data, tmp_path):
    tr, va = small_data
    cfg = replace(SMALL_TRAIN, epochs=4, checkpoint_path=str(tmp_path / "best.ckpt"))
    model, history = train(init_model(SMALL_MODEL), tr, va, cfg)
    f1s = [-1.0 if h["f1"] is None else h["f1"] for h in history]
    got = evaluate(model, va).f1
    assert (-1.0 if got is None else got) == max(f1s)
    saved = load_checkpoint(cfg.checkpoint_path)
    for name, value in model.state_dict().items():
        assert np.array_equal(value, saved.state_dict()[name])


def test_train_rejects_empty(small_data):
    tr, va = small_data
    with pytest.raises(ConfigurationError):
        train(init_model(SMALL_MODEL), [], va, SMALL_TRAIN)
    with pytest.raises(ConfigurationError):
        train(init_model(SMALL_MODEL), tr, va, replace(SMALL_TRAIN, lr=0.0))


def test_checkpoint_roundtrip(tiny_model, tmp_path, small_data, rng):
    model = init_model(SMALL_MODEL)
    for p in model.parameters():
        p.data = p.data + rng.normal(size=p.shape) * 1e-3
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path, expect=SMALL_MODEL)
    batch = batch_segments(small_data[1][:5], SMALL_MODEL.m_max)
    assert np.array_equal(predict_proba(model, batch), predict_proba(back, batch))


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(SMALL_MODEL), path)
    blob = path.read_bytes()
    for cut in (2, 10, 40, len(blob) - 8):
        path.write_bytes(blob[:cut])
        with pytest.raises(IncompatibleCheckpointError):
            load_checkpoint(path)


def test_checkpoint_config_mismatch_names_field(tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(init_model(SMALL_MODEL), path)
    with pytest.raises(IncompatibleCheckpointError, match="'d'"):
        load_checkpoint(path, expect=replace(SMALL_MODEL, d=16, heads=2))


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "x.ckpt"
    path.write_bytes(b"PK\x03\x04" + bytes(100))
    with pytest.raises(IncompatibleCheckpointError, match="magic"):
        load_checkpoint(path)
