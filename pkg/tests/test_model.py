from dataclasses import replace

import numpy as np
import pytest

from hpac import autodiff as ad
from hpac.errors import ConfigurationError, DomainError, ShapeError
from hpac.model import (ModelConfig, count_parameters, forward, hierarchy_forward, init_model,
                        predict_proba)
from hpac.pcap import RawPacket
from hpac.segmenter import PAD_ID, Batch, batch_segments, segment_packet

from gradcheck import check_pipeline


def _random_packets(rng, count, k, lo=1, hi=40):
    return [segment_packet(RawPacket(rng.integers(0, 256, int(rng.integers(lo, hi + 1)))
                                     .astype(np.uint8).tobytes()), k)
            for _ in range(count)]


def append_pad_segment(batch: Batch) -> Batch:
    b, m, k = batch.tokens.shape
    return Batch(np.concatenate([batch.tokens, np.full((b, 1, k), PAD_ID)], axis=1),
                 np.concatenate([batch.segment_mask, np.zeros((b, 1), bool)], axis=1),
                 np.concatenate([batch.token_mask, np.zeros((b, 1, k), bool)], axis=1))


def test_deterministic_init(tiny_config):
    a, b = init_model(tiny_config), init_model(tiny_config)
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    c = init_model(replace(tiny_config, seed=4))
    assert not np.array_equal(a.params["word.q_w"].data, c.params["word.q_w"].data)


def test_config_validation():
    assert ModelConfig(d=96, heads=8).head_dim == 12
    with pytest.raises(ConfigurationError):
        ModelConfig(d=97, heads=8).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(k=5).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig(kernel=2).validate()
    with pytest.raises(ConfigurationError):
        ModelConfig.from_dict({"k": 20, "depth": 3})
    assert ModelConfig.from_dict(ModelConfig().to_dict()) == ModelConfig()


@pytest.mark.parametrize("cfg", [ModelConfig(), ModelConfig(k=6, d=8, heads=2, m_max=4),
                                 ModelConfig(k=39, d=32, heads=4, kernel=5)])
def test_parameter_count(cfg):
    assert init_model(cfg).num_parameters() == count_parameters(cfg)


def test_singleton_pooling(tiny_model, rng):
    x = rng.normal(size=(1, 8))
    block = tiny_model.word
    out = hierarchy_forward(block, x, [True], heads=2)
    # with one position attention and pooling weights are both exactly 1
    from hpac.model import _hierarchy
    res = _hierarchy(block, ad.Tensor(x[None]), np.array([[True]]), 2)
    assert res.alpha.tolist() == [[1.0]]
    np.testing.assert_allclose(out.data, res.hidden.data[0, 0], rtol=0, atol=0)


def test_fully_masked_sequence_is_zero(tiny_model, rng):
    out = hierarchy_forward(tiny_model.word, rng.normal(size=(6, 8)), np.zeros(6, bool), heads=2)
    assert (out.data == 0).all()


def test_mask_shape_error(tiny_model):
    with pytest.raises(ShapeError):
        hierarchy_forward(tiny_model.word, np.zeros((6, 8)), np.ones(5, bool), heads=2)


def test_permutation_invariance_pointwise_projections(rng):
    cfg = ModelConfig(k=6, d=8, heads=2, kernel=1, m_max=4, seed=5, positional=False)
    block = init_model(cfg).word
    x = rng.normal(size=(3, 8))
    perm = [2, 0, 1]
    mask = np.ones(3, bool)
    a = hierarchy_forward(block, x, mask, heads=2).data
    b = hierarchy_forward(block, x[perm], mask, heads=2).data
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-14)


def test_width3_conv_is_order_sensitive(tiny_model, rng):
    x = rng.normal(size=(3, 8))
    a = hierarchy_forward(tiny_model.word, x, np.ones(3, bool), heads=2).data
    b = hierarchy_forward(tiny_model.word, x[[2, 0, 1]], np.ones(3, bool), heads=2).data
    assert not np.allclose(a, b)


def test_probabilities_and_purity(tiny_model, rng):
    packets = _random_packets(rng, 5, 6)
    batch = batch_segments(packets + [packets[0]], 4)
    probs = predict_proba(tiny_model, batch)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert np.array_equal(probs[0], probs[-1])
    assert ((probs > 0) & (probs < 1)).all()


def test_single_short_packet_open_interval(tiny_model):
    batch = batch_segments([segment_packet(RawPacket(b"\x01\x02\x03"), 6)], 4)
    p = predict_proba(tiny_model, batch)
    assert batch.tokens.shape == (1, 1, 6)
    assert ((p > 0) & (p < 1)).all()


def test_padding_invariance(tiny_model, rng):
    batch = batch_segments(_random_packets(rng, 20, 6, hi=18), 4)
    a = predict_proba(tiny_model, batch)
    b = predict_proba(tiny_model, append_pad_segment(batch))
    assert np.abs(a - b).max() < 1e-9


def test_pad_positions_get_zero_attention(tiny_model):
    batch = batch_segments([segment_packet(RawPacket(bytes(range(8))), 6)], 4)
    padded = append_pad_segment(batch)
    res = forward(tiny_model, padded)
    assert (res.word_alpha[~padded.token_mask] == 0).all()
    assert (res.word_alpha[0, 1, 2:] == 0).all()
    assert res.sent_alpha[0, -1] == 0
    np.testing.assert_allclose(res.word_alpha[0, 0].sum(), 1.0)


def test_embedding_gradients_flow(tiny_model, rng):
    from hpac.trainer import focal_loss
    packets = [segment_packet(RawPacket(bytes([7, 7, 9]), label=1), 6)]
    batch = batch_segments(packets, 4)
    ad.reset_grads(tiny_model.parameters())
    ad.backward(focal_loss(forward(tiny_model, batch).probs, [1]))
    g = tiny_model.byte_embedding.grad
    assert np.abs(g[7]).sum() > 0 and np.abs(g[9]).sum() > 0
    assert (g[[0, 8, 255]] == 0).all()
    # PAD row is looked up but masked to zero before the conv: no gradient
    assert (g[PAD_ID] == 0).all()


def test_forward_domain_and_shape_errors(tiny_model):
    batch = batch_segments([segment_packet(RawPacket(bytes(6)), 6)], 4)
    bad = Batch(batch.tokens.copy(), batch.segment_mask, batch.token_mask)
    bad.tokens[0, 0, 0] = 257
    with pytest.raises(DomainError):
        forward(tiny_model, bad)
    wrong_k = batch_segments([segment_packet(RawPacket(bytes(8)), 8)], 4)
    with pytest.raises(ShapeError):
        forward(tiny_model, wrong_k)
    with pytest.raises(ShapeError):
        forward(tiny_model, batch, word_embeddings=ad.Tensor(np.zeros((1, 1, 6, 7))))


def test_pipeline_gradient_check(tiny_config):
    assert check_pipeline(replace(tiny_config, m_max=2), seed=0) == {}
