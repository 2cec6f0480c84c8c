import numpy as np
import pytest

from hpac import adversarial as adv
from hpac.adversarial import (AttackConfig, clean_embeddings, cosine_report, fgsm, pgd, project,
                              run_attack, severity_from_predictions)
from hpac.errors import ConfigurationError, ContractError
from hpac.pcap import RawPacket
from hpac.segmenter import batch_labels, batch_segments, segment_packet


@pytest.fixture
def small_batch(rng):
    packets = [segment_packet(RawPacket(rng.integers(0, 256, n).astype(np.uint8).tobytes(), label=n % 2), 6)
               for n in (3, 8, 13, 20, 24)]
    return batch_segments(packets, 4), batch_labels(packets)


def test_sign_step_example(monkeypatch, tiny_model):
    batch = batch_segments([segment_packet(RawPacket(b"\x01"), 6)], 4)
    g = np.zeros((1, 1, 6, 8))
    g[0, 0, 0, :3] = [2.0, -3.0, 0.0]
    monkeypatch.setattr(adv, "loss_and_gradient", lambda *a, **k: (0.0, g))
    e0 = clean_embeddings(tiny_model, batch)
    delta = fgsm(tiny_model, batch, [1], eps=0.3) - e0
    np.testing.assert_allclose(delta[0, 0, 0, :3], [0.3, -0.3, 0.0], rtol=1e-12)
    assert (np.abs(delta) <= 0.3).all()


@pytest.mark.parametrize("eps", [0.05, 0.3, 1.0])
def test_bounds_and_padding(tiny_model, small_batch, eps):
    batch, labels = small_batch
    e0 = clean_embeddings(tiny_model, batch)
    for e in (fgsm(tiny_model, batch, labels, eps), pgd(tiny_model, batch, labels, eps, 0.4, 5)):
        assert (np.abs(e - e0) <= eps).all()
        assert np.array_equal(e[~batch.token_mask], e0[~batch.token_mask])
        assert (e != e0)[batch.token_mask].any()


def test_zero_eps(tiny_model, small_batch):
    batch, labels = small_batch
    e0 = clean_embeddings(tiny_model, batch)
    assert np.array_equal(fgsm(tiny_model, batch, labels, 0.0), e0)
    rep = run_attack(tiny_model, batch, labels, AttackConfig(method="pgd", eps=0.0))
    assert rep.adversarial_accuracy == rep.clean_accuracy
    assert rep.severity in (0.0, None)
    assert rep.mean_cosine == 1.0


def test_pgd_single_step_equals_fgsm(tiny_model, small_batch):
    batch, labels = small_batch
    for eps, alpha in ((0.3, 0.3), (0.3, 0.4), (0.05, 1.0)):
        assert np.array_equal(pgd(tiny_model, batch, labels, eps, alpha, 1),
                              fgsm(tiny_model, batch, labels, eps))


def test_pgd_deterministic(tiny_model, small_batch):
    batch, labels = small_batch
    assert np.array_equal(pgd(tiny_model, batch, labels, 0.3, 0.1, 4),
                          pgd(tiny_model, batch, labels, 0.3, 0.1, 4))


def test_project_exact(rng):
    origin = rng.normal(size=(2, 3, 4, 5)) * 1e3
    cand = origin + rng.choice([-1.0, 1.0], size=origin.shape) * 0.1
    out = project(cand, origin, 0.1, np.ones((2, 3, 4), bool))
    assert (np.abs(out - origin) <= 0.1).all()


def test_nan_model_rejected(tiny_model, small_batch):
    batch, labels = small_batch
    tiny_model.params["head.w"].data[0, 0] = np.nan
    with pytest.raises(ContractError):
        fgsm(tiny_model, batch, labels, 0.1)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        AttackConfig(method="cw").validate()
    with pytest.raises(ConfigurationError):
        AttackConfig(eps=-0.1).validate()
    with pytest.raises(ConfigurationError):
        AttackConfig(iterations=0).validate()


def test_severity_examples():
    labels = np.array([1] * 20)
    clean = labels.copy()
    assert severity_from_predictions(clean, clean, labels) == 0.0
    assert severity_from_predictions(clean, 1 - clean, labels) == 1.0
    one = clean.copy()
    one[3] = 0
    assert severity_from_predictions(clean, one, labels) == 0.05
    assert severity_from_predictions(1 - labels, labels, labels) is None


def test_severity_ignores_clean_mistakes():
    labels = np.array([1, 1, 0, 0])
    clean = np.array([1, 0, 0, 1])  # two correct
    advp = np.array([0, 1, 0, 0])   # one of them flips
    assert severity_from_predictions(clean, advp, labels) == 0.5


def test_cosine_examples():
    a = np.array([[[1.0, 0.0]]])
    assert cosine_report(a, a) == [1.0]
    assert cosine_report(a, -a) == [-1.0]
    np.testing.assert_allclose(cosine_report(a, np.array([[[1.0, 1.0]]])), [2 ** -0.5], rtol=1e-12)
    assert cosine_report(a, np.zeros_like(a)) == [None]
    with pytest.raises(ContractError):
        cosine_report(a, np.zeros((1, 2, 2)))


def test_cosine_identity_random(rng):
    e = rng.normal(size=(10, 3, 6, 8))
    assert cosine_report(e, e.copy()) == [1.0] * 10
