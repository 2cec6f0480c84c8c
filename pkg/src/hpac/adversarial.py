"""Gradient attacks in word-embedding space and their robustness report.

Token ids are discrete, so FGSM and PGD perturb the continuous vectors
returned by the byte-table lookup, before positional terms are added.
Padding positions are never touched. The attack objective is the training
focal loss.
"""

from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, ContractError
from .model import Model, embed_tokens, forward
from .segmenter import Batch, SegmentedPacket, batch_labels, batch_segments
from .trainer import focal_loss

FGSM = "fgsm"
PGD = "pgd"


@dataclass(frozen=True)
class AttackConfig:
    method: str = PGD
    eps: float = 0.3
    alpha: float = 0.4
    iterations: int = 20
    seed: int = 0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    threshold: float = 0.5

    def validate(self):
        if self.method not in (FGSM, PGD):
            raise ConfigurationError(f"attack method must be 'fgsm' or 'pgd', got {self.method!r}")
        if not self.eps >= 0:
            raise ConfigurationError(f"eps must be >= 0, got {self.eps}")
        if not self.alpha > 0:
            raise ConfigurationError(f"alpha must be positive, got {self.alpha}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        return self


@dataclass(frozen=True)
class AttackReport:
    method: str
    eps: float
    alpha: float
    iterations: int
    n_samples: int
    clean_accuracy: float
    adversarial_accuracy: float
    severity: Optional[float]
    severity_alt: float
    cosine_similarities: List[Optional[float]]
    mean_cosine: Optional[float]
    min_cosine: Optional[float]
    max_cosine: Optional[float]

    def to_dict(self, per_sample: bool = False) -> dict:
        out = asdict(self)
        if not per_sample:
            out.pop("cosine_similarities")
        out["undefined"] = [k for k in ("severity", "mean_cosine") if out[k] is None]
        return out


def _check_model(model: Model):
    if not model.all_finite():
        raise ContractError("model parameters contain NaN or Inf; refusing to attack")


def clean_embeddings(model: Model, batch: Batch) -> np.ndarray:
    with ad.no_grad():
        return embed_tokens(model, batch).data.copy()


def loss_and_gradient(model: Model, batch: Batch, labels, embeddings: np.ndarray,
                      focal_alpha: float = 0.25, focal_gamma: float = 2.0):
    """Focal loss at the given word embeddings and its gradient with respect to them."""
    e = Tensor(embeddings, requires_grad=True)
    out = forward(model, batch, word_embeddings=e)
    loss = focal_loss(out.probs, labels, focal_alpha, focal_gamma)
    ad.backward(loss)
    return loss.item(), e.grad


def project(candidate: np.ndarray, origin: np.ndarray, eps: float, live: np.ndarray) -> np.ndarray:
    """Clip onto the L-inf ball of radius eps around origin, exactly in float64.

    ``origin + clip(delta)`` can land one ulp outside the ball after rounding;
    such coordinates are nudged back toward origin. ``live`` (B, M, k) marks
    coordinates allowed to move; everything else is reset to origin.
    """
    out = origin + np.clip(candidate - origin, -eps, eps)
    for _ in range(4):
        over = np.abs(out - origin) > eps
        if not over.any():
            break
        out[over] = np.nextafter(out[over], origin[over])
    return np.where(live[..., None], out, origin)


def fgsm(model: Model, batch: Batch, labels, eps: float, focal_alpha: float = 0.25,
         focal_gamma: float = 2.0) -> np.ndarray:
    """Single signed-gradient step of size eps on the word embeddings."""
    _check_model(model)
    e0 = clean_embeddings(model, batch)
    if eps == 0:
        return e0
    _, g = loss_and_gradient(model, batch, labels, e0, focal_alpha, focal_gamma)
    return project(e0 + eps * np.sign(g), e0, eps, batch.token_mask)


def pgd(model: Model, batch: Batch, labels, eps: float, alpha: float, iterations: int,
        focal_alpha: float = 0.25, focal_gamma: float = 2.0) -> np.ndarray:
    """Iterated signed steps of size alpha, projected onto the eps-ball; no random start."""
    _check_model(model)
    e0 = clean_embeddings(model, batch)
    if eps == 0:
        return e0
    e = e0.copy()
    for _ in range(iterations):
        _, g = loss_and_gradient(model, batch, labels, e, focal_alpha, focal_gamma)
        e = project(e + alpha * np.sign(g), e0, eps, batch.token_mask)
    return e


def predictions(model: Model, batch: Batch, embeddings: Optional[np.ndarray] = None,
                threshold: float = 0.5) -> np.ndarray:
    with ad.no_grad():
        e = None if embeddings is None else Tensor(embeddings)
        probs = forward(model, batch, word_embeddings=e).probs.data
    return (probs[:, 1] >= threshold).astype(np.int64)


def severity_from_predictions(clean_pred, adv_pred, labels) -> Optional[float]:
    labels = np.asarray(labels)
    correct = np.asarray(clean_pred) == labels
    if not correct.any():
        return None
    flipped = np.asarray(adv_pred)[correct] != labels[correct]
    return float(flipped.sum()) / float(correct.sum())


def severity(model: Model, clean_batch: Batch, adv_embeddings: np.ndarray, labels,
             threshold: float = 0.5) -> Optional[float]:
    """Share of clean-correct samples misclassified under the adversarial embeddings."""
    clean = predictions(model, clean_batch, threshold=threshold)
    adv = predictions(model, clean_batch, adv_embeddings, threshold)
    return severity_from_predictions(clean, adv, labels)


def cosine_report(original: np.ndarray, perturbed: np.ndarray, token_mask: Optional[np.ndarray] = None):
    """Per-sample cosine similarity over unmasked embedding coordinates.

    Returns a list with ``None`` for samples whose vectors have zero norm.
    """
    original = np.asarray(original, dtype=np.float64)
    perturbed = np.asarray(perturbed, dtype=np.float64)
    if original.shape != perturbed.shape:
        raise ContractError(f"shape mismatch {original.shape} vs {perturbed.shape}")
    if token_mask is None:
        token_mask = np.ones(original.shape[:-1], dtype=bool)
    sims = []
    for a, b, m in zip(original, perturbed, token_mask):
        a, b = a[m].ravel(), b[m].ravel()
        aa, bb = float(a @ a), float(b @ b)
        if aa == 0.0 or bb == 0.0:
            sims.append(None)
            continue
        # sqrt(aa * bb) rather than sqrt(aa) * sqrt(bb): identical inputs give exactly 1
        sims.append(float(np.clip((a @ b) / np.sqrt(aa * bb), -1.0, 1.0)))
    return sims


def _attack_arrays(model: Model, batch: Batch, labels, config: AttackConfig):
    e0 = clean_embeddings(model, batch)
    if config.method == FGSM:
        adv = fgsm(model, batch, labels, config.eps, config.focal_alpha, config.focal_gamma)
    else:
        adv = pgd(model, batch, labels, config.eps, config.alpha, config.iterations,
                  config.focal_alpha, config.focal_gamma)
    clean_pred = predictions(model, batch, threshold=config.threshold)
    adv_pred = predictions(model, batch, adv, config.threshold)
    return e0, adv, clean_pred, adv_pred, cosine_report(e0, adv, batch.token_mask)


def _report(config: AttackConfig, labels, clean_pred, adv_pred, sims) -> AttackReport:
    defined = [s for s in sims if s is not None]
    adv_acc = float(np.mean(adv_pred == labels))
    return AttackReport(
        method=config.method, eps=config.eps, alpha=config.alpha, iterations=config.iterations,
        n_samples=int(labels.size),
        clean_accuracy=float(np.mean(clean_pred == labels)),
        adversarial_accuracy=adv_acc,
        severity=severity_from_predictions(clean_pred, adv_pred, labels),
        severity_alt=1.0 - adv_acc,
        cosine_similarities=sims,
        mean_cosine=float(np.mean(defined)) if defined else None,
        min_cosine=min(defined) if defined else None,
        max_cosine=max(defined) if defined else None,
    )


def run_attack(model: Model, batch: Batch, labels, config: AttackConfig) -> AttackReport:
    config.validate()
    labels = np.asarray(labels, dtype=np.int64)
    _, _, clean_pred, adv_pred, sims = _attack_arrays(model, batch, labels, config)
    return _report(config, labels, clean_pred, adv_pred, sims)


def attack_dataset(model: Model, packets: Sequence[SegmentedPacket], config: AttackConfig,
                   batch_size: int = 128) -> AttackReport:
    """Attack a packet collection chunk by chunk; samples are reported in input order."""
    config.validate()
    _check_model(model)
    labels = batch_labels(packets)
    clean_pred = np.empty(len(packets), dtype=np.int64)
    adv_pred = np.empty(len(packets), dtype=np.int64)
    sims: List[Optional[float]] = [None] * len(packets)
    order = sorted(range(len(packets)), key=lambda i: packets[i].m)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = batch_segments([packets[i] for i in idx], model.config.m_max)
        _, _, cp, ap, ss = _attack_arrays(model, batch, labels[idx], config)
        clean_pred[idx], adv_pred[idx] = cp, ap
        for i, s in zip(idx, ss):
            sims[i] = s
    return _report(config, labels, clean_pred, adv_pred, sims)
