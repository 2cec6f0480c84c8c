"""Focal-loss training with Adam, best-validation-F1 retention, checkpoint files.

Checkpoint layout (all integers little-endian)::

    b"HPAC" | u32 version | u32 header_len | header JSON | f64 parameter blobs

The JSON header carries the model config and an index of
``{name, shape, offset}`` entries; offsets count float64 items from the start
of the blob section.
"""

import json
import logging
import math
import struct
from dataclasses import dataclass, fields
from typing import List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, IncompatibleCheckpointError, TrainingAborted
from .metrics import MetricsReport, evaluate_predictions
from .model import Model, ModelConfig, forward, init_model, parameter_shapes
from .segmenter import SegmentedPacket, batch_labels, batch_segments

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"HPAC"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    steps_per_epoch: int = 150
    batch_size: int = 40
    lr: float = 1e-3
    focal_gamma: float = 2.0
    focal_alpha: float = 0.25
    seed: int = 0
    checkpoint_path: Optional[str] = None
    eval_batch_size: int = 256
    threshold: float = 0.5

    def validate(self):
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("steps_per_epoch", "batch_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.lr > 0:
            raise ConfigurationError(f"lr must be positive, got {self.lr}")
        if self.focal_gamma < 0:
            raise ConfigurationError(f"focal_gamma must be >= 0, got {self.focal_gamma}")
        if not 0 < self.focal_alpha < 1:
            raise ConfigurationError(f"focal_alpha must lie in (0, 1), got {self.focal_alpha}")
        return self


def focal_loss(probs, labels, alpha: float = 0.25, gamma: float = 2.0):
    """Mean of ``-alpha_t (1 - p_t)^gamma log p_t`` over the batch.

    ``alpha`` weights class 1 and ``1 - alpha`` weights class 0. p_t is
    clamped at 1e-12 inside the log.
    """
    probs = ad.as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    onehot = np.eye(probs.shape[-1])[labels]
    p_t = ad.sum(probs * onehot, axis=-1)
    weight = np.where(labels == 1, alpha, 1.0 - alpha)
    modulating = ad.power(ad.relu(ad.sub(1.0, p_t)), gamma)
    per_sample = modulating * ad.log(p_t) * (-weight)
    return ad.mean(per_sample)


# -- Adam --------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(p.data) for k, p in params.items()},
                   v={k: np.zeros_like(p.data) for k, p in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, lr: float):
    """One bias-corrected Adam update, in place. Raises on non-finite gradients."""
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingAborted(f"non-finite gradient in parameter {name!r} at step {state.t + 1}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


# -- evaluation --------------------------------------------------------------

def predict_dataset(model: Model, packets: Sequence[SegmentedPacket], batch_size: int = 256) -> np.ndarray:
    """Class probabilities for every packet, in input order."""
    order = sorted(range(len(packets)), key=lambda i: packets[i].m)
    probs = np.empty((len(packets), 2))
    with ad.no_grad():
        for start in range(0, len(order), batch_size):
            idx = order[start:start + batch_size]
            batch = batch_segments([packets[i] for i in idx], model.config.m_max)
            probs[idx] = forward(model, batch).probs.data
    return probs


def evaluate(model: Model, packets: Sequence[SegmentedPacket], threshold: float = 0.5,
             batch_size: int = 256) -> MetricsReport:
    probs = predict_dataset(model, packets, batch_size)
    return evaluate_predictions(probs, batch_labels(packets), threshold)


# -- training loop -----------------------------------------------------------

def _epoch_indices(rng, n, count):
    chunks, have = [], 0
    while have < count:
        chunks.append(rng.permutation(n))
        have += n
    return np.concatenate(chunks)[:count]


def _f1_key(report: MetricsReport) -> float:
    return -1.0 if report.f1 is None else report.f1


def train(model: Model, train_data: Sequence[SegmentedPacket], val_data: Sequence[SegmentedPacket],
          config: TrainConfig, on_epoch=None):
    """Train in place; the model ends holding the best-validation-F1 parameters.

    Returns ``(model, history)`` where history has one dict per epoch.
    ``on_epoch`` (optional) is called with each history entry as it is made.
    """
    config.validate()
    if not train_data or not val_data:
        raise ConfigurationError("training and validation sets must be non-empty")
    train_labels = batch_labels(train_data)
    batch_labels(val_data)  # fail fast on unlabeled validation packets

    params = model.params
    state = AdamState.for_params(params)
    rng = np.random.default_rng(config.seed)
    history: List[dict] = []
    best_key, best_state = -math.inf, None

    for epoch in range(1, config.epochs + 1):
        indices = _epoch_indices(rng, len(train_data), config.steps_per_epoch * config.batch_size)
        losses = []
        for step in range(config.steps_per_epoch):
            idx = indices[step * config.batch_size:(step + 1) * config.batch_size]
            batch = batch_segments([train_data[i] for i in idx], model.config.m_max)
            ad.reset_grads(params.values())
            out = forward(model, batch)
            loss = focal_loss(out.probs, train_labels[idx], config.focal_alpha, config.focal_gamma)
            ad.backward(loss)
            adam_step(params, {k: p.grad for k, p in params.items()}, state, config.lr)
            losses.append(loss.item())
        report = evaluate(model, val_data, config.threshold, config.eval_batch_size)
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        entry.update(report.to_dict())
        history.append(entry)
        log.info("epoch %d loss %.6f val acc %.4f f1 %s", epoch, entry["loss"], report.acc, report.f1)
        if _f1_key(report) > best_key:
            best_key, best_state = _f1_key(report), model.state_dict()
            if config.checkpoint_path:
                save_checkpoint(model, config.checkpoint_path)
        if on_epoch is not None:
            on_epoch(entry)

    if best_state is not None:
        model.load_state_dict(best_state)
    return model, history


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: Model, path):
    index, blobs, offset = [], [], 0
    for name, p in model.params.items():
        index.append({"name": name, "shape": list(p.shape), "offset": offset})
        blobs.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        offset += p.size
    header = json.dumps({"config": model.config.to_dict(), "tensors": index}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path, expect: Optional[ModelConfig] = None) -> Model:
    """Read a checkpoint; with ``expect`` given, every config field must agree."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise IncompatibleCheckpointError(f"{path}: not an HPAC checkpoint (bad magic)")
    if len(blob) < 12:
        raise IncompatibleCheckpointError(f"{path}: truncated header")
    version, header_len = struct.unpack_from("<II", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise IncompatibleCheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    body_start = 12 + header_len
    if len(blob) < body_start:
        raise IncompatibleCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[12:body_start].decode())
        config = ModelConfig.from_dict(header["config"]).validate()
        index = header["tensors"]
    except (ValueError, KeyError, TypeError) as exc:
        raise IncompatibleCheckpointError(f"{path}: unreadable header ({exc})") from None

    if expect is not None:
        for f in fields(ModelConfig):
            got, want = getattr(config, f.name), getattr(expect, f.name)
            if got != want:
                raise IncompatibleCheckpointError(
                    f"{path}: config field {f.name!r} is {got!r}, expected {want!r}")

    values = np.frombuffer(blob, dtype="<f8", offset=body_start, count=(len(blob) - body_start) // 8)
    shapes = parameter_shapes(config)
    entries = {e["name"]: e for e in index}
    if set(entries) != set(shapes):
        raise IncompatibleCheckpointError(f"{path}: parameter set does not match config")
    model = init_model(config)
    state = {}
    for name, shape in shapes.items():
        e = entries[name]
        if tuple(e["shape"]) != shape:
            raise IncompatibleCheckpointError(f"{path}: {name} has shape {tuple(e['shape'])}, expected {shape}")
        count = int(np.prod(shape))
        start = int(e["offset"])
        if start < 0 or start + count > values.size:
            raise IncompatibleCheckpointError(f"{path}: truncated parameter data for {name}")
        state[name] = values[start:start + count].reshape(shape)
    model.load_state_dict(state)
    return model
