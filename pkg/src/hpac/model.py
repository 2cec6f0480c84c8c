"""Two-level attention-convolution packet classifier.

The word level reads the bytes of each segment, the sentence level reads the
resulting segment vectors; both levels share one block layout (but not
weights):

1. Q, K, V from three 'same' convolutions over the (masked) inputs.
2. Multi-head scaled dot-product attention, keys restricted to real positions.
3. ``elu(heads @ out_proj) + inputs`` (residual).
4. Target-attention pooling: ``u = tanh(x @ W + b)``, ``alpha = softmax(u @ c)``,
   output ``sum(alpha * x)``.

Inputs at masked positions are zeroed before the convolutions, which makes
padding exactly invisible to real positions: a padded neighbour looks the
same as the convolution's own zero border.
"""

from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DomainError, ShapeError
from .segmenter import DEFAULT_M_MAX, MIN_SEGMENT_SIZE, PAD_ID, VOCAB_SIZE, Batch

EMBED_INIT_RANGE = 0.05  # positional tables
BYTE_EMBED_STD = 1.0


@dataclass(frozen=True)
class ModelConfig:
    k: int = 20
    d: int = 96
    heads: int = 8
    kernel: int = 3
    m_max: int = DEFAULT_M_MAX
    classes: int = 2
    seed: int = 0
    positional: bool = True

    def validate(self):
        if self.k < MIN_SEGMENT_SIZE:
            raise ConfigurationError(f"k must be >= {MIN_SEGMENT_SIZE}, got {self.k}")
        if self.d < 1 or self.heads < 1 or self.d % self.heads:
            raise ConfigurationError(f"d={self.d} is not divisible by heads={self.heads}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigurationError(f"kernel width must be odd, got {self.kernel}")
        if self.m_max < 1:
            raise ConfigurationError(f"m_max must be >= 1, got {self.m_max}")
        if self.classes != 2:
            raise ConfigurationError(f"only binary classification is supported, got classes={self.classes}")
        return self

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown model config fields: {sorted(unknown)}")
        return cls(**data)


@dataclass
class HierarchyBlock:
    q_w: Tensor
    q_b: Tensor
    k_w: Tensor
    k_b: Tensor
    v_w: Tensor
    v_b: Tensor
    out_proj: Tensor
    context: Tensor
    pool_w: Tensor
    pool_b: Tensor


class Model:
    def __init__(self, config: ModelConfig, params: "OrderedDict[str, Tensor]"):
        self.config = config
        self.params = params
        self.word = HierarchyBlock(**{f.name: params[f"word.{f.name}"] for f in fields(HierarchyBlock)})
        self.sent = HierarchyBlock(**{f.name: params[f"sent.{f.name}"] for f in fields(HierarchyBlock)})

    byte_embedding = property(lambda self: self.params["byte_embedding"])
    word_pos = property(lambda self: self.params["word_pos"])
    sent_pos = property(lambda self: self.params["sent_pos"])
    head_w = property(lambda self: self.params["head.w"])
    head_b = property(lambda self: self.params["head.b"])

    def parameters(self):
        return list(self.params.values())

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def state_dict(self):
        return OrderedDict((name, p.data.copy()) for name, p in self.params.items())

    def load_state_dict(self, state):
        for name, p in self.params.items():
            p.data = np.array(state[name], dtype=np.float64, copy=True)

    def all_finite(self) -> bool:
        return all(np.isfinite(p.data).all() for p in self.params.values())


def parameter_shapes(config: ModelConfig) -> "OrderedDict[str, tuple]":
    d, w = config.d, config.kernel
    shapes = OrderedDict()
    shapes["byte_embedding"] = (VOCAB_SIZE, d)
    shapes["word_pos"] = (config.k, d)
    shapes["sent_pos"] = (config.m_max, d)
    for level in ("word", "sent"):
        for proj in ("q", "k", "v"):
            shapes[f"{level}.{proj}_w"] = (w, d, d)
            shapes[f"{level}.{proj}_b"] = (d,)
        shapes[f"{level}.out_proj"] = (d, d)
        shapes[f"{level}.context"] = (d, 1)
        shapes[f"{level}.pool_w"] = (d, d)
        shapes[f"{level}.pool_b"] = (d,)
    shapes["head.w"] = (d, config.classes)
    shapes["head.b"] = (config.classes,)
    return shapes


def count_parameters(config: ModelConfig) -> int:
    d, w, k, m = config.d, config.kernel, config.k, config.m_max
    per_block = 3 * (w * d * d + d) + d * d + d + d * d + d
    return VOCAB_SIZE * d + k * d + m * d + 2 * per_block + d * config.classes + config.classes


def _glorot_bound(shape):
    if len(shape) == 3:  # conv: (width, d_in, d_out)
        fan_in, fan_out = shape[0] * shape[1], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape
    return np.sqrt(6.0 / (fan_in + fan_out))


def init_model(config: ModelConfig) -> Model:
    """Glorot-uniform weights, zero biases, N(0, 1) byte table, small uniform positional tables."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    params = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name == "byte_embedding":
            data = rng.normal(0.0, BYTE_EMBED_STD, size=shape)
        elif name in ("word_pos", "sent_pos"):
            data = rng.uniform(-EMBED_INIT_RANGE, EMBED_INIT_RANGE, size=shape)
        elif len(shape) == 1:
            data = np.zeros(shape)
        else:
            bound = _glorot_bound(shape)
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return Model(config, params)


class HierarchyOutput(NamedTuple):
    pooled: Tensor      # (N, d)
    alpha: np.ndarray   # (N, L) pooling weights
    hidden: Tensor      # (N, L, d) post-attention states


def _hierarchy(block: HierarchyBlock, x: Tensor, mask: np.ndarray, heads: int) -> HierarchyOutput:
    n, length, d = x.shape
    dh = d // heads
    x = x * mask[..., None].astype(np.float64)

    def split(t):
        return ad.swapaxes(ad.reshape(t, (n, length, heads, dh)), 1, 2)

    q = split(ad.conv1d_same(x, block.q_w) + block.q_b)
    k = split(ad.conv1d_same(x, block.k_w) + block.k_b)
    v = split(ad.conv1d_same(x, block.v_w) + block.v_b)
    scores = ad.scale(q @ ad.swapaxes(k, -1, -2), 1.0 / np.sqrt(dh))
    weights = ad.softmax_lastdim_masked(scores, mask[:, None, None, :])
    ctx = ad.reshape(ad.swapaxes(weights @ v, 1, 2), (n, length, d))
    hidden = ad.elu(ctx @ block.out_proj) + x

    u = ad.tanh(hidden @ block.pool_w + block.pool_b)
    logits = ad.reshape(u @ block.context, (n, length))
    alpha = ad.softmax_lastdim_masked(logits, mask)
    pooled = ad.reshape(ad.reshape(alpha, (n, 1, length)) @ hidden, (n, d))
    return HierarchyOutput(pooled, alpha.data, hidden)


def hierarchy_forward(block: HierarchyBlock, inputs, mask, heads: int) -> Tensor:
    """Pool a sequence (L x d, or N x L x d) to one vector per sequence."""
    inputs = ad.as_tensor(inputs)
    mask = np.asarray(mask, dtype=bool)
    single = inputs.ndim == 2
    if single:
        inputs = ad.reshape(inputs, (1,) + inputs.shape)
        mask = mask[None]
    if mask.shape != inputs.shape[:2]:
        raise ShapeError(f"hierarchy: mask shape {mask.shape} does not match inputs {inputs.shape}")
    out = _hierarchy(block, inputs, mask, heads).pooled
    return ad.reshape(out, (out.shape[-1],)) if single else out


class ForwardResult(NamedTuple):
    probs: Tensor             # (B, 2)
    word_embeddings: Tensor   # (B, M, k, d) post-lookup, pre-positional
    packet_embedding: Tensor  # (B, d)
    word_alpha: np.ndarray    # (B, M, k)
    sent_alpha: np.ndarray    # (B, M)


def check_batch(config: ModelConfig, batch: Batch):
    tokens = np.asarray(batch.tokens)
    if tokens.ndim != 3:
        raise ShapeError(f"tokens must be B x M x k, got shape {tokens.shape}")
    if tokens.shape[2] != config.k:
        raise ShapeError(f"batch segment size {tokens.shape[2]} != model k={config.k}")
    if tokens.shape[1] > config.m_max:
        raise ShapeError(f"batch has {tokens.shape[1]} segments, model m_max={config.m_max}")
    if tokens.size and (tokens.min() < 0 or tokens.max() > PAD_ID):
        raise DomainError(f"token ids must lie in [0, {PAD_ID}]")
    if batch.token_mask.shape != tokens.shape or batch.segment_mask.shape != tokens.shape[:2]:
        raise ShapeError("batch masks do not match token grid")


def embed_tokens(model: Model, batch: Batch) -> Tensor:
    check_batch(model.config, batch)
    return ad.embedding_lookup(model.byte_embedding, batch.tokens)


def forward(model: Model, batch: Batch, word_embeddings: Optional[Tensor] = None) -> ForwardResult:
    """Class probabilities for a batch.

    ``word_embeddings`` replaces the byte-table lookup when given; attacks
    use this to run the network on perturbed embeddings.
    """
    cfg = model.config
    if word_embeddings is None:
        word_embeddings = embed_tokens(model, batch)
    else:
        check_batch(cfg, batch)
    b, big_m, k = batch.tokens.shape
    if word_embeddings.shape != (b, big_m, k, cfg.d):
        raise ShapeError(f"word embeddings {word_embeddings.shape} != {(b, big_m, k, cfg.d)}")

    x = word_embeddings + model.word_pos if cfg.positional else word_embeddings
    word = _hierarchy(model.word, ad.reshape(x, (b * big_m, k, cfg.d)),
                      batch.token_mask.reshape(b * big_m, k), cfg.heads)
    seg_vectors = ad.reshape(word.pooled, (b, big_m, cfg.d))
    if cfg.positional:
        seg_vectors = seg_vectors + ad.embedding_lookup(model.sent_pos, np.arange(big_m))
    sent = _hierarchy(model.sent, seg_vectors, batch.segment_mask, cfg.heads)
    logits = sent.pooled @ model.head_w + model.head_b
    probs = ad.softmax_lastdim_masked(logits)
    return ForwardResult(probs, word_embeddings, sent.pooled,
                         word.alpha.reshape(b, big_m, k), sent.alpha)


def predict_proba(model: Model, batch: Batch) -> np.ndarray:
    with ad.no_grad():
        return forward(model, batch).probs.data
