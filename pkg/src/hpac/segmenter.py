"""Packet segmentation: bytes become an m x k grid of token ids.

Octets map to ids 0..255, padding to id 256, so the vocabulary has 257
entries. A packet of n bytes fills m = ceil(n / k) rows; only the last row
carries padding.
"""

import json
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Sequence

import numpy as np

from .errors import BatchingError, ConfigurationError, DomainError, ParseError
from .pcap import RawPacket

PAD = None  # marker accepted by encode_byte
PAD_ID = 256
VOCAB_SIZE = 257
MIN_SEGMENT_SIZE = 6  # convolution width 3 needs room on both sides
DEFAULT_M_MAX = 64


def encode_byte(value) -> int:
    if value is PAD:
        return PAD_ID
    v = int(value)
    if not 0 <= v <= 255:
        raise DomainError(f"not an octet: {value!r}")
    return v


@dataclass(frozen=True, eq=False)
class SegmentedPacket:
    tokens: np.ndarray  # (m, k) int64
    mask: np.ndarray    # (m, k) bool, False on padding
    label: Optional[int] = None
    source_id: str = ""
    frame_index: int = 1

    @property
    def m(self) -> int:
        return self.tokens.shape[0]

    @property
    def k(self) -> int:
        return self.tokens.shape[1]

    @property
    def n(self) -> int:
        return int(self.mask.sum())

    def to_bytes(self) -> bytes:
        return desegment(self)


def _segment(data: bytes, k: int):
    """Chunk and pad without the minimum-size guard."""
    n = len(data)
    m = -(-n // k)
    flat = np.full(m * k, PAD_ID, dtype=np.int64)
    flat[:n] = np.frombuffer(bytes(data), dtype=np.uint8)
    mask = np.zeros(m * k, dtype=bool)
    mask[:n] = True
    return flat.reshape(m, k), mask.reshape(m, k)


def segment_packet(packet: RawPacket, k: int) -> SegmentedPacket:
    if k < MIN_SEGMENT_SIZE:
        raise ConfigurationError(
            f"segment size must be at least {MIN_SEGMENT_SIZE} (kernel width 3), got {k}")
    tokens, mask = _segment(packet.data, k)
    return SegmentedPacket(tokens, mask, packet.label, packet.source_id, packet.frame_index)


def segment_all(packets: Iterable[RawPacket], k: int) -> List[SegmentedPacket]:
    return [segment_packet(p, k) for p in packets]


def desegment(sp: SegmentedPacket) -> bytes:
    return sp.tokens[sp.mask].astype(np.uint8).tobytes()


def to_raw(sp: SegmentedPacket) -> RawPacket:
    return RawPacket(desegment(sp), label=sp.label, source_id=sp.source_id, frame_index=sp.frame_index)


class Batch(NamedTuple):
    tokens: np.ndarray         # (B, M, k)
    segment_mask: np.ndarray   # (B, M)
    token_mask: np.ndarray     # (B, M, k)


def batch_segments(packets: Sequence[SegmentedPacket], m_max: int = DEFAULT_M_MAX) -> Batch:
    """Stack packets into fixed-shape arrays, truncating to the first M segments."""
    if not packets:
        raise BatchingError("cannot batch zero packets")
    if m_max < 1:
        raise BatchingError(f"m_max must be >= 1, got {m_max}")
    ks = {p.k for p in packets}
    if len(ks) != 1:
        raise BatchingError(f"mixed segment sizes in one batch: {sorted(ks)}")
    k = ks.pop()
    big_m = min(m_max, max(p.m for p in packets))
    tokens = np.full((len(packets), big_m, k), PAD_ID, dtype=np.int64)
    token_mask = np.zeros((len(packets), big_m, k), dtype=bool)
    for i, p in enumerate(packets):
        rows = min(p.m, big_m)
        tokens[i, :rows] = p.tokens[:rows]
        token_mask[i, :rows] = p.mask[:rows]
    return Batch(tokens, token_mask.any(axis=-1), token_mask)


def batch_labels(packets: Sequence[SegmentedPacket]) -> np.ndarray:
    labels = [p.label for p in packets]
    if any(lab is None for lab in labels):
        raise BatchingError("unlabeled packet in a labeled batch")
    return np.asarray(labels, dtype=np.int64)


# -- JSONL segment dump ------------------------------------------------------

def segment_record(sp: SegmentedPacket) -> dict:
    return {
        "source_id": sp.source_id,
        "frame_index": sp.frame_index,
        "k": sp.k,
        "tokens": sp.tokens.tolist(),
        "label": sp.label,
    }


def record_to_segmented(rec: dict) -> SegmentedPacket:
    tokens = np.asarray(rec["tokens"], dtype=np.int64)
    k = int(rec["k"])
    if tokens.ndim != 2 or tokens.shape[1] != k or tokens.shape[0] < 1:
        raise DomainError(f"tokens must form an m x {k} grid")
    if tokens.min() < 0 or tokens.max() > PAD_ID:
        raise DomainError("token ids must lie in [0, 256]")
    mask = tokens != PAD_ID
    # padding may only occupy a suffix of the final row
    flat = mask.ravel()
    n = int(flat.sum())
    if n == 0 or not flat[:n].all():
        raise DomainError("padding must form a suffix of the last segment")
    if -(-n // k) != tokens.shape[0]:
        raise DomainError("segment count inconsistent with byte count")
    label = rec.get("label")
    return SegmentedPacket(tokens, mask, None if label is None else int(label),
                           str(rec.get("source_id", "")), int(rec.get("frame_index", 1)))


def write_segments_jsonl(fh, packets: Iterable[SegmentedPacket]):
    for sp in packets:
        fh.write(json.dumps(segment_record(sp)) + "\n")


def read_segments_jsonl(path) -> List[SegmentedPacket]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append(record_to_segmented(rec))
            except (ValueError, KeyError, TypeError) as exc:
                raise ParseError(lineno, f"bad segment record: {exc}", unit="line") from None
    return out
