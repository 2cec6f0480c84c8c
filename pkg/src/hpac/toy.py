"""Synthetic packet corpus with a known, learnable signal.

Benign packets are uniform over bytes 0..127. Malicious packets share that
background but carry an 8-byte motif (with high bytes) at a random offset,
so a byte histogram alone separates the classes.
"""

import csv
import os
from typing import List

import numpy as np

from .pcap import RawPacket, write_pcap

MOTIF = bytes([0xDE, 0xAD, 0xBE, 0xEF, 0xCA, 0xFE, 0xF0, 0x0D])
TOY_SOURCE = "toy.pcap"


def make_toy_corpus(n: int = 2000, malicious_fraction: float = 0.3, min_len: int = 40,
                    max_len: int = 160, seed: int = 0, source_id: str = TOY_SOURCE) -> List[RawPacket]:
    if min_len < len(MOTIF):
        raise ValueError(f"min_len must fit the {len(MOTIF)}-byte motif")
    rng = np.random.default_rng(seed)
    n_mal = int(round(n * malicious_fraction))
    labels = np.zeros(n, dtype=np.int64)
    labels[:n_mal] = 1
    rng.shuffle(labels)
    packets = []
    for i, label in enumerate(labels):
        length = int(rng.integers(min_len, max_len + 1))
        body = bytearray(rng.integers(0, 128, size=length, dtype=np.uint8).tobytes())
        if label:
            at = int(rng.integers(0, length - len(MOTIF) + 1))
            body[at:at + len(MOTIF)] = MOTIF
        packets.append(RawPacket(bytes(body), label=int(label), source_id=source_id, frame_index=i + 1))
    return packets


def write_toy_dataset(out_dir, **kwargs):
    """Write ``toy.pcap`` plus ``toy_labels.csv`` (malicious rows only); return both paths."""
    os.makedirs(out_dir, exist_ok=True)
    packets = make_toy_corpus(**kwargs)
    pcap_path = os.path.join(out_dir, packets[0].source_id)
    labels_path = os.path.join(out_dir, "toy_labels.csv")
    write_pcap(pcap_path, packets)
    with open(labels_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["source_id", "frame_index", "label"])
        for p in packets:
            if p.label == 1:
                w.writerow([p.source_id, p.frame_index, 1])
    return pcap_path, labels_path
