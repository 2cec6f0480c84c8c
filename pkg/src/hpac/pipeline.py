"""End-to-end helpers composing ingestion, segmentation, training and evaluation."""

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import List, Sequence

from .config import RunConfig
from .errors import ConfigurationError
from .model import init_model
from .pcap import RawPacket, load_labels, read_packets, split_dataset
from .segmenter import SegmentedPacket, read_segments_jsonl, segment_all, to_raw
from .trainer import evaluate, train

log = logging.getLogger(__name__)


def load_packets(path, labels=None) -> List[RawPacket]:
    """Raw packets from a PCAP, a hex text file, or a segment JSONL dump.

    JSONL dumps are desegmented back to bytes, so they can be re-cut at any k.
    A label manifest, when given, overrides labels already present.
    """
    if os.fspath(path).endswith(".jsonl"):
        packets = [to_raw(sp) for sp in read_segments_jsonl(path)]
    else:
        packets = read_packets(path)
    if labels is not None:
        packets = load_labels(labels, packets)
    return packets


def load_inputs(paths: Sequence, labels=None) -> List[RawPacket]:
    if not paths:
        raise ConfigurationError("no data inputs configured (data.inputs)")
    packets = []
    for p in paths:
        packets.extend(load_packets(p, labels))
    return packets


def segmented_splits(packets: Sequence[RawPacket], cfg: RunConfig):
    unlabeled = sum(p.label is None for p in packets)
    if unlabeled:
        raise ConfigurationError(f"{unlabeled} packets carry no label; set data.labels")
    split = split_dataset(packets, cfg.data.ratios, cfg.data.split_seed)
    k = cfg.model.k
    return segment_all(split.train, k), segment_all(split.validation, k), segment_all(split.test, k)


def train_run(packets: Sequence[RawPacket], cfg: RunConfig, on_epoch=None):
    """Train on the configured split; returns (model, history, test packets)."""
    tr, va, te = segmented_splits(packets, cfg)
    model = init_model(cfg.model)
    model, history = train(model, tr, va, cfg.train, on_epoch=on_epoch)
    return model, history, te


def sweep_row(packets: Sequence[RawPacket], cfg: RunConfig, k: int) -> dict:
    cfg = replace(cfg, model=replace(cfg.model, k=k).validate(),
                  train=replace(cfg.train, checkpoint_path=None))
    model, history, test = train_run(packets, cfg)
    report = evaluate(model, test, cfg.eval.threshold)
    best = max(history, key=lambda h: -1.0 if h["f1"] is None else h["f1"]) if history else None
    row = {"segment_size": k, "n_test": len(test),
           "best_epoch": None if best is None else best["epoch"]}
    row.update(report.to_dict())
    log.info("segment size %d: acc %.5f fpr_paper %s", k, report.acc, report.fpr_paper)
    return row


def sweep(packets: Sequence[RawPacket], cfg: RunConfig, segment_sizes: Sequence[int], workers: int = 1):
    """Retrain and test once per segment size; rows come back in input order."""
    for k in segment_sizes:
        replace(cfg.model, k=k).validate()
    if workers <= 1:
        return [sweep_row(packets, cfg, k) for k in segment_sizes]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda k: sweep_row(packets, cfg, k), segment_sizes))


def resegment(packets: Sequence[SegmentedPacket], k: int) -> List[SegmentedPacket]:
    """Bring loaded segment records to the model's k (no-op when they already match)."""
    if all(p.k == k for p in packets):
        return list(packets)
    return segment_all([to_raw(p) for p in packets], k)
