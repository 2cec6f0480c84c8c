"""Packet ingestion: classic PCAP files, hex-string streams, label manifests, splits.

Only classic libpcap captures are understood (24-byte global header followed by
16-byte record headers); both byte orders are detected from the magic number.
Records are kept verbatim, link-layer header included.
"""

import csv
import io
import math
import os
import string
import struct
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigurationError, ManifestError, ParseError, TruncatedFileError, UnsupportedFormatError

PCAP_MAGIC = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D  # nanosecond-timestamp variant; same layout
GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
LINKTYPE_ETHERNET = 1

_HEX = set(string.hexdigits)


@dataclass(frozen=True)
class RawPacket:
    data: bytes
    label: Optional[int] = None
    source_id: str = ""
    frame_index: int = 1

    def __post_init__(self):
        if len(self.data) < 1:
            raise ValueError("a packet holds at least one byte")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def n(self) -> int:
        return len(self.data)

    @property
    def key(self) -> Tuple[str, int]:
        return (self.source_id, self.frame_index)


@dataclass(frozen=True)
class DatasetSplit:
    train: List[RawPacket]
    validation: List[RawPacket]
    test: List[RawPacket]
    seed: int

    @property
    def sizes(self) -> Tuple[int, int, int]:
        return len(self.train), len(self.validation), len(self.test)


def _endianness(magic_bytes: bytes) -> str:
    for prefix in ("<", ">"):
        if struct.unpack(prefix + "I", magic_bytes)[0] in (PCAP_MAGIC, PCAP_MAGIC_NS):
            return prefix
    raise UnsupportedFormatError(f"not a classic PCAP file (magic {magic_bytes.hex()})")


def parse_pcap_bytes(blob: bytes, source_id: str = "") -> List[RawPacket]:
    if len(blob) < GLOBAL_HEADER_LEN:
        raise UnsupportedFormatError("missing PCAP global header")
    endian = _endianness(blob[:4])
    record = struct.Struct(endian + "IIII")
    packets = []
    offset = GLOBAL_HEADER_LEN
    frame = 0
    while offset < len(blob):
        frame += 1
        if offset + RECORD_HEADER_LEN > len(blob):
            raise TruncatedFileError(frame, "record header cut short")
        _, _, incl_len, _ = record.unpack_from(blob, offset)
        offset += RECORD_HEADER_LEN
        end = offset + incl_len
        if end > len(blob):
            raise TruncatedFileError(
                frame, f"record declares {incl_len} captured bytes but only {len(blob) - offset} remain")
        packets.append(RawPacket(bytes(blob[offset:end]), source_id=source_id, frame_index=frame))
        offset = end
    return packets


def read_pcap(path) -> List[RawPacket]:
    """Read every record of a classic PCAP file; labels are left unset."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_pcap_bytes(blob, source_id=os.path.basename(os.fspath(path)))


def write_pcap(path, packets: Sequence, linktype: int = LINKTYPE_ETHERNET, big_endian: bool = False):
    """Write packets (RawPacket or raw bytes) as a classic microsecond PCAP."""
    endian = ">" if big_endian else "<"
    with open(path, "wb") as fh:
        fh.write(struct.pack(endian + "IHHiIII", PCAP_MAGIC, 2, 4, 0, 0, 65535, linktype))
        for i, pkt in enumerate(packets):
            data = pkt.data if isinstance(pkt, RawPacket) else bytes(pkt)
            fh.write(struct.pack(endian + "IIII", i, 0, len(data), len(data)))
            fh.write(data)


def parse_hex_stream(text: str, source_id: str = "", frame_index: int = 1) -> RawPacket:
    """Decode a hex string (whitespace ignored, any case) into one packet."""
    digits = []
    for offset, ch in enumerate(text):
        if ch.isspace():
            continue
        if ch not in _HEX:
            raise ParseError(offset, f"non-hex character {ch!r}")
        digits.append(ch)
    if not digits:
        raise ParseError(0, "no hex digits")
    if len(digits) % 2:
        raise ParseError(len(text), f"odd number of hex digits ({len(digits)})")
    return RawPacket(bytes.fromhex("".join(digits)), source_id=source_id, frame_index=frame_index)


def to_hex(data: bytes) -> str:
    return bytes(data).hex()


def read_hex_file(path) -> List[RawPacket]:
    """One packet per non-blank line; frame indexes count packets, not lines."""
    source = os.path.basename(os.fspath(path))
    packets = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                packets.append(parse_hex_stream(line, source_id=source, frame_index=len(packets) + 1))
    return packets


def read_packets(path) -> List[RawPacket]:
    """Dispatch on content: PCAP magic means a capture, anything else a hex text file."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if len(head) == 4:
        try:
            _endianness(head)
        except UnsupportedFormatError:
            pass
        else:
            return read_pcap(path)
    return read_hex_file(path)


def parse_manifest(text: str) -> dict:
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise ManifestError(1, "empty manifest") from None
    if [h.strip() for h in header] != ["source_id", "frame_index", "label"]:
        raise ManifestError(1, f"expected header source_id,frame_index,label, got {','.join(header)}")
    table = {}
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 3:
            raise ManifestError(line, f"expected 3 fields, got {len(row)}")
        source, frame, label = (c.strip() for c in row)
        try:
            frame_i = int(frame)
            label_i = int(label)
        except ValueError:
            raise ManifestError(line, f"non-integer field in {row!r}") from None
        if label_i not in (0, 1):
            raise ManifestError(line, f"label must be 0 or 1, got {label_i}")
        key = (source, frame_i)
        if key in table:
            raise ManifestError(line, f"duplicate entry for {source} frame {frame_i}")
        table[key] = label_i
    return table


def load_labels(manifest, packets: Sequence[RawPacket]) -> List[RawPacket]:
    """Label packets from a ``source_id,frame_index,label`` CSV; unlisted packets are benign."""
    with open(manifest, "r", encoding="utf-8-sig", newline="") as fh:
        table = parse_manifest(fh.read())
    return [replace(p, label=table.get(p.key, 0)) for p in packets]


def split_dataset(packets: Sequence[RawPacket], ratios=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetSplit:
    """Seeded shuffle, then cut; validation/test get floor(r*N), train keeps the rest."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(math.fsum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must be three non-negative fractions summing to 1, got {ratios}")
    n = len(packets)
    if n < 3:
        raise ConfigurationError(f"need at least 3 packets to split, got {n}")
    n_val = math.floor(ratios[1] * n + 1e-9)
    n_test = math.floor(ratios[2] * n + 1e-9)
    order = np.random.default_rng(seed).permutation(n)
    shuffled = [packets[i] for i in order]
    n_train = n - n_val - n_test
    return DatasetSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
        seed=seed,
    )
