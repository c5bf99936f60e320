"""Corpus tooling: size filtering, performance augmentation and token shards.

Shard layout (little-endian)::

    b"PTSH"          magic
    u8               version (1)
    8 bytes          vocabulary checksum
    u64              sequence count S
    u64 * S          sequence lengths
    u16 * sum(len)   token ids
"""
from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .midi import NormalizedPiece, TimedNote
from .tokenizer import MAX_DURATION, MAX_IOI, VOCAB_SIZE, vocabulary_checksum

MIN_FILE_BYTES = 7 * 1024
SHARD_MAGIC = b"PTSH"
SHARD_VERSION = 1
SHARD_SUFFIX = ".ptsh"


class ShardError(ValueError):
    pass


class ChecksumMismatch(ShardError):
    pass


class CorruptShard(ShardError):
    pass


def filter_by_size(files: Iterable, min_bytes: int = MIN_FILE_BYTES) -> list:
    """Keep files strictly larger than ``min_bytes``."""
    return [f for f in files if os.path.getsize(f) > min_bytes]


def derive_seed(global_seed: int, file_id: str) -> int:
    """Per-file seed independent of processing order."""
    digest = hashlib.blake2b(f"{global_seed}:{file_id}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class AugmentParams:
    velocity_jitter: int = 8
    timing_jitter: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.velocity_jitter < 0 or not 0 <= self.timing_jitter < 1:
            raise ValueError("need velocity_jitter >= 0 and 0 <= timing_jitter < 1")


def augment(piece: NormalizedPiece, params: AugmentParams = AugmentParams(), seed: int | None = None) -> NormalizedPiece:
    """Independent per-note jitter of velocity, duration and inter-onset gaps.

    Velocities move by a uniform integer in ``[-d, d]`` (clamped to 1..127);
    durations and gaps are scaled by ``1 + u``, ``u`` uniform in ``[-p, p]``.
    Onsets are rebuilt from the scaled gaps. Results stay inside the token
    ranges; the pedal curve is left unchanged.
    """
    rng = np.random.default_rng(params.seed if seed is None else seed)
    notes = piece.notes
    n = len(notes)
    if n == 0:
        return piece
    d, p = params.velocity_jitter, params.timing_jitter
    dv = rng.integers(-d, d + 1, size=n)
    dur_scale = 1.0 + rng.uniform(-p, p, size=n)
    gap_scale = 1.0 + rng.uniform(-p, p, size=n)
    if d == 0 and p == 0:
        return piece
    out = []
    onset = notes[0].onset_ms
    for i, note in enumerate(notes):
        if i:
            gap = note.onset_ms - notes[i - 1].onset_ms
            onset += float(min(gap * gap_scale[i], max(gap, MAX_IOI)))
        vel = int(min(max(note.velocity + dv[i], 1), 127))
        dur = float(min(max(note.duration_ms * dur_scale[i], 1.0), max(note.duration_ms, MAX_DURATION)))
        out.append(TimedNote(note.pitch, vel, onset, dur))
    return NormalizedPiece(tuple(out), piece.pedal)


def _encode_shard(seqs: Sequence[np.ndarray], checksum: bytes) -> bytes:
    lengths = [len(s) for s in seqs]
    head = SHARD_MAGIC + struct.pack("<B", SHARD_VERSION) + checksum + struct.pack("<Q", len(seqs))
    head += struct.pack(f"<{len(seqs)}Q", *lengths)
    payload = np.concatenate(seqs).astype("<u2").tobytes() if seqs else b""
    return head + payload


def write_shards(
    seqs: Sequence,
    path,
    max_tokens_per_shard: int = 1 << 24,
    checksum: bytes | None = None,
) -> list[Path]:
    """Write sequences to ``path/shard-NNNNN.ptsh``; splits only between sequences.

    A sequence longer than the limit gets a shard to itself.
    """
    checksum = vocabulary_checksum() if checksum is None else checksum
    if len(checksum) != 8:
        raise ValueError("checksum must be 8 bytes")
    arrays = []
    for s in seqs:
        a = np.asarray(s, dtype=np.int64)
        if len(a) and (a.min() < 0 or a.max() >= VOCAB_SIZE):
            raise ShardError("token id outside the vocabulary")
        arrays.append(a)
    out_dir = Path(path)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups: list[list[np.ndarray]] = [[]]
    used = 0
    for a in arrays:
        if groups[-1] and used + len(a) > max_tokens_per_shard:
            groups.append([])
            used = 0
        groups[-1].append(a)
        used += len(a)
    written = []
    for i, group in enumerate(groups):
        target = out_dir / f"shard-{i:05d}{SHARD_SUFFIX}"
        target.write_bytes(_encode_shard(group, checksum))
        written.append(target)
    return written


def read_shard(path, checksum: bytes | None = None) -> list[np.ndarray]:
    checksum = vocabulary_checksum() if checksum is None else checksum
    data = Path(path).read_bytes()
    if len(data) < 21 or data[:4] != SHARD_MAGIC:
        raise CorruptShard(f"{path}: bad magic or truncated header")
    if data[4] != SHARD_VERSION:
        raise CorruptShard(f"{path}: unsupported version {data[4]}")
    if data[5:13] != checksum:
        raise ChecksumMismatch(f"{path}: written under a different vocabulary layout")
    (count,) = struct.unpack("<Q", data[13:21])
    table_end = 21 + 8 * count
    if table_end > len(data):
        raise CorruptShard(f"{path}: length table truncated")
    lengths = struct.unpack(f"<{count}Q", data[21:table_end])
    if table_end + 2 * sum(lengths) != len(data):
        raise CorruptShard(f"{path}: payload size does not match the length table")
    tokens = np.frombuffer(data, dtype="<u2", offset=table_end).astype(np.int64)
    if len(tokens) and tokens.max() >= VOCAB_SIZE:
        raise CorruptShard(f"{path}: token id outside the vocabulary")
    bounds = np.cumsum((0,) + lengths)
    return [tokens[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def read_shards(path, checksum: bytes | None = None) -> list[np.ndarray]:
    """All sequences of a shard directory (or a single shard file), in write order."""
    path = Path(path)
    files = sorted(path.glob(f"*{SHARD_SUFFIX}")) if path.is_dir() else [path]
    out = []
    for f in files:
        out.extend(read_shard(f, checksum))
    return out
