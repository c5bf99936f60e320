"""
Preparing a training corpus
===========================

Pieces are jittered for augmentation, tokenized and packed into binary
shards stamped with the vocabulary checksum.
"""

import tempfile
from pathlib import Path

import numpy as np

from pianist import corpus, tokenizer as tk
from pianist.midi import NormalizedPiece, TimedNote

base = NormalizedPiece(tuple(TimedNote(60 + i % 12, 80, 200.0 * i, 180.0) for i in range(24)))

params = corpus.AugmentParams(velocity_jitter=8, timing_jitter=0.05)
variants = []
for name in ("etude.mid", "nocturne.mid", "prelude.mid"):
    seed = corpus.derive_seed(0, name)
    variants.append(corpus.augment(base, params, seed))
    first = variants[-1].notes[:3]
    print(name, "seed", seed, [(n.velocity, round(n.onset_ms, 1)) for n in first])

seqs = [tk.encode(v) for v in variants]
with tempfile.TemporaryDirectory() as tmp:
    files = corpus.write_shards(seqs, tmp, max_tokens_per_shard=400)
    for f in files:
        print(f"{Path(f).name}: {Path(f).stat().st_size} bytes")
    back = corpus.read_shards(tmp)
    print("round trip identical:", all(np.array_equal(a, b) for a, b in zip(back, seqs)))
    try:
        corpus.read_shards(tmp, checksum=b"\0" * 8)
    except corpus.ChecksumMismatch as exc:
        print("stale vocabulary rejected:", exc)
