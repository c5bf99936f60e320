"""
From MIDI bytes to note tokens and back
=======================================

A short phrase is written as a Standard MIDI File, parsed again, flattened
to milliseconds and turned into eight tokens per note.
"""

import numpy as np

from pianist import midi, tokenizer as tk

# A C-major arpeggio with the sustain pedal held through the first half.
phrase = midi.NormalizedPiece(
    tuple(midi.TimedNote(p, 70 + 5 * i, 250.0 * i, 400.0) for i, p in enumerate([60, 64, 67, 72])),
    pedal=((0.0, 127), (500.0, 0)),
)

# Bytes on disk use ticks; at 120 BPM and 480 ticks per quarter a tick is ~1.04 ms.
data = midi.write_smf(midi.to_midi(phrase, ppq=480))
print(f"SMF size: {len(data)} bytes, header {data[:4]!r}")

parsed = midi.parse_smf(data)
print("parsed notes (ticks):", parsed.notes)

# Score mode ignores tempo events and maps ticks straight onto the 120 BPM grid.
flat = midi.normalize(parsed, "score")
for n in flat.notes:
    print(f"  pitch {n.pitch:3d}  vel {n.velocity:3d}  onset {n.onset_ms:7.2f} ms  dur {n.duration_ms:6.2f} ms")

# Each note becomes [pitch, IOI, velocity, duration, pedal x4].
seq = tk.encode(phrase)
print("token ids:", seq.reshape(-1, tk.TOKENS_PER_NOTE))
print("as values:\n", tk.frames(seq))

# The pedal is sampled at quarter points of the gap to the next note, so the
# first two notes see it down and the last two see it up.
back = tk.decode(seq)
assert back.notes == phrase.notes
print("decode(encode(p)) reproduces the notes:", back.notes == phrase.notes)
print("vocabulary:", tk.VOCAB_SIZE, "ids, checksum", tk.vocabulary_checksum().hex())
