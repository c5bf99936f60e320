"""
Moving performance timing into a tempo track
============================================

A performance in milliseconds is stored against the score's beat grid: notes
keep their score positions in ticks and the rubato lives in tempo events.
"""

from pianist import midi, tempo_map as tm
from pianist.midi import NormalizedPiece, TimedNote

score = NormalizedPiece(tuple(TimedNote(60 + i, 80, 500.0 * i, 400.0) for i in range(6)))

# A ritardando: each beat takes a little longer than the one before.
gaps = [500, 550, 650, 800, 1000]
onsets = [0.0]
for g in gaps:
    onsets.append(onsets[-1] + g)
perf = NormalizedPiece(tuple(n._replace(onset_ms=o, velocity=60 + 8 * i)
                             for i, (n, o) in enumerate(zip(score.notes, onsets))))

pair = tm.AlignedPair(score, perf)
curve = tm.estimate_tempo_curve(pair, ppq=480)
for tick, bpm in curve.breakpoints:
    print(f"tick {tick:6.0f}: {bpm:6.2f} BPM")

out = tm.expressive_tempo_map(pair, ppq=480)
print("tempo events (tick, us/quarter):", out.tempo_events)
for n, p in zip(out.tracks[0].notes, perf.notes):
    wall = midi.render_wallclock(n.onset, out.tempo_events, out.ppq)
    print(f"  tick {n.onset:5d} -> {wall:8.2f} ms (performed at {p.onset_ms:7.1f} ms)")

# The result is ordinary MIDI.
data = midi.write_smf(out)
print("written:", len(data), "bytes; re-read equal:", midi.parse_smf(data) == out)
