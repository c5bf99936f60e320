"""
Comparing performance distributions
===================================

Two sets of token sequences are reduced to histograms per dimension and
compared with Jensen-Shannon divergence (base 2) and intersection area.
"""

import numpy as np

from pianist import inference as inf, metrics as mt, tokenizer as tk
from pianist.midi import NormalizedPiece, TimedNote

print("JS([.5,.5], [1,0]) =", round(mt.js_divergence([0.5, 0.5], [1.0, 0.0]), 5))
print("intersection       =", mt.intersection_area([0.5, 0.5], [1.0, 0.0]))

rng = np.random.default_rng(0)


def human_take(seed):
    r = np.random.default_rng(seed)
    notes, t = [], 0.0
    for i in range(80):
        notes.append(TimedNote(48 + i % 36, int(np.clip(r.normal(70, 15), 1, 127)), t, float(r.integers(100, 500))))
        t += float(r.normal(250, 30))
    pedal = tuple((float(k * 1000 + r.integers(0, 200)), 127 if k % 2 == 0 else 0) for k in range(20))
    return tk.encode(NormalizedPiece(tuple(notes), pedal))


refs = [human_take(s) for s in range(4)]
stub = [inf.stub_render(r) for r in refs]

print("\nexact copy vs references")
print(mt.evaluate_testset([r.copy() for r in refs], refs).to_text())
print("mechanical stub vs references")
report = mt.evaluate_testset(stub, refs)
print(report.to_text())
print(report.to_csv("stub"))

# Leave-one-out: each take against the other takes of the same piece.
print("human baseline over two pieces with two takes each")
print(mt.human_baseline([[refs[0], refs[1]], [refs[2], refs[3]]]).to_text())
