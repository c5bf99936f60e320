"""
Rendering a score longer than the context window
================================================

Generation fills one performance frame per score frame. Pitch slots are
copied from the score, and every other slot is sampled only from its own
token range. Scores past 4096 tokens are processed in overlapping windows.
"""

import numpy as np

from pianist import inference as inf, model as M, tokenizer as tk
from pianist.midi import NormalizedPiece, TimedNote

rng = np.random.default_rng(3)
notes = []
t = 0.0
for i in range(700):
    notes.append(TimedNote(int(rng.integers(36, 96)), int(rng.integers(30, 110)), t, float(rng.integers(80, 600))))
    t += float(rng.choice([125, 250, 375]))
score = tk.encode(NormalizedPiece(tuple(notes)))
block = inf.BlockConfig()
print(f"score: {len(score)} tokens, windows start at {inf.block_starts(len(score), block)}")
print(f"later windows are prompted with {block.prompt_tokens} tokens of earlier output")

# The mechanical stub copies timing and plays everything at velocity 64.
stub = inf.StubPerformer()
whole = inf.blockwise_generate(stub, score, block)
single = inf.constrained_generate(stub, score)
print("blockwise == single pass for the stub:", np.array_equal(whole, single))

# A randomly initialized transformer still cannot change a pitch.
performer = inf.TransformerPerformer(M.init(M.TOY_CONFIG, seed=1))
short = score[:8 * 12]
out = inf.constrained_generate(performer, short, inf.SamplingConfig(temperature=1.0, top_k=32, seed=5))
print("pitches kept:", np.array_equal(tk.frames(out)[:, 0], tk.frames(short)[:, 0]))
print("sampled velocities:", tk.frames(out)[:, 2].tolist())
