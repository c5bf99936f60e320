"""
Masked denoising on a tiny encoder-decoder
==========================================

Thirty percent of a token sequence is replaced by MASK; the model reads the
corrupted sequence (compressed to one vector per note) and reconstructs the
original. Only masked positions count towards the loss.
"""

import math

import numpy as np

from pianist import model as M, tokenizer as tk
from pianist.cli import toy_corpus

seq = toy_corpus(4)
example = tk.corrupt_for_pretraining(seq, ratio=0.3, seed=0)
print("encoder input :", example.encoder_input.tolist())
print("masked slots  :", int((example.encoder_input == tk.MASK).sum()), "of", len(seq))

model = M.init(M.TOY_CONFIG, seed=0)
print("toy parameters:", sum(p.size for p in model.params.values()))

# An untrained model is close to uniform over the vocabulary.
start = M.example_loss(model, example).loss
print(f"initial loss {start:.3f}  (ln 5389 = {math.log(5389):.3f})")

trace = M.train_steps(model, [example], M.OptimizerConfig(peak_lr=3e-3), steps=300)
for step in (0, 25, 50, 100, 200, 299):
    print(f"step {step:4d}  loss {trace[step]:.4f}")

# Memory rows: one per note, not one per token.
memory = M.encode_memory(model, example.encoder_input)
print("encoder memory shape:", memory.shape, "for", len(seq), "tokens")

# Gradients come from hand-written backward passes; spot-check one weight.
m64 = model.astype(np.float64)
_, grads = M.backward(m64, example)
w = m64.params["lm_head"]
h = 1e-5
w[3, 10] += h
up = M.example_loss(m64, example).loss
w[3, 10] -= 2 * h
down = M.example_loss(m64, example).loss
w[3, 10] += h
print(f"analytic {grads['lm_head'][3, 10]:.6e}  finite difference {(up - down) / (2 * h):.6e}")
