"""
What compression buys
=====================

Encoder attention runs over notes instead of tokens. With eight tokens per
note that shrinks the quadratic term by 64. The full-size configuration has
about 131M parameters.
"""

from pianist import model as M

cfg = M.FULL_CONFIG
print(f"hidden {cfg.hidden_size}, ffn {cfg.ffn_size}, encoder {cfg.encoder_layers}, "
      f"decoder {cfg.decoder_layers}, heads {cfg.heads} x {cfg.head_dim}")

for n in (64, 1024, 4096):
    full = M.attention_cost(n, cfg.encoder_layers, compressed=False)
    comp = M.attention_cost(n, cfg.encoder_layers, compressed=True)
    print(f"N={n:5d}: {full:>15,} vs {comp:>13,} MACs  ratio {full // comp}")

b = M.parameter_breakdown(cfg)
for field, value in b.__dict__.items():
    print(f"  {field:12s} {value:>12,}")
print(f"  {'total':12s} {b.total:>12,}")

# A shallow decoder costs a third as much per generated token as a six-layer one.
two, six = M.decoder_step_cost(2, 2048, 512), M.decoder_step_cost(6, 2048, 512)
print(f"decoder step: 2 layers {two:,} MACs, 6 layers {six:,} MACs, ratio {six / two:g}")
