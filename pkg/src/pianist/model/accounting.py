"""Closed-form parameter counts and multiply-accumulate (MAC) accounting.

Parameter breakdown for hidden size d, FFN size f, vocabulary V, encoder
layers E and decoder layers D (attention width is ``heads * head_dim = d``):

    embedding            V * d
    note aggregation     8 * d * d
    encoder layer        4 d^2 (q, k, v, o) + 3 d f (gated FFN) + 2 d (norms)
    encoder final norm   d
    decoder layer        8 d^2 (self + cross) + 3 d f + 3 d
    decoder final norm   d
    output projection    d * V

For d=768, f=3072, E=10, D=2, V=5389 this is 130,982,400.
"""
from __future__ import annotations

from dataclasses import dataclass

from .transformer import FULL_CONFIG, ModelConfig

COMPRESSION = 8


@dataclass(frozen=True)
class ParameterBreakdown:
    embedding: int
    aggregation: int
    encoder: int
    decoder: int
    norms: int
    output: int

    @property
    def total(self) -> int:
        return self.embedding + self.aggregation + self.encoder + self.decoder + self.norms + self.output


def parameter_breakdown(config: ModelConfig) -> ParameterBreakdown:
    config.validate()
    d, f, v = config.hidden_size, config.ffn_size, config.vocab_size
    e, k = config.encoder_layers, config.decoder_layers
    return ParameterBreakdown(
        embedding=v * d,
        aggregation=COMPRESSION * d * d,
        encoder=e * (4 * d * d + 3 * d * f),
        decoder=k * (8 * d * d + 3 * d * f),
        norms=e * 2 * d + k * 3 * d + 2 * d,
        output=d * v,
    )


def count_parameters(config: ModelConfig) -> int:
    return parameter_breakdown(config).total


def attention_cost(
    seq_len_tokens: int,
    layers: int,
    compressed: bool,
    heads: int = FULL_CONFIG.heads,
    head_dim: int = FULL_CONFIG.head_dim,
) -> int:
    """Self-attention MACs: score (QK^T) plus value-weighting (PV) terms.

    ``layers * heads * 2 * L^2 * head_dim`` with ``L = N`` or ``N / 8``.
    """
    if compressed:
        if seq_len_tokens % COMPRESSION:
            raise ValueError(f"sequence length {seq_len_tokens} is not a multiple of {COMPRESSION}")
        length = seq_len_tokens // COMPRESSION
    else:
        length = seq_len_tokens
    return layers * heads * 2 * length * length * head_dim


def decoder_step_cost(
    layers: int,
    prefix_len: int,
    memory_len: int,
    hidden_size: int = FULL_CONFIG.hidden_size,
    ffn_size: int = FULL_CONFIG.ffn_size,
) -> int:
    """MACs spent in decoder layers to produce one token with cached keys/values.

    Per layer: self-attention projections (4 d^2) and attention over the
    prefix (2 d P), cross-attention query/output projections (2 d^2) and
    attention over the memory (2 d M), and the gated FFN (3 d f).
    """
    d = hidden_size
    per_layer = 4 * d * d + 2 * d * prefix_len + 2 * d * d + 2 * d * memory_len + 3 * d * ffn_size
    return layers * per_layer
