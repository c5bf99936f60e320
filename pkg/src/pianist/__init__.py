"""Score-to-performance piano rendering toolkit.

Modules: :mod:`~pianist.midi` (SMF I/O and normalization),
:mod:`~pianist.tokenizer` (8 tokens per note), :mod:`~pianist.model`
(note-compressing encoder-decoder in numpy), :mod:`~pianist.inference`
(pitch-constrained block-wise rendering), :mod:`~pianist.tempo_map`
(tempo-mapped MIDI export), :mod:`~pianist.metrics` and
:mod:`~pianist.corpus`.
"""
__version__ = "0.1.0"
