from .accounting import (
    ParameterBreakdown,
    attention_cost,
    count_parameters,
    decoder_step_cost,
    parameter_breakdown,
)
from .training import AdamW, OptimizerConfig, learning_rate, train_steps
from .transformer import (
    FULL_CONFIG,
    TOY_CONFIG,
    BadShape,
    EmptyMask,
    InvalidConfig,
    LossReport,
    Model,
    ModelConfig,
    aggregate_notes,
    attention_maps,
    backward,
    encode_memory,
    example_loss,
    forward,
    init,
    loss,
    parameter_shapes,
    teacher_forcing,
)

__all__ = [
    "AdamW",
    "BadShape",
    "EmptyMask",
    "InvalidConfig",
    "LossReport",
    "Model",
    "ModelConfig",
    "OptimizerConfig",
    "FULL_CONFIG",
    "ParameterBreakdown",
    "TOY_CONFIG",
    "aggregate_notes",
    "attention_cost",
    "attention_maps",
    "backward",
    "count_parameters",
    "decoder_step_cost",
    "encode_memory",
    "example_loss",
    "forward",
    "init",
    "learning_rate",
    "loss",
    "parameter_breakdown",
    "parameter_shapes",
    "teacher_forcing",
    "train_steps",
]
