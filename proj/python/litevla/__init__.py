"""Python bindings for the litevla core library."""

from ._core import (
    ActionParseError,
    CheckpointError,
    InvariantError,
    NF4Tensor,
    Policy,
    QuantizationError,
    SafetyError,
    SplitError,
    SyncError,
    double_quantize_scales,
    nf4_codebook,
    parse_action,
    quantize_nf4,
    render_scene,
    run_expert_episode,
    serialize_action,
    stratified_split,
    synchronize,
    to_velocity,
    velocity_to_class,
)

__all__ = [
    "ActionParseError",
    "CheckpointError",
    "NF4Tensor",
    "Policy",
    "QuantizationError",
    "InvariantError",
    "SafetyError",
    "SplitError",
    "SyncError",
    "double_quantize_scales",
    "nf4_codebook",
    "parse_action",
    "quantize_nf4",
    "render_scene",
    "run_expert_episode",
    "serialize_action",
    "stratified_split",
    "synchronize",
    "to_velocity",
    "velocity_to_class",
]
