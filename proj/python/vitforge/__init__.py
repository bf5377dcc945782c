"""Vision Transformer fine-tuning toolkit."""

from ._vitforge import (
    CheckpointError,
    Error,
    ShapeError,
    ValidationError,
    ViTConfig,
    binary_metrics,
    count_parameters,
    forward,
    init_params,
    kfold_split,
    load_checkpoint,
    roc_auc,
    save_checkpoint,
    tensor_manifest,
)

__all__ = [
    "CheckpointError",
    "Error",
    "ShapeError",
    "ValidationError",
    "ViTConfig",
    "binary_metrics",
    "count_parameters",
    "forward",
    "init_params",
    "kfold_split",
    "load_checkpoint",
    "roc_auc",
    "save_checkpoint",
    "tensor_manifest",
]
