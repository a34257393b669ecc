from polyglot_probe.model.checkpoint import (
    CheckpointError,
    ShapeMismatchError,
    load_checkpoint,
    save_checkpoint,
)
from polyglot_probe.model.config import ModelConfig
from polyglot_probe.model.training import (
    GradCheckResult,
    TrainConfig,
    TrainingError,
    TrainResult,
    gradient_check,
    train,
)
from polyglot_probe.model.transformer import (
    ActivationTrace,
    ForwardResult,
    ResidualTrace,
    ToyTransformer,
    forward_batch,
    forward_with_taps,
    init_model,
)

__all__ = [
    "ActivationTrace",
    "CheckpointError",
    "ForwardResult",
    "GradCheckResult",
    "ModelConfig",
    "ResidualTrace",
    "ShapeMismatchError",
    "ToyTransformer",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "forward_batch",
    "forward_with_taps",
    "gradient_check",
    "init_model",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
