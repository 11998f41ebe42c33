"""Python access to the dladapter core: geometry, consensus, EMA, losses,
synthetic pages and checkpoint inference."""

from ._core import (
    Box,
    ConfigError,
    ContractViolation,
    Detection,
    EvaluationError,
    IngestionError,
    IoError,
    NumericError,
    adapt_config_defaults,
    categories,
    contrastive_loss,
    ema_update,
    entropy_loss,
    fuse,
    generate_page,
    infer,
    iou,
    nms,
    soft_kl_distill,
    source_config_defaults,
)

__all__ = [
    "Box",
    "ConfigError",
    "ContractViolation",
    "Detection",
    "EvaluationError",
    "IngestionError",
    "IoError",
    "NumericError",
    "adapt_config_defaults",
    "categories",
    "contrastive_loss",
    "ema_update",
    "entropy_loss",
    "fuse",
    "generate_page",
    "infer",
    "iou",
    "nms",
    "soft_kl_distill",
    "source_config_defaults",
]
