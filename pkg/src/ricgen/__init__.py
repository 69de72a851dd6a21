"""Sequence-regression models for predicting post-compaction cone-resistance
profiles from pre-compaction soil profiles and compaction features."""

from .tensor import Adam, ShapeError, Tensor, concat, mse_loss, softmax
from .models import KINDS, FF_KINDS, SEQ2SEQ_KINDS, ModelSpec, build_model

__version__ = "0.1.0"

__all__ = [
    "Adam", "ShapeError", "Tensor", "concat", "mse_loss", "softmax",
    "KINDS", "FF_KINDS", "SEQ2SEQ_KINDS", "ModelSpec", "build_model",
]
