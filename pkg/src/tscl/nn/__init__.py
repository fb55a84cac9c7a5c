from .tensor import Tensor, concat, conv1d, l2_normalize, logsumexp
from .layers import BatchNorm1d, Conv1d, Dropout, Linear
from .models import (
    ClassifierHead,
    Encoder,
    EncoderConfig,
    PredictorHead,
    ProjectionHead,
)
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "Tensor", "concat", "conv1d", "l2_normalize", "logsumexp",
    "BatchNorm1d", "Conv1d", "Dropout", "Linear",
    "ClassifierHead", "Encoder", "EncoderConfig", "PredictorHead", "ProjectionHead",
    "CheckpointError", "load_checkpoint", "save_checkpoint",
]
