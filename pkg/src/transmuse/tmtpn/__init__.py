from .checkpoint import load_checkpoint, save_checkpoint
from .estimator import TMTPNForecaster
from .model import (
    MultiHeadAttention,
    TmtpnConfig,
    TmtpnModel,
    attention_weights,
    forecast,
    forward_train,
    look_ahead_mask,
    persistence_baseline,
    positional_encoding,
    scaled_dot_attention,
)
from .training import TrainLog, train

__all__ = [
    "MultiHeadAttention",
    "TMTPNForecaster",
    "TmtpnConfig",
    "TmtpnModel",
    "TrainLog",
    "attention_weights",
    "forecast",
    "forward_train",
    "load_checkpoint",
    "look_ahead_mask",
    "persistence_baseline",
    "positional_encoding",
    "save_checkpoint",
    "scaled_dot_attention",
    "train",
]
