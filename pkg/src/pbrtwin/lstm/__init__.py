"""From-scratch LSTM sequence-regression stack."""

from .network import LstmConfig, LstmModel
from .adam import AdamState, adam_step, learning_rate
from .training import EarlyStopper, EvalResult, evaluate, kfold_tune, train
from .checkpoint import (
    load_model,
    load_registry,
    save_learning_curve,
    save_model,
    save_registry,
)

__all__ = [
    "AdamState",
    "EarlyStopper",
    "EvalResult",
    "LstmConfig",
    "LstmModel",
    "adam_step",
    "evaluate",
    "kfold_tune",
    "learning_rate",
    "load_model",
    "load_registry",
    "save_learning_curve",
    "save_model",
    "save_registry",
    "train",
]
