"""Small numpy neural-network kernel: LSTM and CNN regressors trained with Adam."""

from .checkpoint import load_checkpoint, save_checkpoint
from .cnn import Cnn, CnnSpec
from .core import (
    Adam,
    TrainConfig,
    TrainingDivergenceError,
    backprop_and_step,
    evaluate,
    fit,
    mse,
)
from .lstm import Lstm, LstmSpec


def lstm_forward(model: Lstm, sequence, train: bool = False, rng=None):
    return model.forward(sequence, train=train, rng=rng)[0]


def cnn_forward(model: Cnn, x):
    return model.forward(x)[0]


__all__ = [
    "Adam",
    "Cnn",
    "CnnSpec",
    "Lstm",
    "LstmSpec",
    "TrainConfig",
    "TrainingDivergenceError",
    "backprop_and_step",
    "cnn_forward",
    "evaluate",
    "fit",
    "load_checkpoint",
    "lstm_forward",
    "mse",
    "save_checkpoint",
]
