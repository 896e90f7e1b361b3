"""Minimal numpy CNN engine for the fixed layer grammar."""
from .augment import augment, augment_batch, rotate_batch
from .layers import (
    accuracy,
    backward,
    cross_entropy,
    forward,
    init_weights,
    predict_proba,
    softmax,
)
from .serialize import dumps_weights, load_weights, loads_weights, save_weights
from .training import EvaluationResult, TrainerConfig, initial_model, train_and_evaluate

__all__ = [
    "EvaluationResult", "TrainerConfig", "accuracy", "augment", "augment_batch", "backward",
    "cross_entropy", "dumps_weights", "forward", "init_weights", "initial_model",
    "load_weights", "loads_weights", "predict_proba", "rotate_batch", "save_weights",
    "softmax", "train_and_evaluate",
]
