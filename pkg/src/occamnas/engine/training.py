"""Mini-batch Adam training that reports the best validation accuracy."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..archspace import ArchDescriptor
from ..exceptions import EvaluationFailed
from .augment import augment_batch
from .layers import accuracy, backward, cross_entropy, forward, init_weights, trainable_names

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    batch_size: int = 128
    validation_split: float = 0.2
    seed: int = 0
    hflip: bool = True
    rotation_degrees: float = 15.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-7

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 < self.validation_split < 1:
            raise ValueError("validation_split must lie in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EvaluationResult:
    max_val_accuracy: float
    history: list = field(default_factory=list)  # (epoch, train_loss, val_accuracy)
    final_weights: dict = field(default_factory=dict, repr=False)
    best_epoch: int = 0

    def history_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for epoch, loss, acc in self.history:
            writer.writerow([epoch, repr(float(loss)), repr(float(acc))])
        return buf.getvalue()


class Adam:
    def __init__(self, params: dict, names, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-7):
        self.names = list(names)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}
        self.t = 0

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        if self.lr == 0:
            return
        b1, b2 = self.beta1, self.beta2
        lr_t = self.lr * np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        for n in self.names:
            g = grads[n]
            m, v = self.m[n], self.v[n]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[n] -= (lr_t * m / (np.sqrt(v) + self.eps)).astype(params[n].dtype)


def calibrate_input_norm(arch: ArchDescriptor, weights: dict, images) -> None:
    """Set the input normalization's moving statistics to the training-set moments."""
    images = np.asarray(images, dtype=np.float64) / 255.0
    for i, layer in enumerate(arch.layers):
        if layer.kind == "batchnorm_input":
            dtype = weights[f"{i}.moving_mean"].dtype
            weights[f"{i}.moving_mean"] = images.mean(axis=(0, 1, 2)).astype(dtype)
            weights[f"{i}.moving_var"] = images.var(axis=(0, 1, 2)).astype(dtype)


def initial_model(arch: ArchDescriptor, train_images, seed: int, dtype=np.float32) -> dict:
    weights = init_weights(arch, np.random.default_rng(seed), dtype)
    calibrate_input_norm(arch, weights, train_images)
    return weights


def train_and_evaluate(arch: ArchDescriptor, train_set, val_set, config: TrainerConfig,
                       seed: int | None = None, progress=None) -> EvaluationResult:
    """Train ``arch`` from scratch and track validation accuracy after every epoch.

    ``train_set``/``val_set`` are ``(images, labels)`` pairs with images shaped
    (n, s, s, ch) in raw pixel units. The returned weights are those of the
    epoch with the highest validation accuracy (earliest on ties).
    """
    x_train, y_train = (np.asarray(a) for a in train_set)
    x_val, y_val = (np.asarray(a) for a in val_set)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    for y in (y_train, y_val):
        if y.min() < 0 or y.max() >= arch.num_classes:
            raise ValueError(f"labels must lie in [0, {arch.num_classes})")
    seed = config.seed if seed is None else seed
    init_seed, shuffle_seed, aug_seed = np.random.SeedSequence(seed).spawn(3)
    weights = initial_model(arch, x_train, init_seed)
    names = trainable_names(weights)
    opt = Adam(weights, names, config.learning_rate, config.beta1, config.beta2, config.adam_epsilon)
    order_rng = np.random.default_rng(shuffle_seed)
    aug_rng = np.random.default_rng(aug_seed)
    x_train = x_train.astype(np.float32, copy=False)

    history = []
    best_acc, best_epoch, best_weights = -1.0, 0, None
    n = len(x_train)
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = x_train[idx]
            if config.hflip or config.rotation_degrees:
                xb = augment_batch(xb, aug_rng, config.rotation_degrees, config.hflip)
            try:
                probs, cache = forward(arch, weights, xb, mode="train")
                grads = backward(arch, weights, cache, y_train[idx])
            except EvaluationFailed as exc:
                raise EvaluationFailed(f"training diverged at epoch {epoch}: {exc}") from exc
            loss = cross_entropy(probs, y_train[idx])
            if not np.isfinite(loss):
                raise EvaluationFailed(f"non-finite loss at epoch {epoch}")
            total += loss * len(idx)
            seen += len(idx)
            opt.step(weights, grads)
        val_acc = accuracy(arch, weights, x_val, y_val)
        history.append((epoch, total / seen, val_acc))
        if val_acc > best_acc:
            best_acc, best_epoch = val_acc, epoch
            best_weights = {k: v.copy() for k, v in weights.items()}
        logger.debug("%s epoch %d loss %.4f val_acc %.4f", arch.point, epoch, total / seen, val_acc)
        if progress is not None:
            progress(epoch, total / seen, val_acc)
    return EvaluationResult(best_acc, history, best_weights, best_epoch)
