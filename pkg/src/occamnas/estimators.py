"""scikit-learn compatible estimators wrapping the engine and the search."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .archspace import InputShape, SearchPoint, build_architecture
from .dataio import Dataset, split
from .engine.layers import predict_proba as _predict_proba
from .engine.training import TrainerConfig, train_and_evaluate
from .resmodel import HardwareTarget, SizingConfig, resource_report, target_preset
from .search import SearchConfig, TrainerEvaluator, candidate_seed, run_search


def check_images(X, y=None):
    """Validate an image batch and return it as float32 (n, s, s, ch).

    Accepts (n, s, s) grayscale or (n, s, s, ch) with ch in {1, 3}; values are
    raw pixel intensities in [0, 255].
    """
    if y is not None:
        X, y = check_X_y(X, y, allow_nd=True, dtype=np.float32, ensure_min_samples=2)
    else:
        X = check_array(X, allow_nd=True, dtype=np.float32)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4:
        raise ValueError(f"expected images shaped (n, s, s[, ch]); got {X.shape}")
    if X.shape[1] != X.shape[2]:
        raise ValueError(f"images must be square, got {X.shape[1]}x{X.shape[2]}")
    if X.shape[3] not in (1, 3):
        raise ValueError(f"images must have 1 or 3 channels, got {X.shape[3]}")
    return X if y is None else (X, y)


def _trainer_config(est) -> TrainerConfig:
    return TrainerConfig(
        epochs=est.epochs, learning_rate=est.learning_rate, batch_size=est.batch_size,
        validation_split=est.validation_split, seed=est.seed, hflip=est.hflip,
        rotation_degrees=est.rotation_degrees,
    )


def _encode(est, X, y):
    X, y = check_images(X, y)
    est.classes_ = unique_labels(y)
    if len(est.classes_) < 2:
        raise ValueError("need at least two classes")
    y_enc = np.searchsorted(est.classes_, y)
    est.n_features_in_ = int(np.prod(X.shape[1:]))
    est.input_shape_ = InputShape(X.shape[1], X.shape[3])
    return X, y_enc


def _train_val(est, X, y_enc):
    names = [str(c) for c in est.classes_]
    train, val = split(Dataset(X, y_enc, names), est.validation_split, seed=est.seed)
    return (train.images, train.labels), (val.images, val.labels)


class _ImageClassifierMixin(ClassifierMixin):
    def _check_input(self, X):
        check_is_fitted(self, "weights_")
        X = check_images(X)
        if X.shape[1:] != self.arch_.input.hwc:
            raise ValueError(f"expected images of shape {self.arch_.input.hwc}, got {X.shape[1:]}")
        return X

    def predict_proba(self, X):
        X = self._check_input(X)
        return _predict_proba(self.arch_, self.weights_, X)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


class CNNClassifier(_ImageClassifierMixin, BaseEstimator):
    """Train a single architecture ``(k, c)`` from the search space.

    A stratified ``validation_split`` of the training data is held out; the
    stored weights are those of the epoch with the best validation accuracy.
    """

    def __init__(self, k=4, c=0, epochs=100, learning_rate=1e-3, batch_size=128,
                 validation_split=0.2, hflip=True, rotation_degrees=15.0, seed=0):
        self.k = k
        self.c = c
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.validation_split = validation_split
        self.hflip = hflip
        self.rotation_degrees = rotation_degrees
        self.seed = seed

    def fit(self, X, y):
        X, y_enc = _encode(self, X, y)
        self.arch_ = build_architecture(SearchPoint(self.k, self.c), self.input_shape_, len(self.classes_))
        train, val = _train_val(self, X, y_enc)
        result = train_and_evaluate(self.arch_, train, val, _trainer_config(self))
        self.weights_ = result.final_weights
        self.history_ = result.history
        self.best_val_accuracy_ = result.max_val_accuracy
        return self


class OccamNASClassifier(_ImageClassifierMixin, BaseEstimator):
    """Search the smallest adequate CNN under a hardware budget, then predict with it.

    Parameters
    ----------
    target : str or HardwareTarget
        Preset name (``"L0"``, ``"L1"``, ``"L4"``) or explicit bounds.
    k0 : int
        First-layer kernel count of the starting point.
    epsilon : float
        Minimum validation-accuracy gain needed to keep doubling kernels.
    train_infeasible : bool
        Also train probes that already violate the budget (they can never be
        accepted; disabling this saves time without changing the result).

    Attributes
    ----------
    search_result_ : SearchResult
    arch_ : ArchDescriptor
        Architecture of the selected candidate.
    weights_ : dict
        Best-epoch weights of the selected candidate.
    report_ : ResourceReport
    """

    def __init__(self, target="L4", k0=4, epsilon=0.005, epochs=100, learning_rate=1e-3,
                 batch_size=128, validation_split=0.2, hflip=True, rotation_degrees=15.0,
                 seed=0, sizing=None, train_infeasible=True, cache_path=None):
        self.target = target
        self.k0 = k0
        self.epsilon = epsilon
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.validation_split = validation_split
        self.hflip = hflip
        self.rotation_degrees = rotation_degrees
        self.seed = seed
        self.sizing = sizing
        self.train_infeasible = train_infeasible
        self.cache_path = cache_path

    def _target(self) -> HardwareTarget:
        return target_preset(self.target) if isinstance(self.target, str) else self.target

    def fit(self, X, y):
        X, y_enc = _encode(self, X, y)
        sizing = self.sizing or SizingConfig()
        trainer = _trainer_config(self)
        config = SearchConfig(self.input_shape_, len(self.classes_), self.k0, self.epsilon,
                              sizing, trainer, self.train_infeasible)
        train, val = _train_val(self, X, y_enc)
        evaluator = TrainerEvaluator(train, val, self.input_shape_, len(self.classes_), trainer, sizing)
        if self.cache_path is not None:
            evaluator.attach_cache(self.cache_path)
        self.target_ = self._target()
        self.search_result_ = run_search(config, evaluator, self.target_)
        best = self.search_result_.best
        self.arch_ = build_architecture(best.point, self.input_shape_, len(self.classes_))
        result = evaluator.results.get((best.point.k, best.point.c))
        if result is None:
            # accuracy came from a cache file: retrain the winner to recover weights
            result = evaluator.results.setdefault(
                (best.point.k, best.point.c),
                train_and_evaluate(self.arch_, train, val, trainer,
                                   seed=candidate_seed(trainer.seed, best.point)),
            )
        self.weights_ = result.final_weights
        self.history_ = result.history
        self.report_ = resource_report(self.arch_, sizing)
        self.best_val_accuracy_ = best.accuracy
        return self

