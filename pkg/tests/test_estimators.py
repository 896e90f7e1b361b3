import numpy as np
import pytest
from sklearn.base import clone

from occamnas import CNNClassifier, OccamNASClassifier
from occamnas.estimators import check_images
from occamnas.resmodel import HardwareTarget


def blobs(n=80, side=8, seed=0):
    rng = np.random.default_rng(seed)
    y = np.where(np.arange(n) % 2 == 0, "left", "right")
    X = rng.uniform(0, 60, (n, side, side))
    X[y == "left", :, : side // 2] += 150
    X[y == "right", :, side // 2:] += 150
    return X, y


def test_params_and_clone():
    est = CNNClassifier(k=3, c=1, epochs=7)
    assert est.get_params()["k"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(c=2)
    assert est.c == 2
    assert clone(OccamNASClassifier(target="L1")).target == "L1"


def test_check_images_shapes():
    assert check_images(np.zeros((2, 4, 4))).shape == (2, 4, 4, 1)
    with pytest.raises(ValueError):
        check_images(np.zeros((2, 4, 5)))
    with pytest.raises(ValueError):
        check_images(np.zeros((2, 4, 4, 2)))
    with pytest.raises(ValueError):
        check_images(np.full((2, 4, 4), np.nan))


def test_cnn_classifier_fit_predict():
    X, y = blobs()
    est = CNNClassifier(k=4, c=1, epochs=15, learning_rate=1e-2, batch_size=16, hflip=False).fit(X, y)
    assert list(est.classes_) == ["left", "right"]
    Xt, yt = blobs(seed=1)
    assert est.score(Xt, yt) >= 0.9
    proba = est.predict_proba(Xt)
    np.testing.assert_allclose(proba.sum(axis=1), 1, atol=1e-6)
    with pytest.raises(ValueError):
        est.predict(np.zeros((1, 6, 6)))


def test_predict_before_fit():
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        CNNClassifier().predict(np.zeros((1, 4, 4)))


def test_occamnas_classifier_search(tmp_path):
    X, y = blobs()
    target = HardwareTarget(4096, 16384, 200_000, "tiny")
    cache = tmp_path / "cache.json"
    est = OccamNASClassifier(target=target, epochs=3, batch_size=16, hflip=False, seed=2,
                             cache_path=cache).fit(X, y)
    assert est.search_result_.best.feasible
    assert est.report_.phi_ram <= 4096
    assert est.predict(X[:5]).shape == (5,)
    assert cache.exists()
    again = OccamNASClassifier(target=target, epochs=3, batch_size=16, hflip=False, seed=2,
                               cache_path=cache).fit(X, y)
    assert again.search_result_.best.point == est.search_result_.best.point
    np.testing.assert_array_equal(again.predict(X), est.predict(X))
