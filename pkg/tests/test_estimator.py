import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.model_selection import cross_val_score

from arpgnet.data import SynthTaskConfig, synth_generate
from arpgnet.estimator import ArpgNetClassifier


@pytest.fixture(scope="module")
def xy():
    ds = synth_generate(SynthTaskConfig(samples_per_class=40, noise_sigma=0.0, evidence_window=0, seed=1))
    X = np.stack([np.stack([s.arrays["app"], s.arrays["rel"]]) for s in ds.samples])
    y = np.array(["neg", "pos"])[ds.labels]
    return X, y


def test_params_round_trip():
    clf = ArpgNetClassifier(trs=2, epochs=5)
    assert clf.get_params()["trs"] == 2
    assert clone(clf).set_params(heads=1).get_params()["heads"] == 1


def test_fit_predict_proba_transform(xy):
    X, y = xy
    clf = ArpgNetClassifier(epochs=40, batch_size=8, random_state=0).fit(X, y)
    assert list(clf.classes_) == ["neg", "pos"]
    proba = clf.predict_proba(X[:5])
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, rtol=1e-6)
    assert set(clf.predict(X)) <= {"neg", "pos"}
    assert clf.score(X, y) > 0.9
    assert clf.transform(X[:3]).shape == (3, 32)


def test_same_seed_same_predictions(xy):
    X, y = xy
    a = ArpgNetClassifier(epochs=3, random_state=5).fit(X, y).decision_function(X)
    b = ArpgNetClassifier(epochs=3, random_state=5).fit(X, y).decision_function(X)
    assert np.array_equal(a, b)


def test_composes_with_sklearn_tools(xy):
    X, y = xy
    scores = cross_val_score(ArpgNetClassifier(epochs=2), X, y, cv=2)
    assert scores.shape == (2,)


def test_input_validation(xy):
    X, y = xy
    with pytest.raises(NotFittedError):
        ArpgNetClassifier().predict(X)
    with pytest.raises(ValueError):
        ArpgNetClassifier(epochs=1).fit(X[:, 0], y)
    with pytest.raises(ValueError):
        ArpgNetClassifier(epochs=1).fit(X, y[:-1])
    bad = X.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        ArpgNetClassifier(epochs=1).fit(bad, y)
    with pytest.raises(ValueError):
        ArpgNetClassifier(epochs=1).fit(X[y == "neg"], y[y == "neg"])


def test_toy_backbone_on_clips():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((6, 4, 1, 16, 16)).astype(np.float32)
    y = np.array([0, 1, 0, 1, 0, 1])
    clf = ArpgNetClassifier(backbone="toy", P=2, heads=1, trs=1, epochs=1, trunk_channels=(2, 2, 2)).fit(X, y)
    assert clf.predict(X).shape == (6,)
