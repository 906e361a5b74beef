import json

import numpy as np
import pytest

from conftest import stump_model, uniform_data
from gbfl.baselines import augmented_dataset, train_augmented, train_distilled, train_standard
from gbfl.blackbox import LogisticBlackBox
from gbfl.data import Dataset
from gbfl.errors import GBFLError
from gbfl.explainer import ExplanationSet, ExplanationTriplet, explain_dataset


class LabelOracle(LogisticBlackBox):
    """Black-box that returns the stored true label of each training row."""

    def __init__(self, data):
        super().__init__(np.zeros((data.n_features, data.n_classes)), np.zeros(data.n_classes))
        self._lookup = {tuple(r): int(y) for r, y in zip(data.features, data.labels)}

    def predict(self, X):
        return np.array([self._lookup[tuple(r)] for r in np.atleast_2d(X)])


def one_d(values, labels):
    return Dataset(np.asarray(values, float)[:, None], np.asarray(labels), ("x",), 2, {"0": 0, "1": 1})


def best_threshold_oracle(x, y):
    """Exhaustive scan over midpoints: threshold with the fewest stump errors."""
    u = np.unique(x)
    mids = (u[1:] + u[:-1]) / 2
    errs = [min(np.sum((x > m) != y), np.sum((x <= m) != y)) for m in mids]
    return mids[int(np.argmin(errs))]


def test_standard_1d_threshold_between_straddling_values():
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.uniform(0, 4.8, 30), rng.uniform(5.3, 10, 30)])
    y = (x > 5).astype(int)
    tm = train_standard(one_d(x, y))
    tree = tm.model
    assert tree.height == 1
    lo, hi = x[x < 5].max(), x[x > 5].min()
    assert tree.root.threshold == pytest.approx((lo + hi) / 2)
    assert tree.root.threshold == pytest.approx(best_threshold_oracle(x, y))
    assert tm.method == "Standard" and tm.clauses is None


def test_standard_pure_and_height_zero():
    data = one_d([1, 2, 3, 4, 5], [1, 1, 1, 1, 1])
    assert train_standard(data).model.height == 0
    mixed = one_d([1, 2, 3, 4, 5], [0, 1, 1, 0, 1])
    tm = train_standard(mixed, max_height=0)
    assert tm.model.height == 0
    assert np.all(tm.predict_points(np.array([[0.0], [9.0]])) == 1)


def test_standard_empty_is_error():
    with pytest.raises(GBFLError):
        train_standard(Dataset(np.zeros((0, 1)), np.zeros(0, int), ("x",), 2))


def test_distilled_with_true_label_oracle_equals_standard():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(120, 3))
    y = ((X[:, 0] > 0) ^ (X[:, 2] > 0.5)).astype(int)
    data = Dataset(X, y, ("a", "b", "c"), 2)
    std = train_standard(data, max_height=4)
    dis = train_distilled(data, LabelOracle(data), max_height=4)
    assert json.dumps(std.model.to_dict()) == json.dumps(dis.model.to_dict())
    assert dis.method == "Distillation"


def test_distilled_constant_blackbox_is_leaf():
    data = uniform_data(200)
    const = LogisticBlackBox(np.zeros((2, 2)), [0.0, 3.0])
    tm = train_distilled(data, const)
    assert tm.model.height == 0
    assert np.all(tm.predict_points(data.features) == 1)


def test_distilled_stump_reproduces_boundary():
    data = uniform_data(500, seed=2)
    tm = train_distilled(data, stump_model())
    x0 = np.sort(data.features[:, 0])
    gap = np.max(np.diff(x0))
    assert tm.model.root.feature == 0
    assert abs(tm.model.root.threshold - 5.0) <= gap


def test_augmented_size_and_labels(stump, box2):
    data = uniform_data(60, seed=3)
    expl = explain_dataset(stump, data, np.zeros(2), box2)
    aug = augmented_dataset(data, expl)
    n, n_pn = data.n_samples, int(expl.has_pn.sum())
    assert n_pn > 0
    assert aug.n_samples == n + n + n_pn
    np.testing.assert_array_equal(aug.labels[:n], data.labels)
    np.testing.assert_array_equal(aug.labels[n:2 * n], stump.predict(expl.PP))
    np.testing.assert_array_equal(aug.labels[2 * n:], stump.predict(expl.PN()[expl.has_pn]))
    tm = train_augmented(data, expl, max_height=3)
    assert tm.method == "Augmentation" and tm.model.height <= 3


def _triplets(X, yb, pn=None):
    trip = [ExplanationTriplet(i, x, int(c), x.copy()) for i, (x, c) in enumerate(zip(X, yb))]
    return ExplanationSet(trip, np.zeros(X.shape[1]))


def test_augmented_without_pns_is_data_plus_pps():
    data = uniform_data(40, seed=4)
    expl = _triplets(data.features, data.labels)
    aug = augmented_dataset(data, expl)
    assert aug.n_samples == 80
    np.testing.assert_array_equal(aug.features[40:], data.features)


def test_zero_deviation_pps_duplicate_rows():
    # PPs equal to the samples, labelled like the samples: same tree as on the data alone
    data = uniform_data(150, seed=5)
    expl = _triplets(data.features, data.labels)
    dup = train_augmented(data, expl, max_height=3)
    std = train_standard(data, max_height=3)
    X = uniform_data(300, seed=6).features
    np.testing.assert_array_equal(dup.predict_points(X), std.predict_points(X))


def test_augmented_alignment_error():
    data = uniform_data(10)
    with pytest.raises(GBFLError):
        augmented_dataset(data, _triplets(data.features[:5], data.labels[:5]))
