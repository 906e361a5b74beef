"""Comparison schemes that train the same CART learner on raw features."""

from __future__ import annotations

import numpy as np

from .blackbox import BlackBoxModel
from .data import Dataset
from .errors import GBFLError
from .explainer import ExplanationSet
from .learners import TransparentModel, fit_tree


def train_standard(train: Dataset, max_height: int = 5, min_leaf: int = 1, seed: int = 0,
                   method: str = "Standard") -> TransparentModel:
    """CART on the raw features and true labels."""
    if train.n_samples == 0:
        raise GBFLError("empty training set")
    tree = fit_tree(train.features, train.labels, max_height, min_leaf, seed, train.n_classes)
    return TransparentModel(method, tree, None, train.n_features,
                            {"max_height": max_height, "min_leaf": min_leaf})


def train_distilled(train: Dataset, blackbox: BlackBoxModel, max_height: int = 5,
                    min_leaf: int = 1, seed: int = 0) -> TransparentModel:
    """CART on the raw features, labelled by the black-box's hard predictions."""
    relabeled = train.with_labels(np.asarray(blackbox.predict(train.features)))
    return train_standard(relabeled, max_height, min_leaf, seed, method="Distillation")


def augmented_dataset(train: Dataset, triplets: ExplanationSet) -> Dataset:
    """Original rows (true labels) + PP rows + PN rows (black-box labels of those points)."""
    if len(triplets) != train.n_samples:
        raise GBFLError("triplets are not aligned with the training set")
    X = [train.features, triplets.PP]
    y = [train.labels, triplets.y_blackbox]
    has = triplets.has_pn
    if has.any():
        X.append(triplets.PN()[has])
        y.append(np.array([t.y_pn for t in triplets if t.pn is not None], dtype=int))
    return Dataset(np.vstack(X), np.concatenate(y), train.feature_names, train.n_classes,
                   dict(train.label_mapping))


def train_augmented(train: Dataset, triplets: ExplanationSet, max_height: int = 5,
                    min_leaf: int = 1, seed: int = 0) -> TransparentModel:
    return train_standard(augmented_dataset(train, triplets), max_height, min_leaf, seed,
                          method="Augmentation")
