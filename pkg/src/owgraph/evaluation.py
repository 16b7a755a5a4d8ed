"""Permutation-invariant scoring for open-world predictions.

Predicted group ids carry no fixed correspondence to true classes, so
accuracy is computed under the best injective group-to-class matching found
by the Hungarian algorithm on the full test set. Known-class and novel-class
accuracies reuse that single global matching, which keeps the decomposition
acc_all = weighted mean of the subset accuracies exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .clustering import kmeans
from .graph import AttributedGraph, OpenWorldSplit


@dataclass(frozen=True)
class OpenWorldMetrics:
    acc_all: float
    acc_known: float
    acc_novel: float
    predicted_class_count: int
    class_count_mae: float | None = None


def open_world_accuracy(predictions, truth, known_classes,
                        predicted_class_count: int | None = None) -> OpenWorldMetrics:
    """Score group predictions against true classes on the test set.

    One maximum-agreement injective matching between predicted groups and
    true classes is computed over all test nodes; the known/novel subset
    accuracies are the matched fractions under that same matching. An empty
    subset scores 0.0.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if predictions.shape != truth.shape:
        raise ValueError("predictions and truth must be parallel arrays")
    if len(predictions) == 0:
        raise ValueError("empty test set")
    known = frozenset(int(c) for c in known_classes)

    groups = np.unique(predictions)
    classes = np.unique(truth)
    agreement = np.zeros((len(groups), len(classes)), dtype=np.int64)
    for gi, g in enumerate(groups):
        sel = predictions == g
        for ci, c in enumerate(classes):
            agreement[gi, ci] = int(np.sum(sel & (truth == c)))
    rows, cols = linear_sum_assignment(agreement, maximize=True)

    matched_class = np.full(len(groups), -1, dtype=np.int64)
    matched_class[rows] = classes[cols]
    group_index = {int(g): i for i, g in enumerate(groups)}
    pred_class = np.array([matched_class[group_index[int(g)]] for g in predictions])
    hit = pred_class == truth

    is_known = np.isin(truth, sorted(known))
    def _frac(mask):
        return float(hit[mask].sum() / mask.sum()) if mask.any() else 0.0

    count = int(predicted_class_count) if predicted_class_count is not None else len(groups)
    return OpenWorldMetrics(
        acc_all=float(hit.sum() / len(truth)),
        acc_known=_frac(is_known),
        acc_novel=_frac(~is_known),
        predicted_class_count=count,
    )


def class_count_error(estimated: float, truth: float) -> float:
    """Absolute error of an estimated class count (means over runs allowed)."""
    if estimated <= 0 or truth <= 0:
        raise ValueError("class counts must be positive")
    return float(abs(estimated - truth))


def kmeans_feature_baseline(g: AttributedGraph, split: OpenWorldSplit,
                            n_clusters: int, seed: int) -> np.ndarray:
    """Raw-feature k-means over the test nodes; the unsupervised floor."""
    if n_clusters < 2:
        raise ValueError(f"n_clusters must be at least 2, got {n_clusters}")
    test = np.asarray(split.test_nodes, dtype=np.int64)
    return kmeans(g.features[test], n_clusters, np.random.default_rng(seed))
