"""Semi-supervised clustering of the prototype graph.

Prototypes are grouped by normalized spectral clustering of their Jaccard
similarity matrix; nodes inherit soft group assignments by summing their
representativeness over each group. Groups are matched to known classes with
the Hungarian algorithm, and the cluster count ("granularity") is chosen by
maximizing accuracy on the labeled nodes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment

from .prototypes import PrototypeGraph


@dataclass(frozen=True)
class GroupPartition:
    """Disjoint, nonempty prototype-index groups covering all prototypes."""

    groups: tuple[np.ndarray, ...]

    def __post_init__(self):
        seen = np.concatenate([g for g in self.groups]) if self.groups else np.array([])
        if any(len(g) == 0 for g in self.groups):
            raise ValueError("partition contains an empty group")
        if len(np.unique(seen)) != len(seen):
            raise ValueError("partition groups overlap")

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_prototypes(self) -> int:
        return sum(len(g) for g in self.groups)

    def labels(self) -> np.ndarray:
        out = np.empty(self.n_prototypes, dtype=np.int64)
        for k, g in enumerate(self.groups):
            out[g] = k
        return out


@dataclass(frozen=True)
class ClassMatching:
    """Injective group-to-class map, its labeled accuracy, and the leftovers."""

    group_to_class: dict[int, int]
    accuracy: float
    novel_group_ids: frozenset[int]

    def class_to_group(self) -> dict[int, int]:
        return {c: g for g, c in self.group_to_class.items()}


def kmeans(points: np.ndarray, n_clusters: int, rng: np.random.Generator,
           n_restarts: int = 10, max_iter: int = 100) -> np.ndarray:
    """Lloyd's k-means with random-point inits and empty-cluster repair.

    Each restart seeds centroids at distinct random rows; an empty cluster is
    repaired by handing it the point farthest from its current centroid.
    Returns the labels of the lowest-inertia restart.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters must lie in [1, {n}], got {n_clusters}")

    best_labels = None
    best_inertia = np.inf
    for _ in range(n_restarts):
        centers = points[rng.choice(n, size=n_clusters, replace=False)].copy()
        labels = None
        for _it in range(max_iter):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            new_labels = _repair_empty(points, centers, d2.argmin(axis=1), n_clusters)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            for c in range(n_clusters):
                members = points[labels == c]
                if len(members):
                    centers[c] = members.mean(axis=0)
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best_inertia = inertia
            best_labels = labels
    return best_labels


def _repair_empty(points, centers, labels, n_clusters):
    labels = labels.copy()
    for c in range(n_clusters):
        if np.any(labels == c):
            continue
        dist = ((points - centers[labels]) ** 2).sum(axis=1)
        counts = np.bincount(labels, minlength=n_clusters)
        dist[counts[labels] <= 1] = -np.inf  # do not strand another cluster
        labels[int(dist.argmax())] = c
    return labels


def cluster_prototypes(pg: PrototypeGraph, n_clusters: int, seed: int) -> GroupPartition:
    """Normalized spectral clustering of the prototype similarity matrix.

    Symmetric-normalized Laplacian, bottom n_clusters eigenvectors,
    row-normalized embedding, then k-means with 10 restarts under seed.
    """
    s = np.asarray(pg.similarity, dtype=np.float64)
    n_pro = s.shape[0]
    if not 2 <= n_clusters <= n_pro:
        raise ValueError(f"n_clusters must lie in [2, {n_pro}], got {n_clusters}")
    if not np.allclose(s, s.T, atol=1e-10):
        raise ValueError("similarity matrix must be symmetric")

    deg = s.sum(axis=1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.maximum(deg, 1e-300)), 0.0)
    lap = np.eye(n_pro) - inv_sqrt[:, None] * s * inv_sqrt[None, :]
    _, vecs = np.linalg.eigh(lap)
    embed = vecs[:, :n_clusters]
    norms = np.linalg.norm(embed, axis=1, keepdims=True)
    embed = np.where(norms > 1e-12, embed / np.maximum(norms, 1e-12), embed)

    labels = kmeans(embed, n_clusters, np.random.default_rng(seed))
    groups = tuple(np.flatnonzero(labels == k) for k in range(n_clusters))
    return GroupPartition(groups=groups)


def node_group_assignment(r, partition: GroupPartition):
    """Node-to-group probabilities: representativeness summed over each group.

    Accepts a numpy array or a torch tensor; the torch path stays
    differentiable with the partition held fixed.
    """
    if isinstance(r, torch.Tensor):
        cols = [r[:, torch.as_tensor(g, dtype=torch.long)].sum(dim=1)
                for g in partition.groups]
        return torch.stack(cols, dim=1)
    r = np.asarray(r, dtype=np.float64)
    return np.stack([r[:, g].sum(axis=1) for g in partition.groups], axis=1)


def match_and_score(p, labeled_idx, labeled_classes) -> ClassMatching:
    """Hungarian matching of predicted groups to known classes on labeled nodes.

    Hard predictions are row argmaxes (ties to the lower group index). The
    rectangular assignment maximizes total agreement; accuracy is the matched
    agreement over the labeled count, and unmatched groups are reported as
    novel.
    """
    p = np.asarray(p.detach() if isinstance(p, torch.Tensor) else p, dtype=np.float64)
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    labeled_classes = np.asarray(labeled_classes, dtype=np.int64)
    if len(labeled_idx) == 0:
        raise ValueError("match_and_score requires at least one labeled node")

    n_groups = p.shape[1]
    preds = p[labeled_idx].argmax(axis=1)
    classes = np.unique(labeled_classes)
    agreement = np.zeros((n_groups, len(classes)), dtype=np.int64)
    for g in range(n_groups):
        hit = preds == g
        for ci, c in enumerate(classes):
            agreement[g, ci] = int(np.sum(hit & (labeled_classes == c)))

    rows, cols = linear_sum_assignment(agreement, maximize=True)
    mapping = {int(g): int(classes[c]) for g, c in zip(rows, cols)}
    accuracy = float(agreement[rows, cols].sum()) / len(labeled_idx)
    novel = frozenset(range(n_groups)) - frozenset(mapping)
    return ClassMatching(group_to_class=mapping, accuracy=accuracy,
                         novel_group_ids=frozenset(novel))


def search_granularity(pg: PrototypeGraph, r, labeled_idx, labeled_classes,
                       n_range: tuple[int, int], fixed_n: int | None,
                       seed: int) -> tuple[int, GroupPartition, ClassMatching]:
    """Pick the cluster count that maximizes labeled accuracy.

    With fixed_n given ("with prior" mode) the search collapses to that single
    granularity. Ties break toward the smaller count.
    """
    lo, hi = int(n_range[0]), int(n_range[1])
    n_classes = len(np.unique(np.asarray(labeled_classes)))
    if lo > hi:
        raise ValueError(f"empty granularity range [{lo}, {hi}]")
    if lo < max(2, n_classes) or hi > pg.n_prototypes:
        raise ValueError(
            f"granularity range [{lo}, {hi}] must stay within "
            f"[{max(2, n_classes)}, {pg.n_prototypes}]")
    if fixed_n is not None:
        if not lo <= fixed_n <= hi:
            raise ValueError(f"fixed granularity {fixed_n} outside range [{lo}, {hi}]")
        candidates = [int(fixed_n)]
    else:
        candidates = list(range(lo, hi + 1))

    best = None
    for n in candidates:
        part = cluster_prototypes(pg, n, seed)
        p = node_group_assignment(r, part)
        matching = match_and_score(p, labeled_idx, labeled_classes)
        if best is None or matching.accuracy > best[2].accuracy:
            best = (n, part, matching)
    return best


def default_granularity_range(n_known_classes: int, n_prototypes: int) -> tuple[int, int]:
    """[known-class count, 3x that] clamped to what the prototype set allows."""
    lo = max(2, n_known_classes)
    hi = min(n_prototypes, 3 * n_known_classes)
    return lo, max(lo, hi)
