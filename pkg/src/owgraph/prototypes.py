"""Trainable prototypes and the structures derived from them.

Representativeness (a per-node softmax over prototype affinities) and the
balance regularizer are differentiable and torch-native so they can sit on
the training path; top-k association and the Jaccard prototype graph are
discrete selections computed in numpy on detached scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

EPS_LOG = 1e-12


@dataclass(frozen=True)
class PrototypeGraph:
    """Per-prototype associated node sets and their Jaccard similarity matrix."""

    associations: tuple[np.ndarray, ...]
    similarity: np.ndarray

    @property
    def n_prototypes(self) -> int:
        return self.similarity.shape[0]


def _as_tensor(x) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    return torch.as_tensor(np.asarray(x), dtype=torch.float64)


def representativeness(h, prototypes) -> torch.Tensor:
    """Row-stochastic softmax of node-prototype inner products.

    r[i, j] = exp(h_i . c_j) / sum_k exp(h_i . c_k), computed with per-row
    max subtraction so extreme logits stay finite.
    """
    h = _as_tensor(h)
    prototypes = _as_tensor(prototypes)
    if h.ndim != 2 or prototypes.ndim != 2 or h.shape[1] != prototypes.shape[1]:
        raise ValueError(
            f"dimension mismatch: representations {tuple(h.shape)} vs "
            f"prototypes {tuple(prototypes.shape)}")
    if not (torch.isfinite(h).all() and torch.isfinite(prototypes).all()):
        raise ValueError("non-finite values in representativeness inputs")
    logits = h @ prototypes.T
    logits = logits - logits.max(dim=1, keepdim=True).values
    return torch.softmax(logits, dim=1)


def balance_regularizer(r) -> torch.Tensor:
    """KL(uniform || mean-over-nodes of r); zero iff the marginal is balanced."""
    r = _as_tensor(r)
    n_pro = r.shape[1]
    marginal = r.mean(dim=0).clamp_min(EPS_LOG)
    uniform = 1.0 / n_pro
    return (uniform * (np.log(uniform) - torch.log(marginal))).sum()


def associate_topk(r, k: int) -> tuple[np.ndarray, ...]:
    """Node sets associated to each prototype via top-k representativeness.

    Node i belongs to prototype j's set iff j is among i's k largest scores;
    ties break toward the lower prototype index. Returns one sorted node-index
    array per prototype.
    """
    r = np.asarray(r.detach() if isinstance(r, torch.Tensor) else r, dtype=np.float64)
    n, n_pro = r.shape
    if not 1 <= k <= n_pro:
        raise ValueError(f"k must lie in [1, {n_pro}], got {k}")
    # stable sort on -r keeps the lower prototype index first among ties
    top = np.argsort(-r, axis=1, kind="stable")[:, :k]
    members: list[list[int]] = [[] for _ in range(n_pro)]
    for i in range(n):
        for j in top[i]:
            members[j].append(i)
    return tuple(np.array(m, dtype=np.int64) for m in members)


def prototype_similarity(associations) -> np.ndarray:
    """Jaccard index between associated node sets; 0 when both sets are empty."""
    n_pro = len(associations)
    sizes = np.array([len(a) for a in associations], dtype=np.int64)
    universe = 0
    for a in associations:
        if len(a):
            universe = max(universe, int(a.max()) + 1)
    member = np.zeros((n_pro, max(universe, 1)), dtype=np.float64)
    for j, a in enumerate(associations):
        member[j, a] = 1.0
    inter = member @ member.T
    union = sizes[:, None] + sizes[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(union > 0, inter / np.maximum(union, 1), 0.0)
    return sim


def build_prototype_graph(r, k: int) -> PrototypeGraph:
    assoc = associate_topk(r, k)
    return PrototypeGraph(associations=assoc, similarity=prototype_similarity(assoc))


def init_prototypes(h, n_prototypes: int, rng: np.random.Generator,
                    jitter: float = 0.01) -> np.ndarray:
    """Prototype starting points: k-means centroids of h plus Gaussian jitter.

    Centroids cover the whole representation manifold, so regions without any
    labels (where novel classes live) get prototype coverage from the start,
    and every dense region receives a share proportional to its mass instead
    of depending on sampling luck. Falls back to unit-Gaussian vectors when h
    is empty, and to resampled rows when there are fewer rows than prototypes.
    """
    h = np.asarray(h.detach() if isinstance(h, torch.Tensor) else h, dtype=np.float64)
    n, d = h.shape
    if n == 0:
        return rng.normal(0.0, 1.0, size=(n_prototypes, d))
    if n < n_prototypes:
        picks = rng.choice(n, size=n_prototypes, replace=True)
        return h[picks] + rng.normal(0.0, max(jitter, 1e-3), size=(n_prototypes, d))
    centroids = _lloyd_centroids(h, n_prototypes, rng)
    return centroids + rng.normal(0.0, jitter, size=(n_prototypes, d))


def _lloyd_centroids(points: np.ndarray, k: int, rng: np.random.Generator,
                     n_restarts: int = 4, max_iter: int = 50) -> np.ndarray:
    """Best-of-restarts Lloyd iteration; empty clusters grab the farthest point."""
    best, best_inertia = None, np.inf
    for _ in range(n_restarts):
        centers = points[rng.choice(len(points), size=k, replace=False)].copy()
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centers[None]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            moved = False
            for c in range(k):
                mask = labels == c
                if not mask.any():
                    far = d2[np.arange(len(points)), labels].argmax()
                    centers[c] = points[far]
                    labels[far] = c
                    mask = labels == c
                new = points[mask].mean(axis=0)
                if not np.allclose(new, centers[c]):
                    centers[c] = new
                    moved = True
            if not moved:
                break
        inertia = float(((points - centers[labels]) ** 2).sum())
        if inertia < best_inertia:
            best, best_inertia = centers.copy(), inertia
    return best
