"""Pseudo-label-driven edge editing plus stochastic graph augmentation.

Edges are recovered between confident same-pseudo-class node pairs that look
similar in prototype-relationship space, and removed between confident nodes
with conflicting pseudo-classes. Augmentation drops edges with probability
inversely proportional to endpoint degree (structurally central edges
survive) and masks feature entries uniformly; the consistency loss pulls
predictions on the augmented view toward the clean ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .graph import AttributedGraph, canonical_edge
from .pseudolabels import ConfidentSet


@dataclass(frozen=True)
class RefinementResult:
    recovered: frozenset[tuple[int, int]]
    removed: frozenset[tuple[int, int]]
    refined: frozenset[tuple[int, int]]
    mu: float


@dataclass(frozen=True)
class AugmentedView:
    features: np.ndarray
    edges: frozenset[tuple[int, int]]
    predictions: tuple = field(default=(), compare=False)


def node_similarity(r_layers, idx_a, idx_b) -> np.ndarray:
    """Mean-over-layers cosine between prototype-relationship rows.

    idx_a/idx_b are parallel node-index arrays; a zero-norm row contributes
    0 for that layer.
    """
    idx_a = np.asarray(idx_a, dtype=np.int64)
    idx_b = np.asarray(idx_b, dtype=np.int64)
    total = np.zeros(len(idx_a))
    for r in r_layers:
        r = np.asarray(r.detach() if isinstance(r, torch.Tensor) else r, dtype=np.float64)
        a, b = r[idx_a], r[idx_b]
        na = np.linalg.norm(a, axis=1)
        nb = np.linalg.norm(b, axis=1)
        denom = na * nb
        dots = (a * b).sum(axis=1)
        total += np.where(denom > 0, dots / np.maximum(denom, 1e-300), 0.0)
    return total / len(r_layers)


def recover_edges(confident: ConfidentSet, r_layers, mu: float,
                  current_edges: frozenset[tuple[int, int]]) -> frozenset[tuple[int, int]]:
    """Lowest-similarity non-adjacent pairs within each pseudo-class.

    Per class the floor(mu * pair-count) least similar pairs are recovered;
    ranking ties break on (similarity, u, v).
    """
    if not 0 <= mu <= 1:
        raise ValueError(f"mu must lie in [0, 1], got {mu}")
    out: set[tuple[int, int]] = set()
    for nodes in confident.members:
        if len(nodes) < 2:
            continue
        iu, iv = np.triu_indices(len(nodes), k=1)
        u, v = nodes[iu], nodes[iv]  # members sorted ascending, so u < v
        keep = np.array([(a, b) not in current_edges for a, b in zip(u, v)])
        u, v = u[keep], v[keep]
        if len(u) == 0:
            continue
        take = math.floor(mu * len(u))
        if take == 0:
            continue
        sim = node_similarity(r_layers, u, v)
        order = np.lexsort((v, u, sim))
        out.update((int(u[i]), int(v[i])) for i in order[:take])
    return frozenset(out)


def remove_edges(confident: ConfidentSet, edges: frozenset[tuple[int, int]],
                 n_nodes: int) -> frozenset[tuple[int, int]]:
    """Edges whose endpoints are both confident but pseudo-labeled differently."""
    labels = confident.labels(n_nodes)
    return frozenset(
        (u, v) for u, v in edges
        if labels[u] >= 0 and labels[v] >= 0 and labels[u] != labels[v])


def apply_refinement(edges: frozenset[tuple[int, int]],
                     recovered: frozenset[tuple[int, int]],
                     removed: frozenset[tuple[int, int]],
                     mu: float = 0.0) -> RefinementResult:
    """Edit the edge set: drop the removed edges, add the recovered ones."""
    if not removed <= edges:
        raise ValueError("removed edges must be a subset of the current edges")
    if recovered & edges:
        raise ValueError("recovered edges must be disjoint from the current edges")
    refined = frozenset(canonical_edge(u, v) for u, v in (edges - removed) | recovered)
    return RefinementResult(recovered=recovered, removed=removed,
                            refined=refined, mu=mu)


def refine(g_edges, confident: ConfidentSet, r_layers, mu: float,
           n_nodes: int) -> RefinementResult:
    """One full refinement round: recovery, removal, and the edit."""
    recovered = recover_edges(confident, r_layers, mu, g_edges)
    removed = remove_edges(confident, g_edges, n_nodes)
    return apply_refinement(g_edges, recovered, removed, mu)


def augment(g: AttributedGraph, edge_drop_rate: float, feature_mask_rate: float,
            seed: int) -> AugmentedView:
    """Degree-adaptive edge dropping plus uniform feature masking.

    Per-edge drop probability is proportional to the inverse mean endpoint
    degree, rescaled so the expected dropped fraction equals edge_drop_rate,
    then clamped to [0, 0.9]. Each (node, dimension) feature entry is zeroed
    independently with probability feature_mask_rate. Deterministic per seed.
    """
    for name, rate in (("edge_drop_rate", edge_drop_rate),
                       ("feature_mask_rate", feature_mask_rate)):
        if not 0 <= rate < 1:
            raise ValueError(f"{name} must lie in [0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    edges = sorted(g.edges)
    kept = frozenset(edges)
    if edges and edge_drop_rate > 0:
        deg = g.degrees().astype(np.float64)
        inv = np.array([2.0 / (deg[u] + deg[v]) for u, v in edges])
        probs = np.clip(edge_drop_rate * len(edges) * inv / inv.sum(), 0.0, 0.9)
        draws = rng.random(len(edges))
        kept = frozenset(e for e, d, p in zip(edges, draws, probs) if d >= p)
    features = g.features.copy()
    if feature_mask_rate > 0:
        features[rng.random(features.shape) < feature_mask_rate] = 0.0
    return AugmentedView(features=features, edges=kept)


def consistency_loss(p_layers, p_bar_layers) -> torch.Tensor:
    """Sum over layers and nodes of KL(clean prediction || augmented prediction)."""
    if len(p_layers) != len(p_bar_layers):
        raise ValueError("layer count mismatch between views")
    total = None
    for p, p_bar in zip(p_layers, p_bar_layers):
        if p.shape != p_bar.shape:
            raise ValueError(f"shape mismatch {tuple(p.shape)} vs {tuple(p_bar.shape)}")
        term = torch.xlogy(p, p) - p * torch.log(torch.clamp(p_bar, min=1e-12))
        total = term.sum() if total is None else total + term.sum()
    return total
