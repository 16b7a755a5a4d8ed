"""Ensemble pseudo-labels from stacked per-layer group predictions.

Layers may use different group counts and arbitrary group orderings, so their
prediction matrices are zero-padded to a common width, aligned to the first
layer by Hungarian matching on argmax agreement, and averaged. Groups whose
average popularity falls below a threshold are suppressed, and the most
confident unlabeled nodes per surviving group become pseudo-labeled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment


@dataclass(frozen=True)
class EnsemblePrediction:
    """Averaged cross-layer prediction with suppressed columns zeroed.

    alignment[l][g] is the reference (layer-1) column that layer l's group g
    was mapped onto.
    """

    p_hat: np.ndarray
    mask: np.ndarray
    alignment: tuple[np.ndarray, ...]

    @property
    def n_groups(self) -> int:
        return self.p_hat.shape[1]

    @property
    def surviving_groups(self) -> np.ndarray:
        return np.flatnonzero(self.mask)


@dataclass(frozen=True)
class ConfidentSet:
    """Per-group confident node ids (sorted ascending within each group)."""

    members: tuple[np.ndarray, ...]
    gamma: float

    def labels(self, n_nodes: int) -> np.ndarray:
        """Dense node -> pseudo-group map, -1 for non-confident nodes."""
        out = np.full(n_nodes, -1, dtype=np.int64)
        for k, nodes in enumerate(self.members):
            out[nodes] = k
        return out

    @property
    def total(self) -> int:
        return sum(len(m) for m in self.members)


def _to_numpy(p):
    if isinstance(p, torch.Tensor):
        return p.detach().cpu().numpy().astype(np.float64)
    return np.asarray(p, dtype=np.float64)


def pad_predictions(preds) -> list[np.ndarray]:
    """Right-pad each N×G_l matrix with zero columns to the widest layer."""
    mats = [_to_numpy(p) for p in preds]
    if not mats:
        raise ValueError("no prediction matrices given")
    n = mats[0].shape[0]
    if any(m.shape[0] != n for m in mats):
        raise ValueError("prediction matrices disagree on node count")
    g_max = max(m.shape[1] for m in mats)
    out = []
    for m in mats:
        if m.shape[1] < g_max:
            m = np.hstack([m, np.zeros((n, g_max - m.shape[1]))])
        out.append(m)
    return out


def align_layers(padded: list[np.ndarray]) -> tuple[list[np.ndarray], tuple[np.ndarray, ...]]:
    """Permute each layer's columns into the first layer's group order.

    The matching maximizes, over all nodes, the count of (layer argmax,
    reference argmax) agreements; padded columns carry zero agreement and
    soak up the leftover slots.
    """
    g_max = padded[0].shape[1]
    if any(m.shape[1] != g_max for m in padded):
        raise ValueError("align_layers expects equal-width (padded) matrices")
    ref_arg = padded[0].argmax(axis=1)
    aligned = [padded[0]]
    maps = [np.arange(g_max, dtype=np.int64)]
    for m in padded[1:]:
        arg = m.argmax(axis=1)
        agreement = np.zeros((g_max, g_max), dtype=np.int64)
        np.add.at(agreement, (arg, ref_arg), 1)
        rows, cols = linear_sum_assignment(agreement, maximize=True)
        perm = np.empty(g_max, dtype=np.int64)
        perm[rows] = cols
        permuted = np.zeros_like(m)
        permuted[:, perm] = m
        aligned.append(permuted)
        maps.append(perm)
    return aligned, tuple(maps)


def ensemble(aligned: list[np.ndarray]) -> np.ndarray:
    """Elementwise mean of the aligned per-layer predictions."""
    if not aligned:
        raise ValueError("cannot ensemble zero layers")
    return np.mean(np.stack(aligned, axis=0), axis=0)


def suppress(p_hat: np.ndarray, eta: float) -> tuple[np.ndarray, np.ndarray]:
    """Zero out groups whose mean popularity is at most eta.

    Rows are not renormalized; downstream consumers only take argmaxes and
    confidence rankings, which uniform zeroing leaves intact.
    """
    if eta < 0:
        raise ValueError(f"eta must be nonnegative, got {eta}")
    popularity = p_hat.mean(axis=0)
    mask = popularity > eta
    if not mask.any():
        raise ValueError(
            f"every group suppressed at eta={eta} "
            f"(max popularity {popularity.max():.4g})")
    return p_hat * mask[None, :], mask


def select_confident(masked_p_hat: np.ndarray, unlabeled: np.ndarray,
                     gamma: float) -> ConfidentSet:
    """Keep the top ceil(gamma * count) most confident candidates per group.

    A node is a candidate for the group its masked-ensemble argmax picks
    (ties to the lower group); ranking ties also break to the lower node id.
    """
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    unlabeled = np.asarray(unlabeled, dtype=np.int64)
    arg = masked_p_hat.argmax(axis=1)
    members = []
    for k in range(masked_p_hat.shape[1]):
        cand = unlabeled[arg[unlabeled] == k]
        if len(cand) == 0:
            members.append(np.empty(0, dtype=np.int64))
            continue
        take = math.ceil(gamma * len(cand))
        conf = masked_p_hat[cand, k]
        order = np.lexsort((cand, -conf))  # confidence desc, node id asc
        members.append(np.sort(cand[order[:take]]))
    return ConfidentSet(members=tuple(members), gamma=gamma)


def generate(preds, unlabeled, eta: float, gamma: float) -> tuple[EnsemblePrediction, ConfidentSet]:
    """Full pipeline: pad, align to layer 1, average, suppress, select."""
    padded = pad_predictions(preds)
    aligned, maps = align_layers(padded)
    p_hat = ensemble(aligned)
    masked, mask = suppress(p_hat, eta)
    pred = EnsemblePrediction(p_hat=masked, mask=mask, alignment=maps)
    confident = select_confident(masked, unlabeled, gamma)
    return pred, confident
