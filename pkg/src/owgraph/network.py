"""Stacked prototypical attention network and its training loop.

Each layer scores its input representations against a trainable prototype
set, clusters the prototypes into groups, reads off soft group assignments
per node, and aggregates neighbor messages weighted by group-assignment
similarity. Discrete choices (top-k sets, prototype partitions, matchings)
are recomputed in forward position and treated as constants by autograd;
gradients flow through the representativeness softmax, the group sums, the
attention softmax, and the linear maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from . import pseudolabels as pl
from .clustering import (ClassMatching, GroupPartition, default_granularity_range,
                         node_group_assignment, search_granularity)
from .graph import AttributedGraph, OpenWorldSplit
from .prototypes import (balance_regularizer, build_prototype_graph,
                         init_prototypes, representativeness)
from .refinement import augment, consistency_loss, refine


class DivergenceError(RuntimeError):
    """Raised when the training loss leaves the finite range."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class PanLayer:
    """One attention layer: linear map, trainable prototypes, nonlinearity."""

    def __init__(self, weight: torch.Tensor, activation: str = "relu",
                 n_prototypes: int | None = None):
        if activation not in ("relu", "identity"):
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = weight
        self.prototypes: torch.Tensor | None = None
        self.n_prototypes_pending = n_prototypes
        self.activation = activation
        self.best_n: int | None = None

    def parameters(self):
        params = [self.weight]
        if self.prototypes is not None:
            params.append(self.prototypes)
        return params

    def activate(self, x):
        return torch.relu(x) if self.activation == "relu" else x


class PanStack:
    """Ordered layers; layer l consumes layer l-1's output (layer 1 eats X)."""

    def __init__(self, layers: list[PanLayer]):
        self.layers = layers

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]


@dataclass
class LayerState:
    """Forward caches of one layer on one view."""

    r: torch.Tensor
    p: torch.Tensor
    h_out: torch.Tensor
    preact: torch.Tensor
    alpha: torch.Tensor
    att_own: torch.Tensor
    att_nbr: torch.Tensor
    partition: GroupPartition
    matching: ClassMatching
    n_used: int


@dataclass
class TrainState:
    epoch: int = 0
    history: list = field(default_factory=list)
    refinements: list = field(default_factory=list)
    edges: frozenset = frozenset()
    granularities: list = field(default_factory=list)
    converged: bool = False


def build_stack(feature_dim: int, hidden_dim: int, n_layers: int,
                activation: str, rng: np.random.Generator,
                n_prototypes: int = 40) -> PanStack:
    """Glorot-uniform weights; prototypes are created on the first forward."""
    if n_layers < 1:
        raise ValueError("need at least one layer")
    layers = []
    d_in = feature_dim
    for _ in range(n_layers):
        limit = math.sqrt(6.0 / (d_in + hidden_dim))
        w = rng.uniform(-limit, limit, size=(d_in, hidden_dim))
        layers.append(PanLayer(torch.tensor(w, dtype=torch.float64, requires_grad=True),
                               activation, n_prototypes))
        d_in = hidden_dim
    return PanStack(layers)


def _attention_index(edges, n_nodes):
    """Directed (node, neighbor) index arrays over N(i) plus the self loop."""
    self_idx = np.arange(n_nodes, dtype=np.int64)
    if edges:
        e = np.array(sorted(edges), dtype=np.int64)
        own = np.concatenate([e[:, 0], e[:, 1], self_idx])
        nbr = np.concatenate([e[:, 1], e[:, 0], self_idx])
    else:
        own, nbr = self_idx, self_idx
    return (torch.as_tensor(own, dtype=torch.long),
            torch.as_tensor(nbr, dtype=torch.long))


def attention_scores(p: torch.Tensor, edges, include_self: bool = True,
                     mode: str = "group"):
    """Per-node softmax over cosine similarities of group assignments.

    Returns (alpha, own, nbr) index-aligned arrays covering each node's
    neighborhood plus itself. mode="uniform" scores every neighbor equally
    (the ablation variant). Zero-norm assignment rows get cosine 0.
    """
    if not include_self:
        raise ValueError("aggregation is defined over N(i) plus the node itself")
    if mode not in ("group", "uniform"):
        raise ValueError(f"unknown attention mode {mode!r}")
    n = p.shape[0]
    own, nbr = _attention_index(edges, n)
    if mode == "group":
        a, b = p[own], p[nbr]
        denom = torch.linalg.norm(a, dim=1) * torch.linalg.norm(b, dim=1)
        logits = torch.where(denom > 0, (a * b).sum(dim=1) / denom.clamp(min=1e-300),
                             torch.zeros_like(denom))
    else:
        logits = torch.zeros(len(own), dtype=p.dtype)
    maxes = torch.full((n,), -torch.inf, dtype=logits.dtype)
    maxes = maxes.scatter_reduce(0, own, logits.detach(), reduce="amax",
                                 include_self=True)
    ex = torch.exp(logits - maxes[own])
    sums = torch.zeros(n, dtype=logits.dtype).index_add(0, own, ex)
    return ex / sums[own], own, nbr


def layer_forward(h_in: torch.Tensor, edges, layer: PanLayer,
                  labeled_idx, labeled_classes, *, topk: int,
                  n_range: tuple[int, int], fixed_n: int | None,
                  search: bool, cluster_seed: int, attention: str = "group",
                  fixed_partition: GroupPartition | None = None,
                  fixed_matching: ClassMatching | None = None,
                  init_rng: np.random.Generator | None = None) -> LayerState:
    """One layer's full forward: relate, cluster, assign, attend, aggregate."""
    if layer.prototypes is None:
        if init_rng is None:
            raise RuntimeError("layer prototypes uninitialized and no init rng given")
        protos = init_prototypes(h_in, layer.n_prototypes_pending, init_rng)
        layer.prototypes = torch.tensor(protos, dtype=torch.float64, requires_grad=True)

    r = representativeness(h_in, layer.prototypes)
    if fixed_partition is not None:
        partition, matching = fixed_partition, fixed_matching
    else:
        r_np = r.detach().numpy()
        pg = build_prototype_graph(r_np, topk)
        want = fixed_n if fixed_n is not None else (None if search else layer.best_n)
        best_n, partition, matching = search_granularity(
            pg, r_np, labeled_idx, labeled_classes, n_range, want, cluster_seed)
        layer.best_n = best_n
    p = node_group_assignment(r, partition)
    alpha, own, nbr = attention_scores(p, edges, include_self=True, mode=attention)
    hw = h_in @ layer.weight
    msg = alpha.unsqueeze(1) * hw[nbr]
    preact = torch.zeros_like(hw).index_add(0, own, msg)
    h_out = layer.activate(preact)
    return LayerState(r=r, p=p, h_out=h_out, preact=preact, alpha=alpha,
                      att_own=own, att_nbr=nbr, partition=partition,
                      matching=matching, n_used=partition.n_groups)


def stack_forward(features, edges, stack: PanStack, labeled_idx, labeled_classes,
                  *, topk: int, n_range: tuple[int, int], fixed_n: int | None,
                  search: bool, cluster_seed: int, attention: str = "group",
                  fixed_states: list[LayerState] | None = None,
                  init_rng: np.random.Generator | None = None) -> list[LayerState]:
    """Run every layer in sequence starting from the raw features."""
    h = torch.as_tensor(features, dtype=torch.float64)
    states = []
    for li, layer in enumerate(stack.layers):
        fixed_part = fixed_states[li].partition if fixed_states else None
        fixed_match = fixed_states[li].matching if fixed_states else None
        state = layer_forward(
            h, edges, layer, labeled_idx, labeled_classes, topk=topk,
            n_range=n_range, fixed_n=fixed_n, search=search,
            cluster_seed=cluster_seed + li, attention=attention,
            fixed_partition=fixed_part, fixed_matching=fixed_match,
            init_rng=init_rng)
        states.append(state)
        h = state.h_out
    return states


def ce_loss(p_layers, targets) -> torch.Tensor:
    """Summed negative log group probability over per-layer supervision pairs.

    targets[l] is a (node_indices, group_indices) pair; probabilities are
    clamped below at 1e-12.
    """
    if len(p_layers) != len(targets):
        raise ValueError("one target set per layer required")
    total = torch.zeros((), dtype=torch.float64)
    for p, (nodes, groups) in zip(p_layers, targets):
        if len(nodes) == 0:
            continue
        probs = p[torch.as_tensor(nodes, dtype=torch.long),
                  torch.as_tensor(groups, dtype=torch.long)]
        total = total - torch.log(torch.clamp(probs, min=1e-12)).sum()
    return total


def class_targets(matchings, nodes, classes):
    """Per-layer (node, group) supervision from class labels.

    A node is skipped in a layer whose matching gives its class no group.
    Raises on an empty supervised set.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    classes = np.asarray(classes, dtype=np.int64)
    if len(nodes) == 0:
        raise ValueError("empty supervised set")
    out = []
    for matching in matchings:
        c2g = matching.class_to_group()
        keep = np.array([c in c2g for c in classes], dtype=bool)
        out.append((nodes[keep],
                    np.array([c2g[c] for c in classes[keep]], dtype=np.int64)))
    return out


def pseudo_targets(alignment, layer_widths, nodes, ref_groups):
    """Per-layer (node, group) supervision from ensemble pseudo-labels.

    ref_groups live in the reference (layer-1) space; each layer's alignment
    permutation is inverted to find the local group, and nodes mapping onto a
    padded column are skipped for that layer.
    """
    nodes = np.asarray(nodes, dtype=np.int64)
    ref_groups = np.asarray(ref_groups, dtype=np.int64)
    out = []
    for perm, width in zip(alignment, layer_widths):
        inv = np.argsort(perm)
        local = inv[ref_groups]
        keep = local < width
        out.append((nodes[keep], local[keep]))
    return out


def _merge_targets(a, b):
    return [(np.concatenate([x[0], y[0]]), np.concatenate([x[1], y[1]]))
            for x, y in zip(a, b)]


def total_loss(l_ce, l_reg, l_con) -> torch.Tensor:
    """Unweighted sum of the three loss components."""
    parts = [torch.as_tensor(x, dtype=torch.float64) for x in (l_ce, l_reg, l_con)]
    for name, x in zip(("ce", "reg", "con"), parts):
        if not torch.isfinite(x):
            raise DivergenceError(f"non-finite {name} loss component: {x}")
    return parts[0] + parts[1] + parts[2]


def fit(g: AttributedGraph, split: OpenWorldSplit, *,
        n_prototypes: int = 40, topk: int = 3, n_layers: int = 3,
        hidden_dim: int = 64, activation: str = "relu",
        attention: str = "group", learning_rate: float = 0.01,
        max_iterations: int = 200, refine_period: int = 50,
        eta: float = 0.01, gamma: float = 0.3, mu: float = 0.015,
        refine_enabled: bool = True, edge_drop_rate: float = 0.2,
        feature_mask_rate: float = 0.1, granularity_fixed: int | None = None,
        granularity_min: int | None = None, granularity_max: int | None = None,
        pseudo_supervision: bool = True, seed: int = 0,
        convergence_tol: float = 1e-4,
        convergence_window: int = 10) -> tuple[PanStack, TrainState]:
    """Train the stack per the outer loop: forward, losses, step, refine.

    Granularity search runs at epoch 0 and after every refinement; in
    between, each layer reuses its last best group count. The consistency
    term scores a per-epoch augmented view under the clean view's partitions.
    Stops early when the relative total-loss change stays below
    convergence_tol for convergence_window consecutive epochs.
    """
    rng = np.random.default_rng(seed)
    labeled_idx = np.asarray(split.train_nodes, dtype=np.int64)
    labeled_classes = g.labels[labeled_idx]
    n_known = len(np.unique(labeled_classes))
    lo, hi = default_granularity_range(n_known, n_prototypes)
    n_range = (granularity_min if granularity_min is not None else lo,
               granularity_max if granularity_max is not None else hi)
    unlabeled = np.array(sorted(set(range(g.node_count)) - set(split.train_nodes)),
                         dtype=np.int64)

    stack = build_stack(g.feature_dim, hidden_dim, n_layers, activation, rng,
                        n_prototypes)
    state = TrainState(edges=g.edges)

    fwd = dict(topk=topk, n_range=n_range, fixed_n=granularity_fixed,
               cluster_seed=seed, attention=attention)
    if max_iterations == 0:
        stack_forward(g.features, state.edges, stack, labeled_idx,
                      labeled_classes, search=True, init_rng=rng, **fwd)
        state.granularities.append([layer.best_n for layer in stack.layers])
        return stack, state

    optimizer = None
    use_pseudo = False
    search = True
    for epoch in range(max_iterations):
        states = stack_forward(g.features, state.edges, stack, labeled_idx,
                               labeled_classes, search=search, init_rng=rng, **fwd)
        if search:
            state.granularities.append([layer.best_n for layer in stack.layers])
        search = False
        if optimizer is None:
            optimizer = torch.optim.Adam(stack.parameters(), lr=learning_rate)

        aug_seed = int(rng.integers(2 ** 62))
        view = augment(replace(g, edges=state.edges), edge_drop_rate,
                       feature_mask_rate, aug_seed)
        aug_states = stack_forward(view.features, view.edges, stack, labeled_idx,
                                   labeled_classes, search=False,
                                   fixed_states=states, **fwd)

        targets = class_targets([s.matching for s in states],
                                labeled_idx, labeled_classes)
        if use_pseudo and pseudo_supervision:
            preds = [s.p.detach().numpy() for s in states]
            ens, conf = pl.generate(preds, unlabeled, eta, gamma)
            pnodes = np.concatenate([m for m in conf.members]) if conf.total else np.empty(0, dtype=np.int64)
            pgroups = np.concatenate(
                [np.full(len(m), k) for k, m in enumerate(conf.members)]
            ).astype(np.int64) if conf.total else np.empty(0, dtype=np.int64)
            widths = [s.p.shape[1] for s in states]
            targets = _merge_targets(
                targets, pseudo_targets(ens.alignment, widths, pnodes, pgroups))

        l_ce = ce_loss([s.p for s in states], targets)
        l_reg = sum(balance_regularizer(s.r) for s in states)
        l_con = consistency_loss([s.p for s in states], [s.p for s in aug_states])
        try:
            loss = total_loss(l_ce, l_reg, l_con)
        except DivergenceError as err:
            err.state = state
            raise
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        state.epoch = epoch + 1
        state.history.append({"total": float(loss.detach()),
                              "ce": float(l_ce.detach()),
                              "reg": float(l_reg.detach()),
                              "con": float(l_con.detach())})

        if refine_enabled and (epoch + 1) % refine_period == 0 and epoch + 1 < max_iterations:
            preds = [s.p.detach().numpy() for s in states]
            _, conf = pl.generate(preds, unlabeled, eta, gamma)
            r_layers = [s.r.detach().numpy() for s in states]
            result = refine(state.edges, conf, r_layers, mu, g.node_count)
            state.refinements.append({"epoch": epoch + 1,
                                      "recovered": len(result.recovered),
                                      "removed": len(result.removed)})
            state.edges = result.refined
            use_pseudo = True
            search = True

        if len(state.history) > convergence_window:
            window = [h["total"] for h in state.history[-(convergence_window + 1):]]
            rel = [abs(b - a) / max(abs(a), 1e-12)
                   for a, b in zip(window, window[1:])]
            if max(rel) < convergence_tol:
                state.converged = True
                break
    return stack, state


def grad_check(stack: PanStack, g: AttributedGraph, labeled_idx, labeled_classes,
               *, topk: int = 3, attention: str = "group", n_probes: int = 20,
               step: float = 1e-5, seed: int = 0, edge_drop_rate: float = 0.2,
               feature_mask_rate: float = 0.1) -> float:
    """Max relative error between autograd and central finite differences.

    Partitions, matchings, top-k sets, supervision targets, and the
    augmented view are frozen before probing, so the loss is smooth in the
    parameters except at rectifier kinks; probes whose pre-activation sign
    pattern flips between the two difference evaluations are resampled.
    """
    rng = np.random.default_rng(seed)
    labeled_idx = np.asarray(labeled_idx, dtype=np.int64)
    labeled_classes = np.asarray(labeled_classes, dtype=np.int64)
    n_known = len(np.unique(labeled_classes))
    first = stack.layers[0]
    n_pro = (first.prototypes.shape[0] if first.prototypes is not None
             else first.n_prototypes_pending)
    n_range = default_granularity_range(n_known, n_pro)
    frozen = stack_forward(g.features, g.edges, stack, labeled_idx, labeled_classes,
                           topk=topk, n_range=n_range, fixed_n=None, search=True,
                           cluster_seed=seed, attention=attention, init_rng=rng)
    view = augment(g, edge_drop_rate, feature_mask_rate, seed)
    targets = class_targets([s.matching for s in frozen], labeled_idx, labeled_classes)

    def evaluate():
        states = stack_forward(g.features, g.edges, stack, labeled_idx,
                               labeled_classes, topk=topk, n_range=n_range,
                               fixed_n=None, search=False, cluster_seed=seed,
                               attention=attention, fixed_states=frozen)
        aug = stack_forward(view.features, view.edges, stack, labeled_idx,
                            labeled_classes, topk=topk, n_range=n_range,
                            fixed_n=None, search=False, cluster_seed=seed,
                            attention=attention, fixed_states=frozen)
        loss = total_loss(ce_loss([s.p for s in states], targets),
                          sum(balance_regularizer(s.r) for s in states),
                          consistency_loss([s.p for s in states],
                                           [s.p for s in aug]))
        signs = [s.preact.detach() > 0 for s in states + aug]
        return loss, signs

    loss, _ = evaluate()
    params = stack.parameters()
    # The deepest layer's weight only shapes an output no loss term reads, so
    # its analytic gradient is identically zero; substitute explicit zeros and
    # let the finite differences confirm the flatness.
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    grads = [gr if gr is not None else torch.zeros_like(pa)
             for gr, pa in zip(grads, params)]
    # Roundoff in the difference quotient scales with the loss magnitude:
    # coordinates whose true gradient sits below this floor are unresolvable.
    floor = 1e-6 * max(1.0, abs(float(loss.detach())))

    worst = 0.0
    probes_done = 0
    attempts = 0
    while probes_done < n_probes and attempts < 20 * n_probes:
        attempts += 1
        pi = int(rng.integers(len(params)))
        flat = int(rng.integers(params[pi].numel()))
        idx = np.unravel_index(flat, params[pi].shape)
        with torch.no_grad():
            orig = float(params[pi][idx])
            params[pi][idx] = orig + step
            up, signs_up = evaluate()
            params[pi][idx] = orig - step
            down, signs_down = evaluate()
            params[pi][idx] = orig
        if any(not torch.equal(a, b) for a, b in zip(signs_up, signs_down)):
            continue  # straddles a rectifier kink; try another coordinate
        fd = (float(up) - float(down)) / (2 * step)
        an = float(grads[pi][idx])
        rel = abs(an - fd) / max(abs(an), abs(fd), floor)
        worst = max(worst, rel)
        probes_done += 1
    return worst


CHECKPOINT_VERSION = 1


def save_checkpoint(path, stack: PanStack, edges, attention: str = "group"):
    """Serialize weights, prototypes, chosen granularities, and the edge set."""
    arrays = {
        "version": np.array(CHECKPOINT_VERSION),
        "n_layers": np.array(stack.n_layers),
        "activation": np.array(stack.layers[0].activation),
        "attention": np.array(attention),
        "best_n": np.array([layer.best_n if layer.best_n is not None else 0
                            for layer in stack.layers]),
        "edges": np.array(sorted(edges), dtype=np.int64).reshape(-1, 2),
    }
    for i, layer in enumerate(stack.layers):
        arrays[f"weight_{i}"] = layer.weight.detach().numpy()
        arrays[f"prototypes_{i}"] = (layer.prototypes.detach().numpy()
                                     if layer.prototypes is not None
                                     else np.empty((0, 0)))
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns (stack, edges, attention)."""
    data = np.load(path, allow_pickle=False)
    if int(data["version"]) != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {int(data['version'])}")
    layers = []
    for i in range(int(data["n_layers"])):
        layer = PanLayer(torch.tensor(data[f"weight_{i}"], dtype=torch.float64,
                                      requires_grad=True),
                         str(data["activation"]))
        protos = data[f"prototypes_{i}"]
        if protos.size:
            layer.prototypes = torch.tensor(protos, dtype=torch.float64,
                                            requires_grad=True)
        best = int(data["best_n"][i])
        layer.best_n = best if best > 0 else None
        layers.append(layer)
    edges = frozenset((int(u), int(v)) for u, v in data["edges"])
    return PanStack(layers), edges, str(data["attention"])
