"""Attributed-graph data model, dataset directory I/O, open-world splits, and
synthetic block-model benchmarks.

Dataset directory layout (UTF-8 text):

    <dir>/
      features.csv   one row per node, comma-separated reals; row index = node id
      edges.csv      rows "u,v" of integer node ids; each undirected edge may be
                     listed once (duplicates in either orientation are merged)
      labels.csv     rows "node_id,class_id"; absent rows mean unlabeled

Splits are stored as ``split.json`` with keys ``known_classes``,
``all_classes``, ``train_nodes``, ``val_nodes``, ``test_nodes``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np


class GraphFormatError(ValueError):
    """Raised for missing, malformed, or inconsistent dataset files."""


class SplitError(ValueError):
    """Raised when an open-world split cannot be constructed as requested."""


Edge = tuple[int, int]


def canonical_edge(u: int, v: int) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class AttributedGraph:
    """Undirected attributed graph with optional per-node labels.

    ``edges`` holds each undirected edge once as a (u, v) pair with u < v.
    ``labels`` uses -1 for "no label"; ``label_mask`` marks labels visible to
    training (every masked-true node must carry a label).
    """

    features: np.ndarray
    edges: frozenset[Edge]
    labels: np.ndarray
    label_mask: np.ndarray

    def __post_init__(self):
        n = self.features.shape[0]
        if self.features.ndim != 2:
            raise GraphFormatError("features must be a 2-d matrix")
        if self.labels.shape != (n,) or self.label_mask.shape != (n,):
            raise GraphFormatError("labels/label_mask length must match node count")
        for u, v in self.edges:
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(f"edge ({u},{v}) out of range for {n} nodes")
            if u == v:
                raise GraphFormatError(f"self-loop ({u},{v}) is not allowed")
            if u > v:
                raise GraphFormatError(f"edge ({u},{v}) is not in canonical (u<v) order")
        if np.any(self.label_mask & (self.labels < 0)):
            raise GraphFormatError("label_mask is set on a node without a label")

    @property
    def node_count(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def edge_array(self) -> np.ndarray:
        """Edges as a sorted (E, 2) int array; deterministic iteration order."""
        if not self.edges:
            return np.zeros((0, 2), dtype=np.int64)
        return np.array(sorted(self.edges), dtype=np.int64)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.node_count, dtype=np.int64)
        for u, v in self.edges:
            deg[u] += 1
            deg[v] += 1
        return deg


@dataclass(frozen=True)
class OpenWorldSplit:
    """Known/novel class split with disjoint train/val/test node sets."""

    known_classes: frozenset[int]
    all_classes: frozenset[int]
    train_nodes: tuple[int, ...]
    val_nodes: tuple[int, ...]
    test_nodes: tuple[int, ...]

    def __post_init__(self):
        if not self.known_classes < self.all_classes:
            raise SplitError("known classes must be a strict subset of all classes")
        parts = [set(self.train_nodes), set(self.val_nodes), set(self.test_nodes)]
        total = sum(len(p) for p in parts)
        if len(parts[0] | parts[1] | parts[2]) != total:
            raise SplitError("train/val/test node sets must be pairwise disjoint")

    @property
    def novel_classes(self) -> frozenset[int]:
        return self.all_classes - self.known_classes


@dataclass(frozen=True)
class SbmSpec:
    """Stochastic block model with Gaussian class features on orthogonal axes."""

    class_sizes: tuple[int, ...]
    intra_edge_prob: float
    inter_edge_prob: float
    feature_dim: int
    class_mean_separation: float
    feature_noise_std: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "class_sizes", tuple(int(s) for s in self.class_sizes))
        if not self.class_sizes or any(s <= 0 for s in self.class_sizes):
            raise ValueError("class_sizes must be positive integers")
        for p in (self.intra_edge_prob, self.inter_edge_prob):
            if not 0.0 <= p <= 1.0:
                raise ValueError("edge probabilities must lie in [0, 1]")
        if self.intra_edge_prob <= self.inter_edge_prob:
            raise ValueError("intra_edge_prob must exceed inter_edge_prob")
        if self.feature_dim < len(self.class_sizes):
            raise ValueError("feature_dim must be at least the number of classes "
                             "(class means sit on orthogonal axes)")
        if self.feature_noise_std < 0:
            raise ValueError("feature_noise_std must be nonnegative")


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def load_graph(path) -> AttributedGraph:
    """Load a dataset directory into an AttributedGraph.

    Raises GraphFormatError on missing files, malformed rows, out-of-range
    node ids, or conflicting duplicate label rows.
    """
    root = Path(path)
    feat_path = root / "features.csv"
    edge_path = root / "edges.csv"
    label_path = root / "labels.csv"
    for p in (feat_path, edge_path, label_path):
        if not p.is_file():
            raise GraphFormatError(f"missing dataset file: {p}")

    rows = []
    width = None
    with feat_path.open(newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise GraphFormatError(
                    f"features.csv line {lineno}: expected {width} values, got {len(row)}")
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise GraphFormatError(f"features.csv line {lineno}: {exc}") from exc
    if not rows:
        raise GraphFormatError("features.csv contains no rows")
    features = np.asarray(rows, dtype=np.float64)
    n = features.shape[0]

    edges: set[Edge] = set()
    with edge_path.open(newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise GraphFormatError(f"edges.csv line {lineno}: expected 'u,v'")
            try:
                u, v = int(row[0]), int(row[1])
            except ValueError as exc:
                raise GraphFormatError(f"edges.csv line {lineno}: {exc}") from exc
            if not (0 <= u < n and 0 <= v < n):
                raise GraphFormatError(
                    f"edges.csv line {lineno}: node index out of range ({u},{v}) for {n} nodes")
            if u == v:
                raise GraphFormatError(f"edges.csv line {lineno}: self-loop ({u},{v})")
            edges.add(canonical_edge(u, v))

    labels = np.full(n, -1, dtype=np.int64)
    with label_path.open(newline="") as f:
        for lineno, row in enumerate(csv.reader(f), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise GraphFormatError(f"labels.csv line {lineno}: expected 'node_id,class_id'")
            try:
                node, cls = int(row[0]), int(row[1])
            except ValueError as exc:
                raise GraphFormatError(f"labels.csv line {lineno}: {exc}") from exc
            if not 0 <= node < n:
                raise GraphFormatError(f"labels.csv line {lineno}: node index {node} out of range")
            if cls < 0:
                raise GraphFormatError(f"labels.csv line {lineno}: negative class id {cls}")
            if labels[node] >= 0 and labels[node] != cls:
                raise GraphFormatError(
                    f"labels.csv line {lineno}: conflicting labels for node {node}")
            labels[node] = cls

    return AttributedGraph(features=features, edges=frozenset(edges),
                           labels=labels, label_mask=labels >= 0)


def save_graph(g: AttributedGraph, path) -> None:
    """Write the dataset directory format; only masked labels are emitted."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    np.savetxt(root / "features.csv", g.features, delimiter=",", fmt="%.17g")
    with (root / "edges.csv").open("w") as f:
        for u, v in sorted(g.edges):
            f.write(f"{u},{v}\n")
    with (root / "labels.csv").open("w") as f:
        for node in np.flatnonzero(g.label_mask):
            f.write(f"{node},{g.labels[node]}\n")


def save_split(split: OpenWorldSplit, path) -> None:
    payload = {
        "known_classes": sorted(split.known_classes),
        "all_classes": sorted(split.all_classes),
        "train_nodes": list(split.train_nodes),
        "val_nodes": list(split.val_nodes),
        "test_nodes": list(split.test_nodes),
    }
    Path(path).write_text(json.dumps(payload, indent=1))


def load_split(path) -> OpenWorldSplit:
    payload = json.loads(Path(path).read_text())
    return OpenWorldSplit(
        known_classes=frozenset(payload["known_classes"]),
        all_classes=frozenset(payload["all_classes"]),
        train_nodes=tuple(payload["train_nodes"]),
        val_nodes=tuple(payload["val_nodes"]),
        test_nodes=tuple(payload["test_nodes"]),
    )


def make_open_world_split(g: AttributedGraph, known_class_fraction: float,
                          train_fraction: float, val_fraction: float,
                          seed: int) -> OpenWorldSplit:
    """Sample an open-world split of a fully labeled benchmark graph.

    A round(known_class_fraction * n_classes) subset of classes (clamped to
    [1, n_classes - 1], drawn uniformly at random) becomes the known set.
    Within each known class, train_fraction of its nodes go to train and
    val_fraction to validation; every remaining node, including all
    novel-class nodes, lands in test.
    """
    if not np.all(g.label_mask):
        raise SplitError("open-world splitting requires a fully labeled graph")
    for name, f in (("known_class_fraction", known_class_fraction),
                    ("train_fraction", train_fraction),
                    ("val_fraction", val_fraction)):
        if not 0.0 < f < 1.0:
            raise SplitError(f"{name} must lie strictly inside (0, 1), got {f}")
    if train_fraction + val_fraction >= 1.0:
        raise SplitError("train_fraction + val_fraction must be < 1")

    classes = np.unique(g.labels)
    n_classes = len(classes)
    if n_classes < 2:
        raise SplitError("need at least two classes for an open-world split")
    n_known = min(max(_round_half_up(known_class_fraction * n_classes), 1), n_classes - 1)

    rng = np.random.default_rng(seed)
    known = np.sort(rng.choice(classes, size=n_known, replace=False))
    known_set = frozenset(int(c) for c in known)

    train, val, test = [], [], []
    for cls in classes:
        members = np.flatnonzero(g.labels == cls)
        if int(cls) not in known_set:
            test.extend(members.tolist())
            continue
        perm = rng.permutation(members)
        n_c = len(members)
        n_tr = _round_half_up(train_fraction * n_c)
        n_va = min(_round_half_up(val_fraction * n_c), n_c - n_tr)
        train.extend(perm[:n_tr].tolist())
        val.extend(perm[n_tr:n_tr + n_va].tolist())
        test.extend(perm[n_tr + n_va:].tolist())

    if not train:
        raise SplitError("split fractions produced an empty train set")
    if not test:
        raise SplitError("split fractions produced an empty test set")

    return OpenWorldSplit(
        known_classes=known_set,
        all_classes=frozenset(int(c) for c in classes),
        train_nodes=tuple(sorted(train)),
        val_nodes=tuple(sorted(val)),
        test_nodes=tuple(sorted(test)),
    )


def apply_split(g: AttributedGraph, split: OpenWorldSplit) -> AttributedGraph:
    """Training view of g: labels remain stored, mask narrowed to train nodes."""
    mask = np.zeros(g.node_count, dtype=bool)
    mask[list(split.train_nodes)] = True
    return replace(g, label_mask=mask)


def generate_sbm(spec: SbmSpec) -> tuple[AttributedGraph, np.ndarray]:
    """Sample a planted-partition benchmark graph.

    Class c's feature mean is class_mean_separation along axis c; per-node
    features add isotropic Gaussian noise. Bitwise-deterministic per seed.
    """
    rng = np.random.default_rng(spec.seed)
    sizes = spec.class_sizes
    n = sum(sizes)
    y = np.repeat(np.arange(len(sizes)), sizes).astype(np.int64)

    means = np.zeros((len(sizes), spec.feature_dim))
    for c in range(len(sizes)):
        means[c, c] = spec.class_mean_separation
    features = means[y] + rng.normal(0.0, spec.feature_noise_std, size=(n, spec.feature_dim))

    iu, ju = np.triu_indices(n, k=1)
    probs = np.where(y[iu] == y[ju], spec.intra_edge_prob, spec.inter_edge_prob)
    hits = rng.random(len(iu)) < probs
    edges = frozenset((int(u), int(v)) for u, v in zip(iu[hits], ju[hits]))

    g = AttributedGraph(features=features, edges=edges, labels=y,
                        label_mask=np.ones(n, dtype=bool))
    return g, y


def neighborhood(g: AttributedGraph, v: int) -> set[int]:
    """All nodes adjacent to v; excludes v itself."""
    if not 0 <= v < g.node_count:
        raise IndexError(f"node index {v} out of range for {g.node_count} nodes")
    out = set()
    for a, b in g.edges:
        if a == v:
            out.add(b)
        elif b == v:
            out.add(a)
    return out
