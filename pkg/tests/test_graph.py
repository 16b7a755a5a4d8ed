"""Graph container, dataset I/O, benchmark generator, and split protocol.

Oracle notes: save/load is checked as a round trip, the generator against
binomial edge-count statistics and an exact per-seed determinism replay,
and the split against partition/purity properties that hold for any valid
open-world split.
"""

import numpy as np
import pytest

from owgraph.graph import (
    AttributedGraph,
    GraphFormatError,
    OpenWorldSplit,
    SbmSpec,
    SplitError,
    apply_split,
    canonical_edge,
    generate_sbm,
    load_graph,
    load_split,
    make_open_world_split,
    neighborhood,
    save_graph,
    save_split,
)


def small_graph():
    feats = np.arange(12, dtype=np.float64).reshape(4, 3)
    labels = np.array([0, 1, -1, -1], dtype=np.int64)
    mask = np.array([True, True, False, False])
    edges = frozenset({(0, 1), (1, 2), (0, 3)})
    return AttributedGraph(features=feats, edges=edges, labels=labels, label_mask=mask)


# ---------------------------------------------------------------- container


def test_canonical_edge_orders_endpoints():
    assert canonical_edge(3, 1) == (1, 3)
    assert canonical_edge(1, 3) == (1, 3)


def test_container_basic_properties():
    g = small_graph()
    assert g.node_count == 4
    assert g.feature_dim == 3
    arr = g.edge_array()
    assert arr.shape == (3, 2)
    # sorted lexicographically, canonical orientation
    assert arr.tolist() == [[0, 1], [0, 3], [1, 2]]
    assert g.degrees().tolist() == [2, 2, 1, 1]


def test_container_rejects_self_loop():
    feats = np.zeros((3, 2))
    labels = np.full(3, -1, dtype=np.int64)
    with pytest.raises(GraphFormatError):
        AttributedGraph(features=feats, edges=frozenset({(1, 1)}),
                        labels=labels, label_mask=labels >= 0)


def test_container_rejects_noncanonical_edge():
    feats = np.zeros((3, 2))
    labels = np.full(3, -1, dtype=np.int64)
    with pytest.raises(GraphFormatError):
        AttributedGraph(features=feats, edges=frozenset({(2, 0)}),
                        labels=labels, label_mask=labels >= 0)


def test_container_rejects_out_of_range_edge():
    feats = np.zeros((3, 2))
    labels = np.full(3, -1, dtype=np.int64)
    with pytest.raises(GraphFormatError):
        AttributedGraph(features=feats, edges=frozenset({(0, 5)}),
                        labels=labels, label_mask=labels >= 0)


def test_container_rejects_mask_without_label():
    feats = np.zeros((2, 2))
    labels = np.array([-1, 0], dtype=np.int64)
    mask = np.array([True, True])  # node 0 masked but unlabeled
    with pytest.raises(GraphFormatError):
        AttributedGraph(features=feats, edges=frozenset(), labels=labels, label_mask=mask)


def test_neighborhood_matches_edge_scan():
    g = small_graph()
    assert neighborhood(g, 0) == {1, 3}
    assert neighborhood(g, 1) == {0, 2}
    assert neighborhood(g, 2) == {1}
    with pytest.raises(IndexError):
        neighborhood(g, 4)


# ---------------------------------------------------------------- file I/O


def test_save_load_round_trip(tmp_path):
    g = small_graph()
    save_graph(g, tmp_path / "d")
    back = load_graph(tmp_path / "d")
    np.testing.assert_allclose(back.features, g.features)
    assert back.edges == g.edges
    assert back.labels.tolist() == g.labels.tolist()
    assert back.label_mask.tolist() == g.label_mask.tolist()


def test_load_missing_file_raises(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3,4\n")
    (d / "edges.csv").write_text("0,1\n")
    # labels.csv missing
    with pytest.raises(GraphFormatError):
        load_graph(d)


def test_load_ragged_features_raises(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3\n")
    (d / "edges.csv").write_text("")
    (d / "labels.csv").write_text("")
    with pytest.raises(GraphFormatError):
        load_graph(d)


def test_load_edge_out_of_range_raises(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3,4\n")
    (d / "edges.csv").write_text("0,2\n")
    (d / "labels.csv").write_text("")
    with pytest.raises(GraphFormatError):
        load_graph(d)


def test_load_self_loop_raises(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3,4\n")
    (d / "edges.csv").write_text("1,1\n")
    (d / "labels.csv").write_text("")
    with pytest.raises(GraphFormatError):
        load_graph(d)


def test_load_conflicting_duplicate_label_raises(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3,4\n")
    (d / "edges.csv").write_text("")
    (d / "labels.csv").write_text("0,1\n0,2\n")
    with pytest.raises(GraphFormatError):
        load_graph(d)


def test_load_duplicate_consistent_label_ok(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3,4\n")
    (d / "edges.csv").write_text("")
    (d / "labels.csv").write_text("0,1\n0,1\n")
    g = load_graph(d)
    assert g.labels[0] == 1 and not g.label_mask[1]


def test_load_deduplicates_reversed_edges(tmp_path):
    d = tmp_path / "d"
    d.mkdir()
    (d / "features.csv").write_text("1,2\n3,4\n5,6\n")
    (d / "edges.csv").write_text("1,0\n0,1\n2,0\n")
    (d / "labels.csv").write_text("")
    g = load_graph(d)
    assert g.edges == frozenset({(0, 1), (0, 2)})


def test_split_save_load_round_trip(tmp_path):
    split = OpenWorldSplit(
        known_classes=frozenset({0, 1}),
        all_classes=frozenset({0, 1, 2}),
        train_nodes=(0, 1),
        val_nodes=(2,),
        test_nodes=(3, 4, 5),
    )
    save_split(split, tmp_path / "split.json")
    back = load_split(tmp_path / "split.json")
    assert back == split


# ------------------------------------------------------------ benchmark gen


def test_sbm_deterministic_per_seed():
    spec = SbmSpec(class_sizes=(20, 20), intra_edge_prob=0.3, inter_edge_prob=0.05,
                   feature_dim=4, class_mean_separation=2.0, feature_noise_std=0.5,
                   seed=7)
    g1, y1 = generate_sbm(spec)
    g2, y2 = generate_sbm(spec)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(g1.features, g2.features)
    assert g1.edges == g2.edges


def test_sbm_block_labels_and_feature_means():
    spec = SbmSpec(class_sizes=(50, 30), intra_edge_prob=0.4, inter_edge_prob=0.02,
                   feature_dim=5, class_mean_separation=10.0, feature_noise_std=0.1,
                   seed=3)
    g, y = generate_sbm(spec)
    assert y.tolist() == [0] * 50 + [1] * 30
    assert np.all(g.label_mask)
    # with tiny noise each block's empirical mean should sit near its planted mean
    m0 = g.features[:50].mean(axis=0)
    m1 = g.features[50:].mean(axis=0)
    assert abs(m0[0] - 10.0) < 0.2 and abs(m0[1]) < 0.2
    assert abs(m1[1] - 10.0) < 0.2 and abs(m1[0]) < 0.2


def test_sbm_edge_counts_match_binomial_oracle():
    # oracle: intra/inter edge counts are Binomial(pairs, p); check the mean
    # over several seeds lands within 5 sigma of the analytic expectation.
    sizes = (40, 40)
    intra_pairs = 2 * (40 * 39 // 2)
    inter_pairs = 40 * 40
    p_in, p_out = 0.2, 0.05
    intra_counts, inter_counts = [], []
    for seed in range(8):
        spec = SbmSpec(class_sizes=sizes, intra_edge_prob=p_in, inter_edge_prob=p_out,
                       feature_dim=3, class_mean_separation=1.0, feature_noise_std=1.0,
                       seed=seed)
        g, y = generate_sbm(spec)
        arr = g.edge_array()
        same = y[arr[:, 0]] == y[arr[:, 1]]
        intra_counts.append(int(same.sum()))
        inter_counts.append(int((~same).sum()))
    n_rep = len(intra_counts)
    for counts, pairs, p in ((intra_counts, intra_pairs, p_in),
                             (inter_counts, inter_pairs, p_out)):
        mean = np.mean(counts)
        sigma = np.sqrt(pairs * p * (1 - p) / n_rep)
        assert abs(mean - pairs * p) < 5 * sigma


def test_sbm_rejects_inverted_probabilities():
    with pytest.raises(ValueError):
        SbmSpec(class_sizes=(10, 10), intra_edge_prob=0.05, inter_edge_prob=0.3,
                feature_dim=3, class_mean_separation=1.0, feature_noise_std=1.0, seed=0)


def test_sbm_rejects_narrow_feature_dim():
    with pytest.raises(ValueError):
        SbmSpec(class_sizes=(10, 10, 10), intra_edge_prob=0.3, inter_edge_prob=0.05,
                feature_dim=2, class_mean_separation=1.0, feature_noise_std=1.0, seed=0)


# ------------------------------------------------------------------- splits


def full_sbm(seed=0):
    spec = SbmSpec(class_sizes=(30, 30, 30, 30), intra_edge_prob=0.3,
                   inter_edge_prob=0.02, feature_dim=6, class_mean_separation=3.0,
                   feature_noise_std=1.0, seed=seed)
    return generate_sbm(spec)


def test_split_partitions_all_nodes():
    g, y = full_sbm()
    split = make_open_world_split(g, known_class_fraction=0.5,
                                  train_fraction=0.5, val_fraction=0.2, seed=11)
    parts = [set(split.train_nodes), set(split.val_nodes), set(split.test_nodes)]
    union = parts[0] | parts[1] | parts[2]
    assert union == set(range(g.node_count))
    assert sum(len(p) for p in parts) == g.node_count  # pairwise disjoint


def test_split_train_val_are_known_pure_and_novel_in_test():
    g, y = full_sbm(seed=1)
    split = make_open_world_split(g, known_class_fraction=0.5,
                                  train_fraction=0.5, val_fraction=0.2, seed=5)
    known = split.known_classes
    assert known < split.all_classes  # strict subset: at least one novel class
    for v in split.train_nodes + split.val_nodes:
        assert int(y[v]) in known
    novel_nodes = {v for v in range(g.node_count) if int(y[v]) not in known}
    assert novel_nodes <= set(split.test_nodes)


def test_split_respects_per_class_fractions():
    g, y = full_sbm(seed=2)
    split = make_open_world_split(g, known_class_fraction=0.5,
                                  train_fraction=0.5, val_fraction=0.2, seed=9)
    for cls in split.known_classes:
        members = {v for v in range(g.node_count) if int(y[v]) == cls}
        n_tr = len(members & set(split.train_nodes))
        n_va = len(members & set(split.val_nodes))
        assert n_tr == 15  # round(0.5 * 30)
        assert n_va == 6   # round(0.2 * 30)


def test_split_deterministic_per_seed():
    g, _ = full_sbm(seed=3)
    s1 = make_open_world_split(g, 0.5, 0.5, 0.2, seed=42)
    s2 = make_open_world_split(g, 0.5, 0.5, 0.2, seed=42)
    assert s1 == s2


def test_split_known_count_clamped():
    g, _ = full_sbm(seed=4)
    # fraction 0.99 of 4 classes rounds to 4, must clamp to 3 (strict subset)
    split = make_open_world_split(g, 0.99, 0.5, 0.2, seed=0)
    assert len(split.known_classes) == 3
    # fraction 0.01 rounds to 0, must clamp to 1
    split = make_open_world_split(g, 0.01, 0.5, 0.2, seed=0)
    assert len(split.known_classes) == 1


def test_split_rejects_partial_labels():
    g = small_graph()
    with pytest.raises(SplitError):
        make_open_world_split(g, 0.5, 0.5, 0.2, seed=0)


def test_split_rejects_bad_fractions():
    g, _ = full_sbm(seed=5)
    with pytest.raises(SplitError):
        make_open_world_split(g, 0.5, 0.8, 0.3, seed=0)  # sums past 1
    with pytest.raises(SplitError):
        make_open_world_split(g, 0.0, 0.5, 0.2, seed=0)
    with pytest.raises(SplitError):
        make_open_world_split(g, 0.5, 1.0, 0.2, seed=0)


def test_split_validates_membership_relations():
    with pytest.raises(SplitError):
        OpenWorldSplit(known_classes=frozenset({0, 1}), all_classes=frozenset({0, 1}),
                       train_nodes=(0,), val_nodes=(1,), test_nodes=(2,))
    with pytest.raises(SplitError):
        OpenWorldSplit(known_classes=frozenset({0}), all_classes=frozenset({0, 1}),
                       train_nodes=(0, 1), val_nodes=(1,), test_nodes=(2,))


def test_apply_split_narrows_mask_only():
    g, y = full_sbm(seed=6)
    split = make_open_world_split(g, 0.5, 0.5, 0.2, seed=1)
    view = apply_split(g, split)
    assert view.label_mask.sum() == len(split.train_nodes)
    assert set(np.flatnonzero(view.label_mask)) == set(split.train_nodes)
    np.testing.assert_array_equal(view.labels, g.labels)  # labels untouched


def test_two_cliques_example():
    # hand-built graph: two 3-cliques joined by one bridge edge
    feats = np.zeros((6, 2))
    feats[:3, 0] = 1.0
    feats[3:, 1] = 1.0
    edges = frozenset({(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5), (2, 3)})
    labels = np.array([0, 0, 0, 1, 1, 1], dtype=np.int64)
    g = AttributedGraph(features=feats, edges=edges, labels=labels,
                        label_mask=np.ones(6, dtype=bool))
    assert g.degrees().tolist() == [2, 2, 3, 3, 2, 2]
    assert neighborhood(g, 2) == {0, 1, 3}
    assert neighborhood(g, 3) == {2, 4, 5}
