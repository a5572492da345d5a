import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphmemad.errors import ConfigError, GraphShapeError, ParseError, RangeError
from graphmemad.graph import (VAR_FLOOR, Graph, InjectionSpec, build_laplacian_bundle,
                              cached_laplacian_bundle, extract_k_hop_subgraph, generate_sbm,
                              inject_anomalies, load_graph, neighborhood_statistics,
                              neighborhood_table, save_graph)

from .oracles import all_pairs_hops, k_hop_oracle, neighborhood_oracle, random_graph


def cycle(n, d=2):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], np.zeros((n, d)))


def check_graph_invariants(g):
    a = g.adjacency
    assert np.array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)
    assert set(np.unique(a)) <= {0.0, 1.0}


# ---------------------------------------------------------------- loading


def write(path, text):
    path.write_text(text)
    return path


def test_load_two_nodes_no_edges(tmp_path):
    g = load_graph(write(tmp_path / "n.csv", "1,2\n3,4\n"), write(tmp_path / "e.csv", ""))
    assert g.n == 2 and g.d == 2
    assert np.array_equal(g.adjacency, np.zeros((2, 2)))
    assert g.labels is None


def test_load_symmetrizes_duplicate_edges(tmp_path):
    g = load_graph(write(tmp_path / "n.csv", "0\n0\n0\n"), write(tmp_path / "e.csv", "0,1\n1,0\n0,1\n"))
    assert g.adjacency[0, 1] == g.adjacency[1, 0] == 1
    assert g.num_edges == 1


def test_load_drops_self_loops_with_warning(tmp_path, caplog):
    with caplog.at_level(logging.WARNING):
        g = load_graph(write(tmp_path / "n.csv", "0\n0\n"), write(tmp_path / "e.csv", "0,0\n0,1\n1,1\n"))
    assert g.num_edges == 1
    assert "dropped 2 self-loop" in caplog.text


def test_load_labels(tmp_path):
    g = load_graph(write(tmp_path / "n.csv", "0\n0\n0\n"), write(tmp_path / "e.csv", "0,2\n"),
                   write(tmp_path / "l.csv", "0\n1\n0\n"))
    assert g.labels.tolist() == [0, 1, 0]


def test_load_malformed_row_names_file_and_line(tmp_path):
    nodes = write(tmp_path / "n.csv", "0\n0\n")
    edges = write(tmp_path / "e.csv", "0,1\nzero,1\n")
    with pytest.raises(ParseError, match=r"e\.csv:2"):
        load_graph(nodes, edges)


def test_load_out_of_range(tmp_path):
    with pytest.raises(RangeError):
        load_graph(write(tmp_path / "n.csv", "0\n0\n"), write(tmp_path / "e.csv", "0,2\n"))


def test_load_label_count_mismatch(tmp_path):
    with pytest.raises(GraphShapeError):
        load_graph(write(tmp_path / "n.csv", "0\n0\n"), write(tmp_path / "e.csv", ""),
                   write(tmp_path / "l.csv", "0\n"))


def test_save_load_round_trip(tmp_path):
    g = inject_anomalies(generate_sbm(2, 10, 0.4, 0.05, 3, seed=1), InjectionSpec(1, 3, 5, seed=2))
    paths = [tmp_path / f for f in ("n.csv", "e.csv", "l.csv")]
    save_graph(g, *paths)
    h = load_graph(*paths)
    assert np.array_equal(g.adjacency, h.adjacency)
    assert np.array_equal(g.features, h.features)
    assert np.array_equal(g.labels, h.labels)


def test_graph_rejects_asymmetric():
    with pytest.raises(GraphShapeError):
        Graph(np.array([[0, 1], [0, 0]]), np.zeros((2, 1)))


# ---------------------------------------------------------------- Laplacian


def test_two_node_path_laplacian():
    g = Graph.from_edges(2, [(0, 1)], np.zeros((2, 1)))
    b = build_laplacian_bundle(g, 1)
    assert np.allclose(b.laplacian, [[1, -1], [-1, 1]], atol=1e-15)
    assert np.allclose(b.eigenvalues, [0, 2], atol=1e-12)


def test_triangle_eigenvalues():
    # L = I - A/2 for K3; A has eigenvalues {2, -1, -1} -> L has {0, 1.5, 1.5}
    g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)], np.zeros((3, 1)))
    b = build_laplacian_bundle(g, 2)
    assert np.allclose(b.eigenvalues, [0, 1.5, 1.5], atol=1e-12)


def test_isolated_node_has_no_division_error():
    g = Graph.from_edges(3, [(0, 1)], np.zeros((3, 1)))
    b = build_laplacian_bundle(g, 2)
    assert np.all(np.isfinite(b.laplacian))
    assert b.laplacian[2, 2] == 1.0


def test_pe_skips_trivial_eigenvector_and_pads():
    g = cycle(4)
    b = build_laplacian_bundle(g, 6)
    assert b.pe.shape == (4, 6)
    # one zero eigenvalue skipped -> 3 informative columns, 3 zero-padded
    assert np.allclose(b.pe[:, :3], b.eigenvectors[:, 1:4])
    assert np.all(b.pe[:, 3:] == 0)


def test_pe_keeps_eigenvectors_when_only_trivial_ones_exist():
    g = Graph.from_edges(2, [(0, 1)], np.zeros((2, 1)))
    b = build_laplacian_bundle(g, 1)
    # the non-trivial eigenvector (eigenvalue 2) is used
    assert np.allclose(np.abs(b.pe[:, 0]), 1 / np.sqrt(2))


def test_sign_canonical():
    g = random_graph(np.random.default_rng(3), 12, 0.3)
    vecs = build_laplacian_bundle(g, 4).eigenvectors
    for j in range(vecs.shape[1]):
        first = vecs[np.flatnonzero(np.abs(vecs[:, j]) > 1e-8)[0], j]
        assert first > 0


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 25), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_laplacian_bundle_invariants(n, p, seed):
    g = random_graph(np.random.default_rng(seed), n, p)
    b = build_laplacian_bundle(g, 3)
    lap = b.laplacian
    deg = g.adjacency.sum(1)
    inv = np.where(deg > 0, 1 / np.sqrt(np.maximum(deg, 1)), 0)
    assert np.allclose(lap, np.eye(n) - inv[:, None] * g.adjacency * inv[None, :], atol=1e-15)
    assert np.max(np.abs(lap - lap.T)) < 1e-9
    e, mu = b.eigenvalues, b.eigenvectors
    assert np.all(np.diff(e) >= 0)
    assert e.min() >= 0 and e.max() <= 2 + 1e-8
    assert np.max(np.abs(lap - mu @ np.diag(e) @ mu.T)) < 1e-6
    assert np.max(np.abs(mu.T @ mu - np.eye(n))) < 1e-6
    if np.all(deg > 0):
        assert abs(e[0]) < 1e-8


def test_bundle_cache_round_trip(tmp_path):
    g = random_graph(np.random.default_rng(0), 10, 0.3)
    a = cached_laplacian_bundle(g, 4, tmp_path)
    files = list(tmp_path.iterdir())
    assert len(files) == 1 and "_4.npz" in files[0].name
    b = cached_laplacian_bundle(g, 4, tmp_path)
    assert np.array_equal(a.pe, b.pe) and np.array_equal(a.eigenvalues, b.eigenvalues)
    cached_laplacian_bundle(g, 5, tmp_path)
    assert len(list(tmp_path.iterdir())) == 2


# ---------------------------------------------------------------- k-hop


def test_star_center_one_hop_is_everything():
    g = Graph.from_edges(5, [(0, i) for i in range(1, 5)], np.zeros((5, 1)))
    nodes, sub = extract_k_hop_subgraph(g, 0, 1)
    assert nodes[0] == 0 and sorted(nodes) == [0, 1, 2, 3, 4]
    assert sub.sum() == 8


def test_isolated_node_subgraph():
    g = Graph.from_edges(3, [(0, 1)], np.zeros((3, 1)))
    nodes, sub = extract_k_hop_subgraph(g, 2, 3)
    assert nodes == [2] and sub.shape == (1, 1) and sub[0, 0] == 0


def test_six_cycle_two_hops():
    nodes, sub = extract_k_hop_subgraph(cycle(6), 0, 2)
    assert nodes[0] == 0 and sorted(nodes) == [0, 1, 2, 4, 5]
    idx = {v: i for i, v in enumerate(nodes)}
    edges = {tuple(sorted((nodes[i], nodes[j]))) for i, j in zip(*np.nonzero(np.triu(sub)))}
    assert edges == {(0, 1), (1, 2), (0, 5), (4, 5)}
    assert sub[idx[2], idx[4]] == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 50), st.floats(0.0, 0.3), st.integers(1, 4), st.integers(0, 10_000))
def test_k_hop_matches_all_pairs_oracle(n, p, k, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, p)
    hops = all_pairs_hops(g.adjacency)
    v = int(rng.integers(n))
    nodes, sub = extract_k_hop_subgraph(g, v, k)
    expected = k_hop_oracle(hops, v, k)
    assert nodes[0] == v and sorted(nodes) == expected
    assert np.array_equal(sub, g.adjacency[np.ix_(nodes, nodes)])


# ---------------------------------------------------------------- neighborhood statistics


def test_neighborhood_hand_case():
    x = np.array([[9.0, 9.0], [1.0, 0.0], [3.0, 2.0]])
    g = Graph.from_edges(3, [(0, 1), (0, 2)], x)
    s = neighborhood_statistics(g, 0)
    assert s.count == 2
    assert np.allclose(s.mean, [2, 1])
    assert np.allclose(s.var, [2, 2])
    assert not s.degenerate


def test_neighborhood_identical_neighbors_zero_var():
    x = np.array([[0.0], [5.0], [5.0], [5.0]])
    g = Graph.from_edges(4, [(0, 1), (0, 2), (0, 3)], x)
    assert np.array_equal(neighborhood_statistics(g, 0).var, [0.0])


def test_neighborhood_isolated_and_single():
    x = np.array([[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]])
    g = Graph.from_edges(3, [(0, 1)], x)
    iso = neighborhood_statistics(g, 2)
    assert iso.count == 0 and iso.degenerate
    assert np.array_equal(iso.mean, [0, 0]) and np.array_equal(iso.var, [0, 0])
    one = neighborhood_statistics(g, 0)
    assert one.count == 1 and np.array_equal(one.mean, [3, 4])
    assert np.array_equal(one.var, [VAR_FLOOR, VAR_FLOOR])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.floats(0.0, 0.5), st.integers(1, 5), st.integers(0, 10_000))
def test_neighborhood_matches_oracle(n, p, d, seed):
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n, p, d=d)
    table = neighborhood_table(g)
    for v in range(n):
        s = neighborhood_statistics(g, v)
        count, mean, var = neighborhood_oracle(g.adjacency, g.features, v)
        assert s.count == count == table.count[v]
        for got in (s, table):
            m_got = got.mean if got is s else got.mean[v]
            v_got = got.var if got is s else got.var[v]
            assert np.max(np.abs(m_got - mean)) <= 1e-10
            assert np.max(np.abs(v_got - var)) <= 1e-10
        assert table.degenerate[v] == (count == 0)


# ---------------------------------------------------------------- synthetic data


def test_inject_on_edgeless_graph():
    g = Graph(np.zeros((10, 10)), np.random.default_rng(0).normal(size=(10, 3)))
    h = inject_anomalies(g, InjectionSpec(1, 3, attribute_candidates=5, seed=0))
    assert h.labels.sum() == 6
    assert h.num_edges == 3
    clique = np.flatnonzero(h.adjacency.sum(1))
    assert len(clique) == 3 and np.all(h.labels[clique] == 1)
    changed = np.flatnonzero(np.any(h.features != g.features, axis=1))
    assert set(changed) <= set(np.flatnonzero(h.labels)) - set(clique)
    check_graph_invariants(h)


def test_inject_is_deterministic():
    g = generate_sbm(2, 20, 0.2, 0.02, 4, seed=5)
    spec = InjectionSpec(2, 4, seed=9)
    a, b = inject_anomalies(g, spec), inject_anomalies(g, spec)
    assert np.array_equal(a.adjacency, b.adjacency)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.labels, b.labels)


def test_inject_noop():
    g = generate_sbm(1, 10, 0.3, 0.0, 2, seed=0)
    h = inject_anomalies(g, InjectionSpec(0, 2, seed=0))
    assert h.labels.sum() == 0
    assert np.array_equal(h.adjacency, g.adjacency) and np.array_equal(h.features, g.features)


def test_inject_attribute_takes_farthest_candidate():
    x = np.arange(8, dtype=float).reshape(8, 1)
    g = Graph(np.zeros((8, 8)), x)
    h = inject_anomalies(g, InjectionSpec(1, 2, attribute_candidates=8, seed=4))
    for v in np.flatnonzero(h.labels):
        if h.adjacency[v].sum() == 0:
            # every node is a candidate, so the farthest value is an endpoint
            expected = 7.0 if x[v, 0] < 3.5 else 0.0
            assert h.features[v, 0] == expected


@pytest.mark.parametrize("spec", [InjectionSpec(3, 4), InjectionSpec(1, 1), InjectionSpec(1, 2, attribute_candidates=0)])
def test_inject_rejects_bad_spec(spec):
    g = Graph(np.zeros((10, 10)), np.zeros((10, 1)))
    with pytest.raises(ConfigError):
        inject_anomalies(g, spec)


def test_sbm_extremes():
    g = generate_sbm(2, 3, 1.0, 0.0, 2, seed=0)
    assert g.num_edges == 6
    assert g.adjacency[:3, 3:].sum() == 0
    assert np.all(g.adjacency[:3, :3] + np.eye(3) == 1)
    assert generate_sbm(3, 4, 0.0, 0.0, 2, seed=0).num_edges == 0


def test_sbm_rejects_bad_probability():
    with pytest.raises(ConfigError):
        generate_sbm(2, 3, 1.5, 0.0, 2)


def test_sbm_edge_count_within_three_sigma():
    # binomial: C(150,2) within-block pairs per block at 0.05, 150^2 cross pairs at 0.005
    pairs_in, pairs_out = 2 * 150 * 149 // 2, 150 * 150
    mean = pairs_in * 0.05 + pairs_out * 0.005
    sd = np.sqrt(pairs_in * 0.05 * 0.95 + pairs_out * 0.005 * 0.995)
    for seed in range(5):
        g = generate_sbm(2, 150, 0.05, 0.005, 4, seed=seed)
        assert abs(g.num_edges - mean) < 3 * sd
        check_graph_invariants(g)


def test_sbm_deterministic_and_block_features():
    a = generate_sbm(2, 50, 0.1, 0.01, 8, seed=3, mean_scale=3.0)
    b = generate_sbm(2, 50, 0.1, 0.01, 8, seed=3, mean_scale=3.0)
    assert np.array_equal(a.adjacency, b.adjacency) and np.array_equal(a.features, b.features)
    gap = np.linalg.norm(a.features[:50].mean(0) - a.features[50:].mean(0))
    assert gap > 3.0
