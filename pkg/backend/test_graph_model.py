"""
test_graph_model.py
-------------------
Graph-signal containers, TU ingestion, degree signals, SBM generation and
graph JSON files.

Run:
    pytest test_graph_model.py
"""

import json

import numpy as np
import pytest
from hypothesis import given, settings

from app.errors import ContractViolation, DatasetLoadError, GraphParseError
from app.graph_model import (
    Dataset,
    GraphSignal,
    SbmSpec,
    block_assignment,
    degrees_as_attributes,
    fingerprint,
    from_networkx,
    generate_sbm,
    load_graph_json,
    load_tudataset,
    max_attribute_norm,
    parse_graph_json,
    permute_graph,
    save_graph_json,
    to_networkx,
    with_degree_attributes,
)
from conftest import MUTAG_DIR, graph_signals, make_graph, path_graph, requires_mutag, write_tu_files


# ── GraphSignal ──────────────────────────────────────────────────────────────

def test_graph_signal_is_immutable(k2):
    with pytest.raises(ValueError):
        k2.adjacency[0, 1] = 0.5
    assert k2.verify() == []


def test_asymmetric_adjacency_is_rejected():
    with pytest.raises(ValueError, match="not symmetric"):
        GraphSignal(adjacency=[[0.0, 1.0], [0.0, 0.0]], attributes=np.zeros((2, 0)))


def test_out_of_range_weight_is_rejected():
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        GraphSignal(adjacency=[[0.0, 1.5], [1.5, 0.0]], attributes=np.zeros((2, 0)))


def test_attribute_rows_must_match_nodes():
    with pytest.raises(ValueError, match="rows"):
        GraphSignal(adjacency=np.zeros((2, 2)), attributes=np.zeros((3, 1)))


def test_dataset_rejects_mixed_attribute_dims(k2):
    other = make_graph([], 1, [[1.0, 2.0]])
    with pytest.raises(ValueError, match="attr_dim"):
        Dataset(name="mixed", graphs=[k2, other], labels=[0, 1])


# ── Degrees ──────────────────────────────────────────────────────────────────

def test_degrees_of_path():
    g = degrees_as_attributes(path_graph(3))
    np.testing.assert_array_equal(g.attributes, [[1.0], [2.0], [1.0]])


def test_degree_of_isolated_node():
    g = degrees_as_attributes(make_graph([], 1))
    np.testing.assert_array_equal(g.attributes, [[0.0]])


def test_degrees_of_k2(k2):
    np.testing.assert_array_equal(degrees_as_attributes(k2).attributes, [[1.0], [1.0]])


def test_normalized_degrees_divide_by_node_count():
    g = degrees_as_attributes(path_graph(4), normalize=True)
    np.testing.assert_allclose(g.attributes[:, 0], [0.25, 0.5, 0.5, 0.25])


@given(graph_signals(max_nodes=10, attr_dim=2, weighted=True))
@settings(max_examples=100, deadline=None)
def test_degree_signal_is_idempotent(g):
    once = degrees_as_attributes(g)
    twice = degrees_as_attributes(once)
    np.testing.assert_array_equal(twice.attributes, once.attributes)
    np.testing.assert_array_equal(twice.adjacency, g.adjacency)


def test_degree_signal_replaces_attributes(two_cluster_dataset):
    ds = with_degree_attributes(two_cluster_dataset)
    assert ds.attr_dim == 1
    assert ds.labels == two_cluster_dataset.labels


# ── Relabelling and helpers ──────────────────────────────────────────────────

def test_permute_graph_moves_rows_and_columns():
    g = path_graph(3, [[0.0], [1.0], [2.0]])
    p = permute_graph(g, [2, 0, 1])
    np.testing.assert_array_equal(p.attributes[:, 0], [2.0, 0.0, 1.0])
    assert p.adjacency[1, 2] == 1.0  # old (0, 1)
    assert p.adjacency[0, 2] == 1.0  # old (2, 1)
    assert p.adjacency[0, 1] == 0.0


def test_permute_graph_rejects_non_permutation(k2):
    with pytest.raises(ContractViolation):
        permute_graph(k2, [0, 0])


def test_max_attribute_norm():
    graphs = [make_graph([], 1, [[3.0, 4.0]]), make_graph([], 2, [[1.0, 0.0], [0.0, 2.0]])]
    assert max_attribute_norm(graphs) == pytest.approx(5.0)


def test_fingerprint_depends_on_content_and_label(k2):
    same = make_graph([(0, 1)], 2, [[0.0], [0.0]])
    assert fingerprint(k2, 1) == fingerprint(same, 1)
    assert fingerprint(k2, 1) != fingerprint(k2, 0)
    assert fingerprint(k2) != fingerprint(path_graph(3, np.zeros(3)))


def test_networkx_round_trip_keeps_weights():
    g = GraphSignal(adjacency=[[0.0, 0.5], [0.5, 0.0]], attributes=[[1.0], [2.0]])
    back = from_networkx(to_networkx(g), g.attributes)
    np.testing.assert_array_equal(back.adjacency, g.adjacency)


# ── SBM ──────────────────────────────────────────────────────────────────────

def test_sbm_is_deterministic_per_seed():
    spec = SbmSpec(block_sizes=[15, 15], intra_p=0.5, inter_q=0.1, seed=7)
    np.testing.assert_array_equal(generate_sbm(spec).adjacency, generate_sbm(spec).adjacency)


def test_sbm_single_node_has_no_edges():
    g = generate_sbm(SbmSpec(block_sizes=[1], intra_p=1.0, inter_q=0.0))
    assert g.node_count == 1
    assert g.adjacency.sum() == 0.0


def test_sbm_extremes_give_two_disjoint_k2():
    g = generate_sbm(SbmSpec(block_sizes=[2, 2], intra_p=1.0, inter_q=0.0, seed=3))
    expected = np.array([[0, 1, 0, 0], [1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=float)
    np.testing.assert_array_equal(g.adjacency, expected)


def test_sbm_intra_block_density_over_many_seeds():
    densities = []
    for seed in range(1000):
        a = generate_sbm(SbmSpec(block_sizes=[15, 15], intra_p=0.5, inter_q=0.1, seed=seed)).adjacency
        block = a[:15, :15]
        densities.append(block[np.triu_indices(15, k=1)].mean())
    assert np.mean(densities) == pytest.approx(0.5, abs=0.02)


def test_block_assignment_is_contiguous():
    spec = SbmSpec(block_sizes=[2, 3], intra_p=0.5, inter_q=0.1)
    np.testing.assert_array_equal(block_assignment(spec), [0, 0, 1, 1, 1])


def test_sbm_rejects_bad_probability():
    with pytest.raises(ValueError):
        SbmSpec(block_sizes=[2], intra_p=1.5, inter_q=0.0)


# ── Graph JSON ───────────────────────────────────────────────────────────────

@settings(max_examples=25, deadline=None)
@given(graph_signals(max_nodes=6, attr_dim=2, weighted=True))
def test_json_save_load_is_bitwise(tmp_path_factory, g):
    path = tmp_path_factory.mktemp("graphs") / "g.json"
    save_graph_json(g, path)
    back = load_graph_json(path)
    np.testing.assert_array_equal(back.adjacency, g.adjacency)
    np.testing.assert_array_equal(back.attributes, g.attributes)


def test_json_out_of_range_weight_is_rejected():
    doc = {"n": 2, "adjacency": [[0, 1.5], [1.5, 0]]}
    with pytest.raises(GraphParseError, match="adjacency.0.1"):
        parse_graph_json(json.dumps(doc))


def test_json_asymmetric_adjacency_names_location():
    doc = {"n": 2, "adjacency": [[0, 1], [0, 0]]}
    with pytest.raises(GraphParseError, match=r"adjacency\[0\]\[1\]"):
        parse_graph_json(json.dumps(doc), source="bad.json")


def test_json_edges_give_zero_one_adjacency():
    from_edges = parse_graph_json(json.dumps({"n": 3, "edges": [[0, 1], [1, 2]]}))
    np.testing.assert_array_equal(from_edges.adjacency, path_graph(3).adjacency)
    assert from_edges.attr_dim == 0


def test_json_needs_exactly_one_topology():
    with pytest.raises(GraphParseError):
        parse_graph_json(json.dumps({"n": 1}))


def test_missing_json_file(tmp_path):
    with pytest.raises(GraphParseError, match="Cannot read"):
        load_graph_json(tmp_path / "nope.json")


# ── TU datasets ──────────────────────────────────────────────────────────────

def test_tu_single_edge_is_symmetrized(tmp_path, caplog):
    write_tu_files(tmp_path, "TINY", {
        "A": "1, 2\n",
        "graph_indicator": "1\n1\n",
        "graph_labels": "1\n",
    })
    ds = load_tudataset(tmp_path, "TINY")
    np.testing.assert_array_equal(ds.graphs[0].adjacency, [[0.0, 1.0], [1.0, 0.0]])
    assert ds.symmetrized_edges == 1
    assert "reverse edges" in caplog.text


def test_tu_single_node_without_attributes(tmp_path):
    write_tu_files(tmp_path, "ONE", {
        "A": "",
        "graph_indicator": "1\n",
        "graph_labels": "0\n",
    })
    ds = load_tudataset(tmp_path, "ONE")
    assert len(ds) == 1
    assert ds.attr_dim == 0
    assert ds.graphs[0].node_count == 1


def test_tu_node_labels_are_one_hot_and_attributes_appended(tmp_path):
    write_tu_files(tmp_path, "TWO", {
        "A": "1, 2\n2, 1\n3, 4\n4, 3\n",
        "graph_indicator": "1\n1\n2\n2\n",
        "graph_labels": "1\n-1\n",
        "node_labels": "0\n2\n2\n0\n",
        "node_attributes": "0.5\n1.5\n2.5\n3.5\n",
    })
    ds = load_tudataset(tmp_path, "TWO")
    assert ds.labels == [1, -1]
    assert ds.num_classes == 2
    np.testing.assert_array_equal(ds.graphs[1].attributes, [[0.0, 1.0, 2.5], [1.0, 0.0, 3.5]])
    assert ds.symmetrized_edges == 0


def test_tu_missing_file_names_it(tmp_path):
    write_tu_files(tmp_path, "BROKEN", {"A": "1, 2\n", "graph_labels": "1\n"})
    with pytest.raises(DatasetLoadError, match="BROKEN_graph_indicator.txt"):
        load_tudataset(tmp_path, "BROKEN")


def test_tu_label_count_mismatch(tmp_path):
    write_tu_files(tmp_path, "BAD", {
        "A": "1, 2\n",
        "graph_indicator": "1\n1\n",
        "graph_labels": "1\n0\n",
    })
    with pytest.raises(DatasetLoadError, match="graph_labels"):
        load_tudataset(tmp_path, "BAD")


@requires_mutag
def test_mutag_shape():
    ds = load_tudataset(MUTAG_DIR, "MUTAG")
    assert len(ds) == 188
    assert ds.num_classes == 2
    for g in ds.graphs:
        assert g.verify() == []
