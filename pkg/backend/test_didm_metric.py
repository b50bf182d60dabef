"""
test_didm_metric.py
-------------------
Cost-matrix recursion, the distance itself, pseudometric properties and the
pair-parallel matrix.

Run:
    pytest test_didm_metric.py
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.didm_metric import (
    build_cost_stack,
    didm_distance,
    distances_for_pairs,
    distances_to_anchor,
    initial_cost_matrix,
    neighbor_measure,
    next_cost_matrix,
    pairwise_distance_matrix,
    read_distance_csv,
    write_distance_csv,
)
from app.errors import ContractViolation
from app.graph_model import Dataset, permute_graph
from conftest import cycle_graph, graph_signals, make_graph, path_graph, signal_groups, star_graph


# ── Cost matrices ────────────────────────────────────────────────────────────

def test_initial_cost_is_attribute_distance():
    g = make_graph([], 2, [[0.0], [1.0]])
    h = make_graph([], 1, [[2.0]])
    np.testing.assert_allclose(initial_cost_matrix(g, h), [[2.0], [1.0]])


def test_initial_cost_of_identical_graphs_has_zero_diagonal():
    g = path_graph(4, [[0.3], [1.2], [-0.5], [2.0]])
    assert np.all(np.diag(initial_cost_matrix(g, g)) == 0.0)


def test_initial_cost_pythagoras():
    g = make_graph([], 1, [[3.0, 4.0]])
    h = make_graph([], 1, [[0.0, 0.0]])
    np.testing.assert_allclose(initial_cost_matrix(g, h), [[5.0]])


def test_initial_cost_dimension_mismatch():
    with pytest.raises(ContractViolation, match="attribute dimensions"):
        initial_cost_matrix(make_graph([], 1, [[1.0]]), make_graph([], 1, [[1.0, 2.0]]))


def test_edgeless_graphs_do_not_refine():
    g = make_graph([], 3, [[0.0], [1.0], [2.0]])
    h = make_graph([], 2, [[0.5], [4.0]])
    c0 = initial_cost_matrix(g, h)
    np.testing.assert_array_equal(next_cost_matrix(c0, g, h), c0)


def test_k2_against_single_node(k2, single_node):
    c1 = next_cost_matrix(initial_cost_matrix(k2, single_node), k2, single_node)
    np.testing.assert_allclose(c1, [[0.5], [0.5]], atol=1e-12)


def test_identity_pairing_keeps_zero_diagonal():
    g = star_graph(5, [[1.0], [0.0], [0.5], [0.2], [0.9]])
    stack = build_cost_stack(g, g, depth=3)
    for matrix in stack.matrices:
        np.testing.assert_allclose(np.diag(matrix), 0.0, atol=1e-12)


def test_cost_stack_is_monotone():
    g = cycle_graph(5, np.arange(5.0))
    h = path_graph(4, np.ones(4))
    stack = build_cost_stack(g, h, depth=3)
    assert stack.depth == 3
    for lower, upper in zip(stack.matrices, stack.matrices[1:]):
        assert np.all(upper >= lower)


def test_next_cost_rejects_wrong_shape(k2, single_node):
    with pytest.raises(ContractViolation, match="shape"):
        next_cost_matrix(np.zeros((1, 1)), k2, single_node)


def test_neighbor_measure_is_normalized_by_node_count():
    support, measure = neighbor_measure(star_graph(4), 0)
    assert support.tolist() == [1, 2, 3]
    np.testing.assert_allclose(measure.weights, [0.25, 0.25, 0.25])
    support, measure = neighbor_measure(star_graph(4), 1, sparse=False)
    np.testing.assert_allclose(measure.weights, [0.25, 0.0, 0.0, 0.0])


# ── Distance fixtures ────────────────────────────────────────────────────────

@pytest.mark.parametrize("depth", [0, 1, 2, 3])
def test_isolated_nodes_collapse_to_attribute_distance(depth):
    g = make_graph([], 1, [[0.0]])
    h = make_graph([], 1, [[3.0]])
    assert didm_distance(g, h, depth) == pytest.approx(3.0, abs=1e-9)


def test_k2_against_single_node_distance(k2, single_node):
    assert didm_distance(k2, single_node, 1) == pytest.approx(0.5, abs=1e-9)


def test_edgeless_graphs_reduce_to_attribute_transport():
    g = make_graph([], 2, [[0.0], [2.0]])
    h = make_graph([], 2, [[1.0], [2.0]])
    # Best matching pairs 0 with 1 and 2 with 2 at cost 1/2.
    for depth in range(3):
        assert didm_distance(g, h, depth) == pytest.approx(0.5, abs=1e-9)


def test_structure_separates_graphs_with_equal_signals():
    g = cycle_graph(4, np.ones(4))
    h = star_graph(4, np.ones(4))
    assert didm_distance(g, h, 0) == 0.0
    assert didm_distance(g, h, 1) > 0.0


# ── Pseudometric properties ──────────────────────────────────────────────────

@settings(max_examples=200, deadline=None)
@given(signal_groups(1, weighted=True), st.integers(0, 3))
def test_distance_to_self_is_zero(group, depth):
    (g,) = group
    assert didm_distance(g, g, depth) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(signal_groups(2, weighted=True), st.integers(0, 3))
def test_distance_is_symmetric(group, depth):
    g, h = group
    assert abs(didm_distance(g, h, depth) - didm_distance(h, g, depth)) <= 1e-9


@settings(max_examples=200, deadline=None)
@given(signal_groups(3, weighted=True), st.integers(0, 3))
def test_triangle_inequality(group, depth):
    g, h, k = group
    assert didm_distance(g, k, depth) <= didm_distance(g, h, depth) + didm_distance(h, k, depth) + 1e-8


@settings(max_examples=200, deadline=None)
@given(signal_groups(1, weighted=True), st.integers(0, 3), st.randoms(use_true_random=False))
def test_relabelling_does_not_move_the_graph(group, depth, rnd):
    (g,) = group
    perm = list(range(g.node_count))
    rnd.shuffle(perm)
    assert didm_distance(g, permute_graph(g, perm), depth) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(
    graph_signals(max_nodes=7, attr_dim=1, weighted=True),
    graph_signals(max_nodes=7, attr_dim=1, weighted=True),
    st.integers(0, 2),
)
def test_deeper_metric_is_finer(g, h, depth):
    assert didm_distance(g, h, depth + 1) >= didm_distance(g, h, depth) - 1e-9


# ── Pairwise matrix ──────────────────────────────────────────────────────────

def test_single_graph_matrix():
    matrix, report = pairwise_distance_matrix([path_graph(3, np.ones(3))], depth=2)
    np.testing.assert_array_equal(matrix, [[0.0]])
    assert report.pairs == 0


def test_identical_graphs_give_zero_matrix():
    g = cycle_graph(5, np.arange(5.0))
    matrix, _ = pairwise_distance_matrix(Dataset(name="twins", graphs=[g, g], labels=[0, 1]), depth=2)
    np.testing.assert_allclose(matrix, 0.0, atol=1e-9)


def test_matrix_is_symmetric_with_zero_diagonal(two_cluster_dataset):
    matrix, report = pairwise_distance_matrix(two_cluster_dataset, depth=1)
    n = len(two_cluster_dataset)
    assert report.pairs == n * (n - 1) // 2
    np.testing.assert_array_equal(matrix, matrix.T)
    np.testing.assert_array_equal(np.diag(matrix), 0.0)


def test_worker_count_does_not_change_the_matrix(monkeypatch, two_cluster_dataset):
    serial, _ = pairwise_distance_matrix(two_cluster_dataset, depth=1, workers=1)
    monkeypatch.setenv("DIDM_THREADS", "2")
    parallel, report = pairwise_distance_matrix(two_cluster_dataset, depth=1, workers=2)
    assert report.workers == 2
    np.testing.assert_array_equal(serial, parallel)


def test_anchor_and_pair_helpers_agree_with_the_matrix(two_cluster_dataset):
    matrix, _ = pairwise_distance_matrix(two_cluster_dataset, depth=1)
    np.testing.assert_allclose(distances_to_anchor(two_cluster_dataset.graphs, 3, 1), matrix[3], atol=1e-9)
    pairs = [(0, 7), (2, 2), (5, 1)]
    np.testing.assert_allclose(
        distances_for_pairs(two_cluster_dataset.graphs, pairs, 1),
        [matrix[0, 7], 0.0, matrix[5, 1]],
        atol=1e-9,
    )


def test_anchor_out_of_range(two_cluster_dataset):
    with pytest.raises(ContractViolation, match="out of range"):
        distances_to_anchor(two_cluster_dataset.graphs, 99)


def test_distance_csv_keeps_full_precision(tmp_path):
    matrix = np.array([[0.0, 1.0 / 3.0], [1.0 / 3.0, 0.0]])
    path = write_distance_csv(matrix, tmp_path / "m.csv", '{"seed": 0}')
    assert path.read_text().startswith('# config: {"seed": 0}\n')
    np.testing.assert_array_equal(read_distance_csv(path), matrix)
