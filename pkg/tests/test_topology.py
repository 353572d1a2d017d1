import numpy as np
import pytest

from eblms.topology import (
    CombinationMatrix,
    ConnectivityFailure,
    DisconnectedGraph,
    InvalidEdge,
    build_topology,
    from_edge_list_text,
    identity_weights,
    load_edge_list,
    metropolis_weights,
    path_topology,
    random_geometric_topology,
    save_edge_list,
    to_edge_list_text,
    validate_combination,
)


def test_single_node():
    topo = build_topology(1, [])
    assert topo.neighborhoods[1] == frozenset({1})


def test_path_neighborhoods_include_self():
    topo = build_topology(3, [(1, 2), (2, 3)])
    assert topo.neighborhoods[2] == frozenset({1, 2, 3})
    assert topo.neighborhoods[1] == frozenset({1, 2})


def test_disconnected_raises():
    with pytest.raises(DisconnectedGraph):
        build_topology(3, [(1, 2)])


def test_invalid_edges():
    with pytest.raises(InvalidEdge):
        build_topology(3, [(1, 4)])
    with pytest.raises(InvalidEdge):
        build_topology(3, [(0, 1), (1, 2), (2, 3)])
    with pytest.raises(InvalidEdge):
        build_topology(3, [(2, 2), (1, 2), (2, 3)])


def test_duplicate_and_reversed_edges_collapse():
    topo = build_topology(2, [(1, 2), (2, 1), (1, 2)])
    assert topo.edges == frozenset({(1, 2)})


def test_geometric_single_node_and_pair():
    assert random_geometric_topology(1, 0.5, 0).edges == frozenset()
    # max distance in the unit square is sqrt(2), so two nodes always connect
    topo = random_geometric_topology(2, np.sqrt(2), 123)
    assert topo.edges == frozenset({(1, 2)})


def test_geometric_seed_reproducibility():
    a = random_geometric_topology(60, 0.25, 7)
    b = random_geometric_topology(60, 0.25, 7)
    assert a.edges == b.edges
    assert a.n_nodes == 60


def test_geometric_connectivity_failure():
    with pytest.raises(ConnectivityFailure):
        random_geometric_topology(40, 0.01, 3, max_retries=5)


def test_metropolis_single_node():
    w = metropolis_weights(build_topology(1, [])).weights
    assert np.array_equal(w, np.array([[1.0]]))


def test_metropolis_path3_hand_values():
    # neighborhood sizes 2, 3, 2: every edge weight is 1/3
    w = metropolis_weights(path_topology(3)).weights
    third = 1.0 / 3.0
    expected = np.array(
        [
            [1 - third, third, 0.0],
            [third, 1 - 2 * third, third],
            [0.0, third, 1 - third],
        ]
    )
    np.testing.assert_allclose(w, expected, atol=1e-15)


def test_metropolis_triangle_hand_values():
    topo = build_topology(3, [(1, 2), (2, 3), (1, 3)])
    w = metropolis_weights(topo).weights
    np.testing.assert_allclose(w, np.full((3, 3), 1.0 / 3.0), atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_metropolis_invariants_on_random_graphs(seed):
    topo = random_geometric_topology(20, 0.45, seed)
    matrix = metropolis_weights(topo)
    w = matrix.weights
    assert validate_combination(matrix, topo).passed
    # symmetric construction is doubly stochastic
    np.testing.assert_allclose(w, w.T, atol=0)
    assert np.abs(w.sum(axis=0) - 1.0).max() <= 1e-12
    assert np.abs(w.sum(axis=1) - 1.0).max() <= 1e-12
    assert w.min() >= 0.0


def test_validate_flags_column_sum():
    topo = path_topology(2)
    bad = CombinationMatrix(np.array([[0.5, 0.5], [0.4, 0.5]]))
    report = validate_combination(bad, topo)
    assert not report.passed
    assert any("column 1" in f for f in report.failures)


def test_validate_flags_sparsity():
    topo = path_topology(3)
    w = metropolis_weights(topo).weights.copy()
    w[0, 2] += 0.1
    w[2, 2] -= 0.1
    report = validate_combination(CombinationMatrix(w), topo)
    assert not report.passed
    assert any("a[1,3]" in f for f in report.failures)


def test_validate_flags_negative_entry():
    topo = path_topology(2)
    bad = CombinationMatrix(np.array([[1.2, 0.0], [-0.2, 1.0]]))
    report = validate_combination(bad, topo)
    assert any("negative" in f for f in report.failures)


def test_validate_dimension_mismatch():
    with pytest.raises(ValueError):
        validate_combination(identity_weights(2), path_topology(3))


def test_identity_weights_pass_validation():
    topo = path_topology(4)
    assert validate_combination(identity_weights(4), topo).passed


def test_edge_list_round_trip(tmp_path):
    topo = random_geometric_topology(12, 0.5, 11)
    text = to_edge_list_text(topo)
    assert text.splitlines()[0] == "N 12"
    again = from_edge_list_text(text)
    assert again.edges == topo.edges
    path = tmp_path / "topo.txt"
    save_edge_list(topo, path)
    assert load_edge_list(path).edges == topo.edges


def test_edge_list_parse_errors():
    with pytest.raises(ValueError):
        from_edge_list_text("")
    with pytest.raises(ValueError):
        from_edge_list_text("3\n1 2\n")
    with pytest.raises(ValueError):
        from_edge_list_text("N 3\n1 2 3\n")
