import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaflow.graph import (
    ErrorVector,
    GraphError,
    WeightedDigraph,
    load_edge_list,
    reduce_backward,
    reduce_backward_delta,
    reduce_forward_delta,
    reduce_forward_fs,
    write_edge_list,
)

from conftest import random_digraph


def graph(edges, labels=None):
    return WeightedDigraph.from_edges(edges, labels)


PATH = [("a", "b", 1.0), ("b", "c", 1.0)]
CYCLE = [("a", "b", 1.0), ("b", "c", 1.0), ("c", "a", 1.0)]


def test_load_strengths(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("# comment\na b 1\na c 1\n\nb c 2\n")
    g = load_edge_list(f)
    assert g.labels == ("a", "b", "c")
    np.testing.assert_array_equal(g.s_out, [2, 2, 0])
    np.testing.assert_array_equal(g.s_in, [0, 1, 3])


def test_load_duplicates_summed(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("a b 1\na b 2\n")
    g = load_edge_list(f)
    assert g.n_edges == 1
    assert g.adj[0, 1] == 3.0


def test_load_default_weight_and_undirected(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("a b\n")
    g = load_edge_list(f, directed=False)
    assert g.adj.toarray().tolist() == [[0, 1], [1, 0]]


def test_load_empty(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("# nothing\n")
    with pytest.raises(GraphError, match="empty graph"):
        load_edge_list(f)


@pytest.mark.parametrize("row,msg", [("a b c d", ":2:"), ("a b x", "not a number"), ("a b 0", "non-positive"), ("a b -1", "non-positive")])
def test_load_malformed(tmp_path, row, msg):
    f = tmp_path / "g.txt"
    f.write_text("a b 1\n" + row + "\n")
    with pytest.raises(GraphError, match=msg):
        load_edge_list(f)


def test_extra_labels_appended(tmp_path):
    f = tmp_path / "g.txt"
    f.write_text("b a 1\n")
    g = load_edge_list(f, extra_labels=["a", "z"])
    assert g.labels == ("b", "a", "z")
    assert g.s_out[2] == 0 and g.s_in[2] == 0


def test_roundtrip(tmp_path, rng):
    g = random_digraph(rng, 12, weighted=True)
    f = tmp_path / "g.txt"
    write_edge_list(g, f)
    h = load_edge_list(f, extra_labels=g.labels)
    perm = [h.labels.index(lab) for lab in g.labels]
    np.testing.assert_array_equal(h.adj.toarray()[np.ix_(perm, perm)], g.adj.toarray())


def test_self_loop_counts_both_strengths():
    g = graph([("a", "a", 2.0), ("a", "b", 1.0)])
    assert g.s_out[0] == 3 and g.s_in[0] == 2


def test_rejects_nonpositive_weights():
    with pytest.raises(GraphError):
        graph([("a", "b", 0.0)])
    with pytest.raises(GraphError):
        WeightedDigraph(("a", "b"), sp.csr_matrix(np.array([[0, -1.0], [0, 0]])))


def test_strength_cache_readonly():
    g = graph(CYCLE)
    with pytest.raises(ValueError):
        g.s_out[0] = 5
    assert g.check_strengths()


# reductions


def test_backward_path_empties():
    # a has no in-edge; removing it strips b's in-edge, then c's
    with pytest.raises(GraphError, match="backward process empty"):
        reduce_backward(graph(PATH))


def test_forward_path_empties():
    with pytest.raises(GraphError, match="forward process empty"):
        reduce_forward_fs(graph(PATH))


def test_forward_star_empties():
    g = graph([("c", "x", 1.0), ("c", "y", 1.0), ("c", "z", 1.0)])
    with pytest.raises(GraphError, match="forward process empty"):
        reduce_forward_fs(g)


@pytest.mark.parametrize("reduce", [reduce_backward, reduce_forward_fs])
def test_cycle_kept(reduce):
    rg = reduce(graph(CYCLE))
    assert rg.kept.tolist() == [0, 1, 2]


@pytest.mark.parametrize("reduce", [reduce_backward, reduce_forward_fs])
def test_two_cycle_kept(reduce):
    assert reduce(graph([("a", "b", 1.0), ("b", "a", 1.0)])).n_nodes == 2


def test_forward_chain_partial():
    # tail d hangs off a cycle: d is dropped forward but kept backward
    g = graph(CYCLE + [("c", "d", 1.0)])
    assert reduce_forward_fs(g).labels == ("a", "b", "c")
    assert reduce_backward(g).labels == ("a", "b", "c", "d")
    rg = reduce_forward_fs(g)
    np.testing.assert_array_equal(rg.s_out, [1, 1, 1])


def test_delta_path_keeps_all():
    rg = reduce_forward_delta(graph(PATH), ErrorVector(np.array([0.0, 0.0, 1.0])))
    assert rg.kept.tolist() == [0, 1, 2]


def test_delta_isolated_node_kept():
    g = graph(CYCLE, labels=["a", "b", "c", "iso"])
    rg = reduce_forward_delta(g, ErrorVector(np.array([0, 0, 0, 0.5])))
    assert "iso" in rg.labels
    assert "iso" not in reduce_forward_fs(g).labels


def test_backward_delta_uses_in_errors():
    g = graph(PATH)
    rg = reduce_backward_delta(g, ErrorVector(np.zeros(3), np.array([1.0, 0, 0])))
    assert rg.kept.tolist() == [0, 1, 2]


def test_error_vector_validation():
    with pytest.raises(ValueError):
        ErrorVector(np.array([-1.0]))
    with pytest.raises(ValueError):
        ErrorVector(np.array([np.nan]))
    with pytest.raises(ValueError):
        ErrorVector(np.zeros(3)).check_aligned(graph(PATH + [("c", "d", 1.0)]))


def test_write_mapping(tmp_path):
    rg = reduce_forward_fs(graph(CYCLE + [("c", "d", 1.0)]))
    rg.write_mapping(tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text().splitlines() == ["original_label,reduced_index", "a,0", "b,1", "c,2"]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 20), st.floats(0.05, 0.5))
def test_reduction_properties(seed, n, density):
    rng = np.random.default_rng(seed)
    g = random_digraph(rng, n, density)
    zero = ErrorVector(np.zeros(n))

    def delta(h):
        return reduce_forward_delta(h, ErrorVector(np.zeros(h.n_nodes)))

    for reduce in (reduce_forward_fs, reduce_backward, delta):
        try:
            rg = reduce(g)
        except GraphError:
            continue
        # fixed point: re-reducing the reduced graph keeps every node
        assert reduce(WeightedDigraph(rg.labels, rg.adj)).n_nodes == rg.n_nodes
        np.testing.assert_allclose(rg.s_out, np.asarray(rg.adj.sum(axis=1)).ravel(), rtol=1e-12)
        np.testing.assert_allclose(rg.s_in, np.asarray(rg.adj.sum(axis=0)).ravel(), rtol=1e-12)
    try:
        fs = reduce_forward_fs(g).kept
    except GraphError:
        fs = None
    try:
        dl = reduce_forward_delta(g, zero).kept
    except GraphError:
        dl = None
    assert (fs is None and dl is None) or np.array_equal(fs, dl)
