import itertools

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from deltaflow import clustering as cl
from deltaflow import diffusion as dif
from deltaflow import sbm
from deltaflow.graph import ErrorVector, WeightedDigraph, reduce_forward_fs
from deltaflow.louvain import Kernel, as_csr, canonical_labels
from deltaflow.metrics import nmi, nvi
from deltaflow.partition import Partition, read_partition


def set_partitions(items):
    """All set partitions of ``items`` (Bell-number many)."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for k in range(len(smaller)):
            yield smaller[:k] + [[first] + smaller[k]] + smaller[k + 1 :]
        yield [[first]] + smaller


def brute_force(S: np.ndarray) -> tuple[float, list]:
    best, arg = -np.inf, None
    for parts in set_partitions(list(range(S.shape[0]))):
        q = sum(S[np.ix_(p, p)].sum() for p in parts)
        if q > best + 1e-15:
            best, arg = q, parts
    return best, arg


def cov(S, t=1.0):
    return dif.CovarianceMatrix(np.asarray(S, dtype=float), t, "exact")


def random_zero_row_sum(rng, n):
    X = rng.standard_normal((n, n))
    S = (X + X.T) / 2
    S -= np.diag(S.sum(axis=1))
    return S


def test_bell_numbers():
    assert [sum(1 for _ in set_partitions(list(range(k)))) for k in range(1, 7)] == [1, 2, 5, 15, 52, 203]


def test_two_blocks():
    S = -np.ones((4, 4)) * 0.5
    S[:2, :2] = S[2:, 2:] = 1.0
    p = cl.louvain_trace(cov(S), seed=3)
    assert p.labels.tolist() == [0, 0, 1, 1]
    assert p.quality == pytest.approx(8.0)


def test_negative_off_diagonal_gives_singletons():
    S = -np.ones((5, 5))
    np.fill_diagonal(S, 4.0)
    p = cl.louvain_trace(cov(S), seed=0)
    assert p.n_clusters == 5
    assert p.quality == pytest.approx(np.trace(S))


def test_toy_graph_matches_exhaustive_search():
    # two directed triangles joined by a reciprocal bridge
    edges = [("a", "b"), ("b", "c"), ("c", "a"), ("d", "e"), ("e", "f"), ("f", "d"), ("c", "d"), ("d", "c")]
    g = WeightedDigraph.from_edges([(s, d, 1.0) for s, d in edges])
    gen = dif.build_fs_forward(reduce_forward_fs(g))
    S = dif.covariance_exact(gen, None, 1.5)
    best_q, parts = brute_force(S.toarray())
    p = cl.best_of(S, 20, seed=1)
    assert p.quality == pytest.approx(best_q, abs=1e-12)
    assert sorted(sorted(c.tolist()) for c in p.clusters()) == sorted(sorted(c) for c in parts)


def test_best_of_single_run_equals_trace():
    rng = np.random.default_rng(5)
    S = cov(random_zero_row_sum(rng, 7))
    a, b = cl.best_of(S, 1, seed=11), cl.louvain_trace(S, seed=11)
    assert a.same_as(b) and a.quality == b.quality


def test_best_of_dominates_each_run():
    rng = np.random.default_rng(6)
    S = cov(random_zero_row_sum(rng, 12))
    best = cl.best_of(S, 30, seed=100)
    for k in range(30):
        assert best.quality >= cl.louvain_trace(S, seed=100 + k).quality


def test_best_of_rejects_zero_runs():
    with pytest.raises(ValueError):
        cl.best_of(cov(np.zeros((2, 2))), 0, 0)


def test_rejects_asymmetric():
    S = np.array([[1.0, -1.0], [0.0, 0.0]])
    with pytest.raises(cl.ClusteringError):
        cl.louvain_trace(cov(S), 0)


def test_low_rank_factors_match_dense():
    rng = np.random.default_rng(8)
    K = random_zero_row_sum(rng, 9)
    u = rng.standard_normal(9)
    Sfull = K - np.outer(u, u)
    factored = dif.CovarianceMatrix(sp.csr_matrix(K), 0.5, "linearized", -u[:, None], u[:, None])
    np.testing.assert_allclose(factored.toarray(), Sfull, atol=1e-14)
    a = cl.best_of(factored, 10, 4)
    b = cl.best_of(cov(Sfull), 10, 4)
    assert a.quality == pytest.approx(b.quality, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 7))
def test_best_of_reaches_exhaustive_optimum(seed, n):
    rng = np.random.default_rng(seed)
    S = random_zero_row_sum(rng, n)
    q_star, _ = brute_force(S)
    p = cl.best_of(cov(S), 200, seed % 1000)
    assert p.quality <= q_star + 1e-12
    # quality reported is the clustered trace of S
    lab = p.labels
    assert p.quality == pytest.approx(sum(S[i, j] for i in range(n) for j in range(n) if lab[i] == lab[j]), abs=1e-12)


def test_local_pass_never_below_singletons():
    rng = np.random.default_rng(9)
    for _ in range(20):
        S = random_zero_row_sum(rng, 15)
        p = cl.louvain_trace(cov(S), int(rng.integers(1000)))
        assert p.quality >= np.trace(S) - 1e-12


def test_kernel_determinism():
    rng = np.random.default_rng(10)
    K = Kernel(as_csr(random_zero_row_sum(rng, 40)), np.zeros((40, 0)), np.zeros((40, 0)))
    assert np.array_equal(K.louvain(77), K.louvain(77))


def test_canonical_labels():
    assert canonical_labels(np.array([5, 5, 2, 9, 2])).tolist() == [0, 0, 1, 2, 1]


# combine


def part(labels, nodes=None, side="forward"):
    labels = np.asarray(labels)
    nodes = np.arange(len(labels)) if nodes is None else np.asarray(nodes)
    return Partition(nodes, labels, 1.0, 0.0, side)


def path_graph(n):
    return WeightedDigraph.from_edges([(str(i), str(i + 1), 1.0) for i in range(n - 1)])


def test_combine_single_cluster():
    g = path_graph(4)
    c = cl.combine(part([0] * 4), part([0] * 4, side="backward"), g)
    assert c.labels.tolist() == [0, 0, 0, 0]


def test_combine_intersection():
    g = path_graph(4)
    c = cl.combine(part([0, 0, 1, 1]), part([0, 1, 0, 1], side="backward"), g)
    assert c.n_clusters == 4


def test_combine_idempotent():
    g = path_graph(6)
    p = part([0, 1, 1, 2, 0, 2])
    assert cl.combine(p, p, g).same_as(Partition(np.arange(6), p.labels))


@pytest.mark.parametrize("rule", ["role", "majority", "separate"])
def test_combine_orphans_and_outsiders(rule):
    # node 0 forward-only, node 4 backward-only, node 5 in neither
    g = WeightedDigraph.from_edges([(str(i), str(i + 1), 1.0) for i in range(4)], labels=[str(i) for i in range(6)])
    fwd = part([0, 0, 1, 1], nodes=[0, 1, 2, 3])
    bwd = part([0, 1, 1, 1], nodes=[1, 2, 3, 4], side="backward")
    c = cl.combine(fwd, bwd, g, rule)
    lab = c.labels
    assert lab[5] not in lab[:5]
    if rule == "separate":
        assert lab[0] not in lab[1:4] and lab[4] not in lab[:4]
    else:
        # node 0 shares forward label 0 only with node 1; node 4 shares backward label 1 with nodes 2 and 3
        assert lab[0] == lab[1]
        assert lab[4] in (lab[2], lab[3])


def test_combine_backward_only_never_joins_forward_only():
    g = path_graph(4)
    fwd = part([0, 0, 1], nodes=[0, 1, 2])
    bwd = part([0, 0, 1], nodes=[1, 2, 3], side="backward")
    c = cl.combine(fwd, bwd, g, "separate")
    assert c.labels[3] != c.labels[0]


def test_combine_role_picks_upstream_and_downstream():
    # shared clusters U (0,1) -> M (2,3) -> D (4,5); forward-only node 6 has forward label of U and M
    edges = [("0", "1"), ("1", "0"), ("1", "2"), ("2", "3"), ("3", "2"), ("3", "4"), ("4", "5"), ("5", "4"), ("6", "0"), ("5", "7")]
    g = WeightedDigraph.from_edges([(s, d, 1.0) for s, d in edges], labels=[str(i) for i in range(8)])
    fwd = part([0, 0, 0, 0, 1, 1, 0], nodes=[0, 1, 2, 3, 4, 5, 6])
    bwd = part([0, 0, 1, 1, 1, 1, 1], nodes=[0, 1, 2, 3, 4, 5, 7], side="backward")
    c = cl.combine(fwd, bwd, g, "role")
    assert c.labels[6] == c.labels[0]
    assert c.labels[7] == c.labels[4]


# sweep


def two_cliques():
    edges = []
    for block in (range(5), range(5, 10)):
        for i in block:
            for j in block:
                if i != j:
                    edges.append((str(i), str(j), 1.0))
    edges += [("4", "5", 1.0), ("5", "4", 1.0)]
    return WeightedDigraph.from_edges(edges)


def test_sweep_two_cliques_plateau():
    g = two_cliques()
    res = cl.sweep(g, None, cl.log_grid(0.1, 100, 30), n_runs=10, seed=2)
    truth = Partition(np.arange(10), np.repeat([0, 1], 5))
    hits = [k for k, p in enumerate(res.partitions) if p.same_as(truth)]
    assert len(hits) >= 3
    # hits form one contiguous plateau of zero adjacent NVI
    assert hits == list(range(hits[0], hits[-1] + 1))
    assert np.all(res.nvi_adjacent[hits[0] : hits[-1]] == 0)
    assert res.partitions[res.optimal_index].same_as(truth)
    # exhaustive check at one plateau time
    gen = dif.build_fs_forward(reduce_forward_fs(g))
    t = res.times[hits[len(hits) // 2]]
    q_star = sum(dif.covariance_exact(gen, None, t).toarray()[np.ix_(b, b)].sum() for b in (range(5), range(5, 10)))
    assert res.forward[hits[len(hits) // 2]].quality == pytest.approx(q_star, abs=1e-12)


def test_sweep_single_time():
    res = cl.sweep(two_cliques(), None, [1.0], n_runs=2)
    assert len(res.nvi_adjacent) == 0 and res.optimal_index == 0


def test_sweep_rejects_bad_grid():
    with pytest.raises(ValueError):
        cl.sweep(two_cliques(), None, [1.0, 0.5])
    with pytest.raises(ValueError):
        cl.sweep(two_cliques(), None, [0.5, 2.0], cov_mode="linearized")


def test_sweep_delta_zero_error_equals_fs():
    g = two_cliques()
    times = cl.log_grid(0.1, 10, 6)
    a = cl.sweep(g, None, times, 5, "fs", seed=9)
    b = cl.sweep(g, ErrorVector(np.zeros(10)), times, 5, "delta", seed=9)
    for p, q in zip(a.partitions, b.partitions):
        assert p.same_as(q) and p.quality == q.quality


def test_sweep_thread_count_invariant():
    g = two_cliques()
    times = cl.log_grid(0.1, 10, 6)
    a = cl.sweep(g, None, times, 5, seed=4, threads=1)
    b = cl.sweep(g, None, times, 5, seed=4, threads=3)
    assert all(p.same_as(q) for p, q in zip(a.partitions, b.partitions))
    np.testing.assert_array_equal(a.quality, b.quality)


def test_sweep_linearized_runs():
    res = cl.sweep(two_cliques(), None, [0.25, 0.5, 1.0], 5, cov_mode="linearized")
    assert all(p is not None for p in res.partitions)


def test_select_scale_ties_and_identical():
    idx, minima = cl.select_scale(np.zeros(4), 5)
    assert idx == 1 and minima == [1, 2, 3]
    idx, _ = cl.select_scale(np.array([0.0, 0.3, 0.1, 0.1, 0.5]), 6)
    assert idx == 2
    assert cl.select_scale(np.array([0.2]), 2) == (0, [])


def test_nvi_heatmap():
    a = Partition.from_labels([0, 0, 1, 1, 2, 2])
    b = Partition.from_labels([0, 1, 0, 1, 0, 1])
    c = Partition.from_labels([0, 0, 0, 1, 1, 1])
    H = cl.nvi_heatmap([a, b, c])
    np.testing.assert_array_equal(H, H.T)
    assert np.all(np.diag(H) == 0)
    for (i, p), (j, q) in itertools.combinations(enumerate([a, b, c]), 2):
        assert H[i, j] == nvi(p, q)
    H2 = cl.nvi_heatmap([a, b, a, b])
    v = nvi(a, b)
    np.testing.assert_array_equal(H2, [[0, v, 0, v], [v, 0, v, 0], [0, v, 0, v], [v, 0, v, 0]])
    with pytest.raises(ValueError):
        cl.nvi_heatmap([a, Partition.from_labels([0, 1])])


# partition files


def test_partition_json_roundtrip(tmp_path):
    p = Partition(np.array([2, 0, 1]), np.array([7, 3, 7]), 0.5, 1.25, "combined")
    assert p.labels.tolist() == [0, 1, 1]
    p.write(tmp_path / "p.json", ["x", "y", "z"])
    q, names = read_partition(tmp_path / "p.json", ["x", "y", "z"])
    assert q.same_as(p) and q.markov_time == 0.5 and q.quality == 1.25
    with pytest.raises(ValueError):
        read_partition(tmp_path / "p.json", ["x", "y"])


def test_partition_rejects_duplicates():
    with pytest.raises(ValueError):
        Partition(np.array([0, 0]), np.array([0, 1]))


def test_intact_sbm_has_six_block_scale():
    # one core node of this draw sends more edges to the far sink than to its own block,
    # so the planted partition is matched up to that node only
    g, truth = sbm.generate(sbm.SbmSpec(0.1, 0.2, seed=0))
    res = cl.sweep(g, None, cl.log_grid(count=40), n_runs=10, mode="fs", seed=0)
    best = max(res.partitions, key=lambda p: nmi(p, truth))
    assert best.n_clusters == 6
    assert nmi(best, truth) > 0.98
