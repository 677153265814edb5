"""Partition comparison and cluster characterisation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .graph import WeightedDigraph
from .partition import Partition


@dataclass(frozen=True)
class ContingencyTable:
    """Sparse co-assignment counts; rows index ``p``'s clusters, columns ``q``'s."""

    counts: sp.csr_matrix
    n: int

    @classmethod
    def of(cls, p: Partition, q: Partition) -> "ContingencyTable":
        if not np.array_equal(p.nodes, q.nodes):
            raise ValueError("partitions are over different node universes")
        n = len(p)
        counts = sp.csr_matrix(
            (np.ones(n, dtype=np.int64), (p.labels, q.labels)), shape=(p.n_clusters, q.n_clusters)
        )
        counts.sum_duplicates()
        return cls(counts, n)

    def entropies(self) -> tuple[float, float, float]:
        """``H(p)``, ``H(q)`` and mutual information, natural log."""
        n = self.n
        a = np.asarray(self.counts.sum(axis=1)).ravel()
        b = np.asarray(self.counts.sum(axis=0)).ravel()
        hp = _entropy(a / n)
        hq = _entropy(b / n)
        coo = self.counts.tocoo()
        c = coo.data.astype(float)
        outer = a[coo.row].astype(float) * b[coo.col]
        mi = float(np.sum(c / n * np.log(c * n / outer)))
        return hp, hq, max(mi, 0.0)


def _entropy(prob: np.ndarray) -> float:
    prob = prob[prob > 0]
    return float(-np.sum(prob * np.log(prob)))


def nmi(p: Partition, q: Partition, norm: str = "arithmetic") -> float:
    """Normalised mutual information; 1 for identical partitions."""
    hp, hq, mi = ContingencyTable.of(p, q).entropies()
    if norm == "arithmetic":
        d = 0.5 * (hp + hq)
    elif norm == "max":
        d = max(hp, hq)
    elif norm == "min":
        d = min(hp, hq)
    elif norm == "geometric":
        d = math.sqrt(hp * hq)
    else:
        raise ValueError(f"unknown normalisation {norm!r}")
    if hp == 0 and hq == 0:
        return 1.0
    if d == 0:
        return 0.0
    return float(min(1.0, mi / d))


def variation_of_information(p: Partition, q: Partition) -> float:
    hp, hq, mi = ContingencyTable.of(p, q).entropies()
    return max(0.0, hp + hq - 2.0 * mi)


def nvi(p: Partition, q: Partition) -> float:
    """Variation of information divided by ``ln n``; 0 iff identical."""
    n = len(p)
    if n < 2:
        raise ValueError("NVI needs at least two nodes")
    if p.same_as(q):
        return 0.0
    return float(min(1.0, variation_of_information(p, q) / math.log(n)))


def rbo(ranked_a: Sequence, ranked_b: Sequence, p: float = 0.9) -> float:
    """Extrapolated rank-biased overlap of two ranked lists (uneven lengths allowed)."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    for lst in (ranked_a, ranked_b):
        if len(set(lst)) != len(lst):
            raise ValueError("ranked lists must not contain duplicates")
    if not ranked_a or not ranked_b:
        return 1.0 if not ranked_a and not ranked_b else 0.0
    short, long_ = (ranked_a, ranked_b) if len(ranked_a) <= len(ranked_b) else (ranked_b, ranked_a)
    s, l = len(short), len(long_)
    seen_s: set = set()
    seen_l: set = set()
    overlap = 0
    x = [0] * (l + 1)
    for d in range(1, l + 1):
        el = long_[d - 1]
        if d <= s:
            es = short[d - 1]
            if es == el:
                overlap += 1
            else:
                overlap += (es in seen_l) + (el in seen_s)
            seen_s.add(es)
        else:
            overlap += el in seen_s
        seen_l.add(el)
        x[d] = overlap
    total = sum(x[d] / d * p**d for d in range(1, l + 1))
    total += sum(x[s] * (d - s) / (s * d) * p**d for d in range(s + 1, l + 1))
    tail = ((x[l] - x[s]) / l + x[s] / s) * p**l
    return float((1 - p) / p * total + tail)


def spectral_radius(adj: sp.spmatrix, iters: int = 100) -> float:
    """Perron root of a non-negative matrix by power iteration on ``A + I``."""
    n = adj.shape[0]
    if n == 0 or adj.nnz == 0:
        return 0.0
    x = np.full(n, 1.0 / n)
    lam = 0.0
    for _ in range(iters):
        y = adj @ x + x
        lam = float(y.sum() / x.sum())
        x = y / y.sum()
    return max(lam - 1.0, 0.0)


def katz_centrality(g: WeightedDigraph, damping: float | None = None, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """``x = sum_{k>=1} damping^k (A')^k 1``: walks weighted by length, counted at their endpoint."""
    rho = spectral_radius(g.adj)
    if damping is None:
        damping = 0.85 / rho if rho > 0 else 0.85
    if rho > 0 and damping >= 1.0 / rho:
        raise ValueError(f"damping {damping} diverges: must be below 1/rho = {1.0 / rho:.6g}")
    at = g.adj.T.tocsr()
    x = np.zeros(g.n_nodes)
    for _ in range(max_iter):
        nxt = damping * (at @ (x + 1.0))
        if np.abs(nxt - x).max() <= tol * max(1.0, np.abs(nxt).max()):
            return nxt
        x = nxt
    raise ArithmeticError("Katz iteration did not converge")


def katz_ranking(g: WeightedDigraph, damping: float | None = None, nodes=None) -> list[int]:
    """Node indices sorted by descending Katz centrality, ties by label."""
    x = katz_centrality(g, damping)
    idx = range(g.n_nodes) if nodes is None else [int(i) for i in nodes]
    return sorted(idx, key=lambda i: (-x[i], g.labels[i]))


@dataclass(frozen=True)
class ClusterRole:
    cluster: int
    size: int
    in_balance: float
    role: str


def role_for(in_balance: float, low: float = 0.2, high: float = 0.8) -> str:
    if in_balance <= low:
        return "upstream"
    if in_balance >= high:
        return "downstream"
    return "core"


def cluster_roles(g: WeightedDigraph, p: Partition, definition: str = "boundary") -> list[ClusterRole]:
    """In-balance and functional role per cluster.

    ``boundary``: weight entering the cluster over all boundary weight.
    ``internal``: internal weight over internal plus outgoing boundary weight.
    """
    if len(p) != g.n_nodes or not np.array_equal(p.nodes, np.arange(g.n_nodes)):
        raise ValueError("partition must cover every graph node")
    src, dst, w = g.edge_arrays()
    cs, cd = p.labels[src], p.labels[dst]
    k = p.n_clusters
    cross = cs != cd
    w_in = np.bincount(cd[cross], weights=w[cross], minlength=k)
    w_out = np.bincount(cs[cross], weights=w[cross], minlength=k)
    w_int = np.bincount(cs[~cross], weights=w[~cross], minlength=k)
    sizes = p.sizes()
    roles = []
    for c in range(k):
        if definition == "boundary":
            num, den = w_in[c], w_in[c] + w_out[c]
        elif definition == "internal":
            num, den = w_int[c], w_int[c] + w_out[c]
        else:
            raise ValueError(f"unknown in-balance definition {definition!r}")
        ib = float(num / den) if den > 0 else 0.5
        roles.append(ClusterRole(c, int(sizes[c]), ib, role_for(ib)))
    return roles
