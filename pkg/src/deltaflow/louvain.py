"""Louvain optimisation of the clustered-trace quality ``sum_c sum_{i,j in c} S_ij``.

``S`` is given as a symmetric CSR part ``K`` plus low-rank factors ``U V'``.
The cluster-level sums of ``U`` and ``V`` are tracked so that rank-one terms
never need to be expanded, which keeps large linearized covariances sparse.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numba import njit

MOVE_TOL = 1e-12
MAX_PASSES = 1000


@njit(cache=True, nogil=True)
def _local_pass(indptr, indices, data, U, V, comm, cU, cV, size, free, n_free, order, tol):
    n = order.shape[0]
    r = U.shape[1]
    acc = np.zeros(n)
    stamp = np.full(n, -1, dtype=np.int64)
    cand = np.empty(n, dtype=np.int64)
    moved = 0
    for idx in range(n):
        i = order[idx]
        ci = comm[i]
        for k in range(r):
            cU[ci, k] -= U[i, k]
            cV[ci, k] -= V[i, k]
        size[ci] -= 1
        stamp[ci] = idx
        acc[ci] = 0.0
        cand[0] = ci
        nc = 1
        for p in range(indptr[i], indptr[i + 1]):
            j = indices[p]
            if j == i:
                continue
            c = comm[j]
            if stamp[c] != idx:
                stamp[c] = idx
                acc[c] = 0.0
                cand[nc] = c
                nc += 1
            acc[c] += data[p]
        best = ci
        best_gain = 0.0
        for q in range(nc):
            c = cand[q]
            g = 0.0
            if size[c] > 0:
                g = 2.0 * acc[c]
                for k in range(r):
                    g += U[i, k] * cV[c, k] + V[i, k] * cU[c, k]
            if q == 0:
                best_gain = g
            elif g > best_gain + tol:
                best = c
                best_gain = g
        if size[ci] > 0 and 0.0 > best_gain + tol:
            # isolating the node beats every candidate
            n_free -= 1
            best = free[n_free]
        if best != ci:
            moved += 1
            if size[ci] == 0:
                free[n_free] = ci
                n_free += 1
        comm[i] = best
        size[best] += 1
        for k in range(r):
            cU[best, k] += U[i, k]
            cV[best, k] += V[i, k]
    return moved, n_free


@njit(cache=True, nogil=True)
def _relabel_nb(comm):
    # dense labels in order of first appearance
    n = comm.shape[0]
    mapping = np.full(n, -1, dtype=np.int64)
    out = np.empty(n, dtype=np.int64)
    k = 0
    for i in range(n):
        c = comm[i]
        if mapping[c] < 0:
            mapping[c] = k
            k += 1
        out[i] = mapping[c]
    return out, k


@njit(cache=True, nogil=True)
def _aggregate(indptr, indices, data, comm, k):
    n = indptr.shape[0] - 1
    start = np.zeros(k + 1, dtype=np.int64)
    for i in range(n):
        start[comm[i] + 1] += 1
    for c in range(k):
        start[c + 1] += start[c]
    fill = start[:-1].copy()
    members = np.empty(n, dtype=np.int64)
    for i in range(n):
        members[fill[comm[i]]] = i
        fill[comm[i]] += 1
    acc = np.zeros(k)
    stamp = np.full(k, -1, dtype=np.int64)
    cand = np.empty(k, dtype=np.int64)
    new_indptr = np.zeros(k + 1, dtype=np.int64)
    new_indices = np.empty(indices.shape[0], dtype=np.int64)
    new_data = np.empty(indices.shape[0])
    pos = 0
    for c in range(k):
        nc = 0
        for q in range(start[c], start[c + 1]):
            m = members[q]
            for p in range(indptr[m], indptr[m + 1]):
                cj = comm[indices[p]]
                if stamp[cj] != c:
                    stamp[cj] = c
                    acc[cj] = 0.0
                    cand[nc] = cj
                    nc += 1
                acc[cj] += data[p]
        row = np.sort(cand[:nc])
        for q in range(nc):
            new_indices[pos] = row[q]
            new_data[pos] = acc[row[q]]
            pos += 1
        new_indptr[c + 1] = pos
    return new_indptr, new_indices[:pos].copy(), new_data[:pos].copy()


@njit(cache=True, nogil=True)
def _louvain_nb(indptr, indices, data, U, V, seed, tol, max_passes):
    np.random.seed(seed)
    n = indptr.shape[0] - 1
    r = U.shape[1]
    membership = np.arange(n)
    while True:
        m = indptr.shape[0] - 1
        comm = np.arange(m)
        cU = U.copy()
        cV = V.copy()
        size = np.ones(m, dtype=np.int64)
        free = np.empty(m, dtype=np.int64)
        n_free = 0
        total = 0
        for _ in range(max_passes):
            order = np.random.permutation(m)
            moved, n_free = _local_pass(indptr, indices, data, U, V, comm, cU, cV, size, free, n_free, order, tol)
            total += moved
            if moved == 0:
                break
        comm, k = _relabel_nb(comm)
        for i in range(n):
            membership[i] = comm[membership[i]]
        if total == 0 or k == m:
            return membership
        indptr, indices, data = _aggregate(indptr, indices, data, comm, k)
        Un = np.zeros((k, r))
        Vn = np.zeros((k, r))
        for i in range(m):
            for q in range(r):
                Un[comm[i], q] += U[i, q]
                Vn[comm[i], q] += V[i, q]
        U = Un
        V = Vn


@njit(cache=True, nogil=True)
def _clustered_trace(indptr, indices, data, labels):
    tot = 0.0
    n = indptr.shape[0] - 1
    for i in range(n):
        li = labels[i]
        for p in range(indptr[i], indptr[i + 1]):
            if labels[indices[p]] == li:
                tot += data[p]
    return tot


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Dense labels numbered by first appearance."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return labels.copy()
    _, inv = np.unique(labels, return_inverse=True)
    return _relabel_nb(inv.astype(np.int64).ravel())[0]


def as_csr(K) -> sp.csr_matrix:
    if sp.issparse(K):
        K = sp.csr_matrix(K, dtype=float)
        K.sum_duplicates()
        K.sort_indices()
        return K
    K = np.asarray(K, dtype=float)
    n = K.shape[0]
    # dense rows keep every entry so candidate clusters are never missed
    indptr = np.arange(0, n * n + 1, n, dtype=np.int64)
    indices = np.tile(np.arange(n, dtype=np.int64), n)
    return sp.csr_matrix((K.ravel().copy(), indices, indptr), shape=(n, n))


class Kernel:
    """CSR arrays and low-rank factors prepared once for repeated runs."""

    def __init__(self, K: sp.csr_matrix, U: np.ndarray, V: np.ndarray):
        self.indptr = np.ascontiguousarray(K.indptr, dtype=np.int64)
        self.indices = np.ascontiguousarray(K.indices, dtype=np.int64)
        self.data = np.ascontiguousarray(K.data, dtype=float)
        self.U = np.ascontiguousarray(U, dtype=float).reshape(K.shape[0], -1)
        self.V = np.ascontiguousarray(V, dtype=float).reshape(K.shape[0], -1)

    @property
    def n(self) -> int:
        return self.indptr.shape[0] - 1

    def louvain(self, seed: int, tol: float = MOVE_TOL) -> np.ndarray:
        return _louvain_nb(self.indptr, self.indices, self.data, self.U, self.V, int(seed) % 2**32, tol, MAX_PASSES)

    def quality(self, labels: np.ndarray) -> float:
        labels = np.asarray(labels, dtype=np.int64)
        q = _clustered_trace(self.indptr, self.indices, self.data, labels)
        if self.U.shape[1] and labels.size:
            k = int(labels.max()) + 1
            cU = np.zeros((k, self.U.shape[1]))
            cV = np.zeros((k, self.U.shape[1]))
            np.add.at(cU, labels, self.U)
            np.add.at(cV, labels, self.V)
            q += float(np.sum(cU * cV))
        return float(q)


def louvain(K: sp.csr_matrix, U: np.ndarray, V: np.ndarray, seed: int, tol: float = MOVE_TOL) -> np.ndarray:
    """Greedy multi-level optimisation; returns dense labels over the input nodes."""
    return Kernel(K, U, V).louvain(seed, tol)


def quality(K: sp.csr_matrix, U: np.ndarray, V: np.ndarray, labels: np.ndarray) -> float:
    """Clustered trace of ``K + U V'`` under ``labels``."""
    return Kernel(K, U, V).quality(labels)
