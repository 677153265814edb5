"""Weighted directed graphs and the node reductions defining each process domain."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


class GraphError(ValueError):
    """Raised for malformed graph input or a reduction that leaves no nodes."""


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    """Sparse weighted digraph over dense indices ``0..n-1``.

    ``adj[i, j]`` is the total weight of edges ``i -> j``. Strengths are cached
    at construction and the instance is treated as immutable.
    """

    labels: tuple[str, ...]
    adj: sp.csr_matrix
    s_out: np.ndarray = field(init=False)
    s_in: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.labels)
        if self.adj.shape != (n, n):
            raise GraphError(f"adjacency shape {self.adj.shape} does not match {n} labels")
        adj = sp.csr_matrix(self.adj, dtype=float)
        adj.sum_duplicates()
        adj.eliminate_zeros()
        adj.sort_indices()
        if adj.nnz and adj.data.min() <= 0:
            raise GraphError("edge weights must be positive")
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "s_out", np.asarray(adj.sum(axis=1)).ravel())
        object.__setattr__(self, "s_in", np.asarray(adj.sum(axis=0)).ravel())
        self.s_out.setflags(write=False)
        self.s_in.setflags(write=False)

    @classmethod
    def from_edges(
        cls,
        edges: Iterable[tuple[str, str, float]],
        labels: Sequence[str] | None = None,
    ) -> "WeightedDigraph":
        """Build from ``(src, dst, weight)`` label triples; duplicates are summed."""
        index: dict[str, int] = {}
        order: list[str] = []
        for lab in labels or ():
            if lab not in index:
                index[lab] = len(order)
                order.append(lab)
        rows, cols, vals = [], [], []
        for src, dst, w in edges:
            for lab in (src, dst):
                if lab not in index:
                    index[lab] = len(order)
                    order.append(lab)
            if not w > 0:
                raise GraphError(f"non-positive weight {w} on edge {src}->{dst}")
            rows.append(index[src])
            cols.append(index[dst])
            vals.append(float(w))
        n = len(order)
        adj = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
        return cls(tuple(order), adj)

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_edges(self) -> int:
        return self.adj.nnz

    def edges(self) -> list[tuple[int, int, float]]:
        """Edges as ``(src, dst, weight)`` index triples in row-major order."""
        coo = self.adj.tocoo()
        return list(zip(coo.row.tolist(), coo.col.tolist(), coo.data.tolist()))

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        coo = self.adj.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data.copy()

    def check_strengths(self, rtol: float = 1e-12) -> bool:
        s_out = np.asarray(self.adj.sum(axis=1)).ravel()
        s_in = np.asarray(self.adj.sum(axis=0)).ravel()
        return np.allclose(s_out, self.s_out, rtol=rtol, atol=0) and np.allclose(
            s_in, self.s_in, rtol=rtol, atol=0
        )


@dataclass(frozen=True)
class ErrorVector:
    """Per-node uncertainty on out-strength (and optionally in-strength)."""

    eps_out: np.ndarray
    eps_in: np.ndarray | None = None

    def __post_init__(self):
        eps_out = np.asarray(self.eps_out, dtype=float).copy()
        if eps_out.ndim != 1:
            raise ValueError("eps_out must be one-dimensional")
        if np.any(eps_out < 0) or not np.all(np.isfinite(eps_out)):
            raise ValueError("errors must be finite and non-negative")
        eps_out.setflags(write=False)
        object.__setattr__(self, "eps_out", eps_out)
        if self.eps_in is not None:
            eps_in = np.asarray(self.eps_in, dtype=float).copy()
            if eps_in.shape != eps_out.shape:
                raise ValueError("eps_in and eps_out lengths differ")
            if np.any(eps_in < 0) or not np.all(np.isfinite(eps_in)):
                raise ValueError("errors must be finite and non-negative")
            eps_in.setflags(write=False)
            object.__setattr__(self, "eps_in", eps_in)

    @classmethod
    def zeros(cls, n: int, symmetric: bool = False) -> "ErrorVector":
        return cls(np.zeros(n), np.zeros(n) if symmetric else None)

    def __len__(self) -> int:
        return len(self.eps_out)

    def check_aligned(self, g: WeightedDigraph) -> None:
        if len(self) != g.n_nodes:
            raise ValueError(f"error vector has {len(self)} entries, graph has {g.n_nodes} nodes")


@dataclass(frozen=True, eq=False)
class ReducedGraph:
    """A graph restricted to the surviving nodes of a reduction rule.

    ``kept`` holds original indices in increasing order; strengths are those of
    the restricted adjacency.
    """

    parent: WeightedDigraph
    kept: np.ndarray
    rule: str

    def __post_init__(self):
        kept = np.asarray(self.kept, dtype=np.int64)
        kept.setflags(write=False)
        object.__setattr__(self, "kept", kept)
        adj = self.parent.adj[kept][:, kept].tocsr()
        adj.sort_indices()
        object.__setattr__(self, "adj", adj)
        object.__setattr__(self, "s_out", np.asarray(adj.sum(axis=1)).ravel())
        object.__setattr__(self, "s_in", np.asarray(adj.sum(axis=0)).ravel())
        lookup = np.full(self.parent.n_nodes, -1, dtype=np.int64)
        lookup[kept] = np.arange(len(kept))
        lookup.setflags(write=False)
        object.__setattr__(self, "reduced_index", lookup)

    @property
    def n_nodes(self) -> int:
        return len(self.kept)

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(self.parent.labels[i] for i in self.kept)

    def write_mapping(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["original_label", "reduced_index"])
            for k, i in enumerate(self.kept):
                writer.writerow([self.parent.labels[i], k])


def _iterative_reduce(adj: sp.csr_matrix, keep_extra: np.ndarray | None, axis: int) -> np.ndarray:
    # axis=1: out-strength, axis=0: in-strength. Strengths recomputed on survivors each pass.
    n = adj.shape[0]
    alive = np.ones(n, dtype=bool)
    while True:
        idx = np.flatnonzero(alive)
        sub = adj[idx][:, idx]
        strength = np.asarray(sub.sum(axis=axis)).ravel()
        drop = strength <= 0
        if keep_extra is not None:
            drop &= ~keep_extra[idx]
        if not drop.any():
            return idx
        alive[idx[drop]] = False


def reduce_backward(g: WeightedDigraph) -> ReducedGraph:
    """Iteratively drop nodes with zero in-strength."""
    kept = _iterative_reduce(g.adj, None, axis=0)
    if kept.size == 0:
        raise GraphError("backward process empty")
    return ReducedGraph(g, kept, "backward")


def reduce_forward_fs(g: WeightedDigraph) -> ReducedGraph:
    """Iteratively drop nodes with zero out-strength."""
    kept = _iterative_reduce(g.adj, None, axis=1)
    if kept.size == 0:
        raise GraphError("forward process empty")
    return ReducedGraph(g, kept, "forward")


def reduce_forward_delta(g: WeightedDigraph, e: ErrorVector) -> ReducedGraph:
    """Iteratively drop nodes whose out-strength and out-error are both zero."""
    e.check_aligned(g)
    kept = _iterative_reduce(g.adj, e.eps_out > 0, axis=1)
    if kept.size == 0:
        raise GraphError("forward process empty")
    return ReducedGraph(g, kept, "forward_delta")


def reduce_backward_delta(g: WeightedDigraph, e: ErrorVector) -> ReducedGraph:
    """Backward mirror of :func:`reduce_forward_delta`, using the in-strength error."""
    e.check_aligned(g)
    if e.eps_in is None:
        return reduce_backward(g)
    kept = _iterative_reduce(g.adj, e.eps_in > 0, axis=0)
    if kept.size == 0:
        raise GraphError("backward process empty")
    return ReducedGraph(g, kept, "backward_delta")


def load_edge_list(path: str | Path, directed: bool = True, extra_labels: Sequence[str] | None = None) -> WeightedDigraph:
    """Read a whitespace-separated ``src dst [weight]`` edge list.

    Undirected input is stored as a pair of reciprocal directed edges.
    Nodes are indexed by first appearance; ``extra_labels`` not seen in any
    edge are appended afterwards as isolated nodes.
    """
    edges = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise GraphError(f"{path}:{lineno}: expected 'src dst [weight]', got {line!r}")
            try:
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise GraphError(f"{path}:{lineno}: weight {parts[2]!r} is not a number") from None
            if not w > 0:
                raise GraphError(f"{path}:{lineno}: non-positive weight {w}")
            edges.append((parts[0], parts[1], w))
            if not directed and parts[0] != parts[1]:
                edges.append((parts[1], parts[0], w))
    if not edges and not extra_labels:
        raise GraphError("empty graph")
    order = dict.fromkeys(lab for src, dst, _ in edges for lab in (src, dst))
    order.update(dict.fromkeys(extra_labels or ()))
    return WeightedDigraph.from_edges(edges, list(order))


def write_edge_list(g: WeightedDigraph, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, w in g.edges():
            fh.write(f"{g.labels[i]} {g.labels[j]} {w:.17g}\n")
