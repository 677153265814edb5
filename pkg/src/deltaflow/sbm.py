"""Coupled double source -> core -> sink stochastic block model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .graph import WeightedDigraph
from .partition import Partition

BLOCK_NAMES = ("sources1", "core1", "sinks1", "sources2", "core2", "sinks2")
SRC1, CORE1, SINK1, SRC2, CORE2, SINK2 = range(6)


@dataclass(frozen=True)
class SbmSpec:
    p_in: float
    p_out: float
    p_core: float = 0.4
    n_total: int = 200
    block_sizes: tuple[int, ...] | None = None
    coupling: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.block_sizes is None:
            object.__setattr__(self, "block_sizes", default_block_sizes(self.n_total))
        sizes = tuple(int(s) for s in self.block_sizes)
        if len(sizes) != 6 or any(s < 0 for s in sizes):
            raise ValueError("need six non-negative block sizes")
        if sum(sizes) != self.n_total:
            raise ValueError(f"block sizes sum to {sum(sizes)}, expected {self.n_total}")
        object.__setattr__(self, "block_sizes", sizes)
        for name in ("p_in", "p_out", "p_core", "coupling"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")

    @property
    def coupling_prob(self) -> float:
        return self.p_out / 4 if self.coupling is None else self.coupling


def default_block_sizes(n: int) -> tuple[int, ...]:
    """Split ``n`` into two groups, each into sources/core/sinks, extra nodes going to cores."""
    half = [n // 2 + n % 2, n // 2]
    sizes = []
    for h in half:
        q, rem = divmod(h, 3)
        parts = [q, q, q]
        if rem >= 1:
            parts[1] += 1
        if rem == 2:
            parts[0] += 1
        sizes += parts
    return tuple(sizes)


def block_probability_matrix(spec: SbmSpec) -> np.ndarray:
    """Edge probability from row block to column block."""
    P = np.zeros((6, 6))
    c = spec.coupling_prob
    for src, core, sink, other_core, other_sink in ((SRC1, CORE1, SINK1, CORE2, SINK2), (SRC2, CORE2, SINK2, CORE1, SINK1)):
        P[src, src] = spec.p_in
        P[sink, sink] = spec.p_in
        P[core, core] = spec.p_core
        P[core, other_core] = spec.p_in
        P[src, core] = spec.p_out
        P[core, sink] = spec.p_out
        P[src, other_core] = c
        P[core, other_sink] = c
    return P


def block_membership(spec: SbmSpec) -> np.ndarray:
    return np.repeat(np.arange(6), spec.block_sizes)


def generate(spec: SbmSpec) -> tuple[WeightedDigraph, Partition]:
    """Draw a unit-weight digraph and its six-block ground truth.

    Each ordered pair of distinct nodes is an independent Bernoulli draw; block
    pairs are visited in row-major order so a seed fixes the graph.
    """
    rng = np.random.default_rng(spec.seed)
    P = block_probability_matrix(spec)
    bounds = np.concatenate(([0], np.cumsum(spec.block_sizes)))
    rows, cols = [], []
    for a in range(6):
        for b in range(6):
            na, nb = spec.block_sizes[a], spec.block_sizes[b]
            if P[a, b] == 0 or na == 0 or nb == 0:
                continue
            hit = rng.random((na, nb)) < P[a, b]
            if a == b:
                np.fill_diagonal(hit, False)
            r, c = np.nonzero(hit)
            rows.append(r + bounds[a])
            cols.append(c + bounds[b])
    n = spec.n_total
    r = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    c = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    adj = sp.csr_matrix((np.ones(len(r)), (r, c)), shape=(n, n))
    g = WeightedDigraph(tuple(str(i) for i in range(n)), adj)
    truth = Partition(np.arange(n), block_membership(spec), side="ground_truth")
    return g, truth


def block_pair_counts(spec: SbmSpec) -> np.ndarray:
    """Ordered pairs of distinct nodes available to each block pair."""
    s = np.asarray(spec.block_sizes)
    return np.outer(s, s) - np.diag(s)
