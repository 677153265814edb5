"""Edge-removal injection and empirical error estimation."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .graph import ErrorVector, WeightedDigraph

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RemovalRecord:
    removed_edges: list[tuple[int, int, float]]
    fraction: float
    seed: int


@dataclass(frozen=True)
class ChannelStats:
    node: str
    n_deleted: float
    n_observed: float
    n_with_links: float

    def __post_init__(self):
        if min(self.n_deleted, self.n_observed, self.n_with_links) < 0:
            raise ValueError(f"negative count for node {self.node!r}")
        if self.n_with_links > self.n_observed:
            raise ValueError(f"node {self.node!r}: more posts with links than observed posts")


def n_to_remove(r: float, n_edges: int) -> int:
    # round half up, independent of banker's rounding
    return int(np.floor(r * n_edges + 0.5))


def remove_random_edges(g: WeightedDigraph, r: float, seed: int) -> tuple[WeightedDigraph, ErrorVector, RemovalRecord]:
    """Drop ``round(r |E|)`` whole edges uniformly at random.

    The error of node ``i`` is the removed out-weight of ``i``.
    """
    if not 0 <= r < 1:
        raise ValueError("removal fraction must lie in [0, 1)")
    src, dst, w = g.edge_arrays()
    k = n_to_remove(r, len(w))
    rng = np.random.default_rng(seed)
    drop = np.sort(rng.choice(len(w), size=k, replace=False)) if k else np.zeros(0, np.int64)
    keep = np.ones(len(w), dtype=bool)
    keep[drop] = False
    n = g.n_nodes
    adj = sp.csr_matrix((w[keep], (src[keep], dst[keep])), shape=(n, n))
    degraded = WeightedDigraph(g.labels, adj)
    eps = np.bincount(src[drop], weights=w[drop], minlength=n)
    record = RemovalRecord([(int(src[d]), int(dst[d]), float(w[d])) for d in drop], float(r), int(seed))
    return degraded, ErrorVector(eps), record


def restore_edges(g: WeightedDigraph, record: RemovalRecord) -> WeightedDigraph:
    src, dst, w = g.edge_arrays()
    if record.removed_edges:
        rs, rd, rw = map(np.asarray, zip(*record.removed_edges))
        src, dst, w = np.concatenate([src, rs]), np.concatenate([dst, rd]), np.concatenate([w, rw])
    n = g.n_nodes
    return WeightedDigraph(g.labels, sp.csr_matrix((w, (src, dst)), shape=(n, n)))


def estimate_errors(stats: list[ChannelStats], g: WeightedDigraph) -> ErrorVector:
    """Missing out-links per node: deleted posts times the observed share of posts with links."""
    by_node = {s.node: s for s in stats}
    eps = np.zeros(g.n_nodes)
    missing = 0
    for i, lab in enumerate(g.labels):
        s = by_node.get(lab)
        if s is None:
            missing += 1
            continue
        if s.n_observed == 0:
            if s.n_deleted > 0:
                log.warning("node %s has deleted posts but no observed posts; error set to 0", lab)
            continue
        eps[i] = s.n_deleted * (s.n_with_links / s.n_observed)
    if missing:
        log.warning("%d graph node(s) have no stats row; their error is 0", missing)
    return ErrorVector(eps)


def read_channel_stats(path: str | Path) -> list[ChannelStats]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"node", "n_deleted", "n_observed", "n_with_links"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ValueError(f"{path}: header must contain {sorted(need)}")
        for row in reader:
            out.append(
                ChannelStats(row["node"], float(row["n_deleted"]), float(row["n_observed"]), float(row["n_with_links"]))
            )
    return out


def write_errors(e: ErrorVector, labels, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if e.eps_in is None:
            writer.writerow(["node", "epsilon"])
            for lab, v in zip(labels, e.eps_out):
                writer.writerow([lab, f"{v:.17g}"])
        else:
            writer.writerow(["node", "epsilon", "epsilon_in"])
            for lab, v, u in zip(labels, e.eps_out, e.eps_in):
                writer.writerow([lab, f"{v:.17g}", f"{u:.17g}"])


def read_errors(path: str | Path, g: WeightedDigraph) -> ErrorVector:
    """Read ``node,epsilon[,epsilon_in]``; nodes absent from the file get 0."""
    index = {lab: i for i, lab in enumerate(g.labels)}
    eps = np.zeros(g.n_nodes)
    eps_in = None
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "node" not in reader.fieldnames or "epsilon" not in reader.fieldnames:
            raise ValueError(f"{path}: header must contain node,epsilon")
        if "epsilon_in" in reader.fieldnames:
            eps_in = np.zeros(g.n_nodes)
        for row in reader:
            i = index.get(row["node"])
            if i is None:
                log.warning("error file node %s is not in the graph", row["node"])
                continue
            eps[i] = float(row["epsilon"])
            if eps_in is not None:
                eps_in[i] = float(row["epsilon_in"])
    return ErrorVector(eps, eps_in)


def write_removed(record: RemovalRecord, labels, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["src", "dst", "weight"])
        for s, d, w in record.removed_edges:
            writer.writerow([labels[s], labels[d], f"{w:.17g}"])
