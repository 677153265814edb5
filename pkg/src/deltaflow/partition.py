"""Partition value type and its JSON file format."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .louvain import canonical_labels


@dataclass(frozen=True, eq=False)
class Partition:
    """Dense cluster labels over ``nodes`` (original node indices, increasing)."""

    nodes: np.ndarray
    labels: np.ndarray
    markov_time: float = float("nan")
    quality: float = float("nan")
    side: str = "combined"

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=np.int64)
        labels = canonical_labels(np.asarray(self.labels, dtype=np.int64)) if len(self.labels) else np.zeros(0, np.int64)
        if nodes.shape != labels.shape:
            raise ValueError("nodes and labels differ in length")
        if len(np.unique(nodes)) != len(nodes):
            raise ValueError("node assigned more than once")
        order = np.argsort(nodes, kind="stable")
        nodes, labels = nodes[order], labels[order]
        labels = canonical_labels(labels) if len(labels) else labels
        nodes.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_labels(cls, labels, **kw) -> "Partition":
        labels = np.asarray(labels)
        return cls(np.arange(len(labels)), _intern(labels), **kw)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def __len__(self) -> int:
        return len(self.nodes)

    def clusters(self) -> list[np.ndarray]:
        """Member node indices per cluster label."""
        order = np.argsort(self.labels, kind="stable")
        bounds = np.cumsum(np.bincount(self.labels, minlength=self.n_clusters))[:-1]
        return np.split(self.nodes[order], bounds)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    def restrict(self, nodes) -> "Partition":
        nodes = np.asarray(nodes, dtype=np.int64)
        keep = np.isin(self.nodes, nodes)
        return Partition(self.nodes[keep], self.labels[keep], self.markov_time, self.quality, self.side)

    def same_as(self, other: "Partition") -> bool:
        return np.array_equal(self.nodes, other.nodes) and np.array_equal(self.labels, other.labels)

    def to_json(self, node_labels) -> dict:
        clusters = {node_labels[int(i)]: int(c) for i, c in zip(self.nodes, self.labels)}
        return {"markov_time": _num(self.markov_time), "quality": _num(self.quality), "clusters": clusters}

    def write(self, path: str | Path, node_labels) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(node_labels), fh, indent=1)
            fh.write("\n")


def _num(x: float):
    # JSON has no NaN
    return None if x is None or np.isnan(x) else float(x)


def _intern(labels) -> np.ndarray:
    _, inv = np.unique(labels, return_inverse=True)
    return inv.astype(np.int64)


def read_partition(path: str | Path, node_labels=None) -> tuple[Partition, tuple[str, ...]]:
    """Load a partition file.

    With ``node_labels`` given, nodes are mapped onto that universe (unknown
    labels raise); otherwise the file's own label order defines the indices.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    clusters = doc["clusters"]
    names = tuple(clusters) if node_labels is None else tuple(node_labels)
    index = {lab: k for k, lab in enumerate(names)}
    missing = [lab for lab in clusters if lab not in index]
    if missing:
        raise ValueError(f"{path}: {len(missing)} node(s) not in the graph, e.g. {missing[0]!r}")
    nodes = np.array([index[lab] for lab in clusters], dtype=np.int64)
    labels = np.array([int(c) for c in clusters.values()], dtype=np.int64)
    mt = doc.get("markov_time")
    q = doc.get("quality")
    part = Partition(nodes, labels, float("nan") if mt is None else float(mt), float("nan") if q is None else float(q))
    return part, names
