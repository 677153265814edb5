"""Flow Stability and Delta Flow Stability community detection for directed networks with missing links."""

from .graph import ErrorVector, GraphError, ReducedGraph, WeightedDigraph, load_edge_list
from .partition import Partition

__all__ = ["ErrorVector", "GraphError", "Partition", "ReducedGraph", "WeightedDigraph", "load_edge_list"]
__version__ = "0.1.0"
