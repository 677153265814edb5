import numpy as np
import pytest
import scipy.sparse as sp

from deltaflow.graph import WeightedDigraph


def random_digraph(rng: np.random.Generator, n: int, density: float = 0.3, weighted: bool = True, loops: bool = False):
    """Erdős–Rényi style digraph with optional integer weights."""
    mask = rng.random((n, n)) < density
    if not loops:
        np.fill_diagonal(mask, False)
    w = rng.integers(1, 5, size=(n, n)).astype(float) if weighted else np.ones((n, n))
    A = sp.csr_matrix(np.where(mask, w, 0.0))
    return WeightedDigraph(tuple(f"v{i}" for i in range(n)), A)


def strongly_connected_digraph(rng: np.random.Generator, n: int, density: float = 0.3):
    """Random digraph plus a Hamiltonian cycle, so every reduction keeps all nodes."""
    g = random_digraph(rng, n, density)
    A = g.adj.toarray()
    perm = rng.permutation(n)
    for k in range(n):
        i, j = perm[k], perm[(k + 1) % n]
        if A[i, j] == 0:
            A[i, j] = 1.0
    return WeightedDigraph(g.labels, sp.csr_matrix(A))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
