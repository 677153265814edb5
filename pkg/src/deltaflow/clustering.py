"""Trace-quality clustering of covariance matrices and Markov-time sweeps."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import diffusion as dif
from .graph import ErrorVector, WeightedDigraph, reduce_backward, reduce_backward_delta, reduce_forward_delta, reduce_forward_fs
from .louvain import Kernel, as_csr
from .metrics import nvi
from .partition import Partition

log = logging.getLogger(__name__)

SIDE_CODES = {"forward": 0, "backward": 1}


class ClusteringError(ValueError):
    pass


def _prepare(S: dif.CovarianceMatrix, sym_tol: float = 1e-10) -> Kernel:
    K = as_csr(S.base)
    U, V = S.factors()
    # symmetry check via two random probes keeps large factored matrices implicit
    probe = np.random.default_rng(12345).standard_normal((S.n, 2))
    x, y = probe[:, 0], probe[:, 1]
    sx = K @ x + U @ (V.T @ x)
    sy = K @ y + U @ (V.T @ y)
    scale = max(1.0, float(np.abs(sx).max()), float(np.abs(sy).max())) * math.sqrt(S.n)
    if abs(y @ sx - x @ sy) > sym_tol * scale:
        raise ClusteringError("covariance matrix is not symmetric")
    return Kernel(K, U, V)


def louvain_trace(S: dif.CovarianceMatrix, seed: int, nodes=None, side: str = "forward") -> Partition:
    """One randomised Louvain run maximising the clustered trace of ``S``."""
    nodes = np.arange(S.n) if nodes is None else nodes
    kern = _prepare(S)
    labels = kern.louvain(seed)
    return Partition(nodes, labels, S.markov_time, kern.quality(labels), side)


def best_of(S: dif.CovarianceMatrix, n_runs: int, seed: int, nodes=None, side: str = "forward") -> Partition:
    """Best of ``n_runs`` Louvain runs with seeds ``seed, seed+1, ...``.

    Ties on quality go to fewer clusters, then to the earliest seed.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    kern = _prepare(S)
    nodes = np.arange(S.n) if nodes is None else nodes
    best, best_key = None, None
    for k in range(n_runs):
        labels = kern.louvain(seed + k)
        key = (kern.quality(labels), -(int(labels.max()) + 1 if labels.size else 0))
        if best_key is None or key > best_key:
            best, best_key = labels, key
    return Partition(nodes, best, S.markov_time, best_key[0], side)


def combine(fwd: Partition | None, bwd: Partition | None, g: WeightedDigraph, orphans: str = "role") -> Partition:
    """Merge forward and backward partitions over all nodes of ``g``.

    Nodes in both processes are grouped by their (forward, backward) label
    pair. A node present in one process only keeps that process's community
    and is resolved against the pair-clusters sharing its label:

    * ``"role"``: forward-only nodes have no in-strength left and backward-only
      nodes no out-strength, so they join the most upstream (lowest
      in-balance) or most downstream (highest in-balance) candidate.
    * ``"majority"``: join the most populous candidate.
    * ``"separate"``: one extra cluster per single-process label.

    Nodes in neither process, or whose label has no shared candidate, form
    clusters of their own.
    """
    if orphans not in ("role", "majority", "separate"):
        raise ValueError(f"unknown orphan rule {orphans!r}")
    n = g.n_nodes
    fl = np.full(n, -1, dtype=np.int64)
    bl = np.full(n, -1, dtype=np.int64)
    if fwd is not None:
        fl[fwd.nodes] = fwd.labels
    if bwd is not None:
        bl[bwd.nodes] = bwd.labels
    shared = (fl >= 0) & (bl >= 0)
    pair = np.full(n, -1, dtype=np.int64)
    index: dict = {}
    for i in np.flatnonzero(shared):
        pair[i] = index.setdefault((int(fl[i]), int(bl[i])), len(index))
    n_pairs = len(index)
    pair_f = np.array([k[0] for k in index], dtype=np.int64)
    pair_b = np.array([k[1] for k in index], dtype=np.int64)
    sizes = np.bincount(pair[shared], minlength=n_pairs)

    balance = None
    if orphans == "role" and n_pairs:
        src, dst, w = g.edge_arrays()
        ok = shared[src] & shared[dst]
        cs, cd, w = pair[src[ok]], pair[dst[ok]], w[ok]
        cross = cs != cd
        w_in = np.bincount(cd[cross], weights=w[cross], minlength=n_pairs)
        w_out = np.bincount(cs[cross], weights=w[cross], minlength=n_pairs)
        tot = w_in + w_out
        balance = np.divide(w_in, tot, out=np.full(n_pairs, 0.5), where=tot > 0)

    def resolve(lab, forward_only):
        cands = np.flatnonzero((pair_f if forward_only else pair_b) == lab)
        if cands.size == 0 or orphans == "separate":
            return ("fwd" if forward_only else "bwd", int(lab))
        if orphans == "role":
            score = -balance[cands] if forward_only else balance[cands]
            top = cands[score == score.max()]
            cands = top
        # remaining ties: larger cluster, then first seen
        return int(cands[np.argmax(sizes[cands])])

    keys: list = []
    for i in range(n):
        if shared[i]:
            keys.append(int(pair[i]))
        elif fl[i] >= 0:
            keys.append(resolve(fl[i], True))
        elif bl[i] >= 0:
            keys.append(resolve(bl[i], False))
        else:
            keys.append(("none", i))
    relabel: dict = {}
    labels = np.array([relabel.setdefault(k, len(relabel)) for k in keys], dtype=np.int64)
    t = fwd.markov_time if fwd is not None else (bwd.markov_time if bwd is not None else float("nan"))
    q = sum(p.quality for p in (fwd, bwd) if p is not None)
    return Partition(np.arange(n), labels, t, q, "combined")


@dataclass
class Processes:
    """Reduced graphs and generators for one method on one graph."""

    forward: dif.Generator
    backward: dif.Generator
    teleport: dif.TeleportProfile | None = None
    pi: dict = field(default_factory=dict)


def build_processes(g: WeightedDigraph, e: ErrorVector | None, mode: str) -> Processes:
    if mode == "fs":
        return Processes(dif.build_fs_forward(reduce_forward_fs(g)), dif.build_fs_backward(reduce_backward(g)))
    if e is None:
        raise ValueError(f"mode {mode!r} needs an error vector")
    e.check_aligned(g)
    if mode == "delta":
        gen_f, prof = dif.build_delta_forward(reduce_forward_delta(g, e), e)
        return Processes(gen_f, dif.build_fs_backward(reduce_backward(g)), prof)
    if mode == "symmetric":
        if e.eps_in is None:
            raise ValueError("symmetric mode needs in-strength errors")
        gen_f, gen_b = dif.build_symmetric(reduce_forward_delta(g, e), reduce_backward_delta(g, e), e)
        return Processes(gen_f, gen_b)
    raise ValueError(f"unknown mode {mode!r}")


def _stationary_or_fallback(gen: dif.Generator, tol: float) -> dif.StationaryDistribution:
    try:
        return dif.stationary(gen, tol)
    except dif.NotConverged:
        pass
    try:
        return dif.stationary(gen, tol, lazy=True)
    except dif.NotConverged as exc:
        log.warning("%s stationary distribution did not converge; using last iterate", gen.direction)
        pi = np.clip(exc.last, 0, None)
        return dif.StationaryDistribution(pi / pi.sum(), exc.residual)


def process_covariance(proc: Processes, side: str, t: float, cov_mode: str, p0: str = "uniform", tol: float = 1e-10) -> dif.CovarianceMatrix:
    gen = proc.forward if side == "forward" else proc.backward
    if cov_mode == "exact":
        start = None
        if p0 == "stationary":
            if side not in proc.pi:
                proc.pi[side] = _stationary_or_fallback(gen, tol)
            start = proc.pi[side].pi
        return dif.covariance_exact(gen, start, t, on_unreachable="clamp")
    if cov_mode == "linearized":
        if side not in proc.pi:
            proc.pi[side] = _stationary_or_fallback(gen, tol)
        return dif.covariance_linearized(gen, proc.pi[side], t)
    raise ValueError(f"unknown covariance mode {cov_mode!r}")


def cell_seed(seed: int, time_index: int, side: str) -> int:
    return int(np.random.SeedSequence([seed, time_index, SIDE_CODES[side]]).generate_state(1)[0])


@dataclass
class SweepResult:
    times: np.ndarray
    partitions: list
    forward: list
    backward: list
    n_clusters: np.ndarray
    quality: np.ndarray
    nvi_adjacent: np.ndarray
    optimal_index: int
    local_minima: list[int]

    @property
    def optimal(self) -> Partition | None:
        return self.partitions[self.optimal_index] if self.partitions else None

    def side_nvi(self, side: str) -> np.ndarray:
        parts = self.forward if side == "forward" else self.backward
        return _adjacent_nvi(parts)


def _adjacent_nvi(parts) -> np.ndarray:
    out = np.full(max(len(parts) - 1, 0), np.nan)
    for k in range(len(parts) - 1):
        a, b = parts[k], parts[k + 1]
        if a is not None and b is not None and len(a) >= 2:
            out[k] = nvi(a, b)
    return out


def select_scale(nvi_adjacent: np.ndarray, n_times: int, eligible=None) -> tuple[int, list[int]]:
    """Interior grid point with the lowest NVI to its successor; ties to smaller t.

    ``eligible`` optionally masks grid points allowed as the optimum; when no
    eligible interior point has a finite NVI every interior point is used.
    """
    if n_times < 3:
        return 0, []
    interior = range(1, n_times - 1)
    vals = [(nvi_adjacent[k], k) for k in interior if not np.isnan(nvi_adjacent[k])]
    if not vals:
        return 0, []
    if eligible is not None:
        vals = [v for v in vals if eligible[v[1]]] or vals
    best = min(vals)[1]
    minima = []
    for k in interior:
        v = nvi_adjacent[k]
        if np.isnan(v):
            continue
        lo = nvi_adjacent[k - 1]
        hi = nvi_adjacent[k + 1] if k + 1 < len(nvi_adjacent) else np.inf
        if (np.isnan(lo) or v <= lo) and (np.isnan(hi) or v <= hi):
            minima.append(k)
    return best, minima


def _check_grid(times, cov_mode: str) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) == 0 or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be positive and strictly increasing")
    if cov_mode == "linearized" and times[-1] > 1:
        raise ValueError("linearized covariance needs Markov times in (0, 1]")
    return times


def sweep_side(
    proc: Processes,
    side: str,
    times,
    n_runs: int = 50,
    cov_mode: str = "exact",
    seed: int = 0,
    p0: str = "uniform",
    threads: int = 1,
) -> list:
    """Best partition of one process at every Markov time; failed cells are ``None``."""
    times = _check_grid(times, cov_mode)
    gen = proc.forward if side == "forward" else proc.backward
    if cov_mode == "linearized" or p0 == "stationary":
        process_covariance(proc, side, times[0], cov_mode, p0)

    def cell(k: int):
        t = float(times[k])
        try:
            S = process_covariance(proc, side, t, cov_mode, p0)
            return best_of(S, n_runs, cell_seed(seed, k, side), gen.graph.kept, side)
        except (ArithmeticError, ValueError) as exc:
            log.warning("t=%g %s: %s; skipped", t, side, exc)
            return None

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(cell, range(len(times))))
    return [cell(k) for k in range(len(times))]


def assemble(g: WeightedDigraph, times, fwd: list, bwd: list, orphans: str = "role") -> SweepResult:
    """Combine per-side partitions and pick the most stable scale."""
    times = np.asarray(times, dtype=float)
    combined = [combine(f, b, g, orphans) if f is not None and b is not None else None for f, b in zip(fwd, bwd)]
    n_clusters = np.array([p.n_clusters if p is not None else -1 for p in combined])
    qual = np.array([p.quality if p is not None else np.nan for p in combined])
    adj = _adjacent_nvi(combined)
    # all-singleton and one-cluster plateaus are trivially stable
    eligible = (n_clusters > 1) & (n_clusters < g.n_nodes)
    opt, minima = select_scale(adj, len(times), eligible)
    return SweepResult(times, combined, list(fwd), list(bwd), n_clusters, qual, adj, opt, minima)


def sweep(
    g: WeightedDigraph,
    e: ErrorVector | None,
    times,
    n_runs: int = 50,
    mode: str = "fs",
    cov_mode: str = "exact",
    seed: int = 0,
    p0: str = "uniform",
    orphans: str = "role",
    threads: int = 1,
) -> SweepResult:
    """Cluster both processes at every Markov time and combine the partitions."""
    times = _check_grid(times, cov_mode)
    proc = build_processes(g, e, mode)
    fwd = sweep_side(proc, "forward", times, n_runs, cov_mode, seed, p0, threads)
    bwd = sweep_side(proc, "backward", times, n_runs, cov_mode, seed, p0, threads)
    return assemble(g, times, fwd, bwd, orphans)


def nvi_heatmap(partitions) -> np.ndarray:
    """Pairwise NVI between partitions over a common node universe."""
    parts = list(partitions)
    if len(parts) < 2:
        raise ValueError("need at least two partitions")
    k = len(parts)
    H = np.zeros((k, k))
    for a in range(k):
        for b in range(a + 1, k):
            H[a, b] = H[b, a] = nvi(parts[a], parts[b])
    return H


def log_grid(t_min: float = 1e-2, t_max: float = 1e2, count: int = 96) -> np.ndarray:
    grid = np.logspace(math.log10(t_min), math.log10(t_max), count)
    # pin the endpoints; logspace rounding can push t_max past 1 in linearized mode
    grid[0] = t_min
    if count > 1:
        grid[-1] = t_max
    return grid
