"""Experiment pipelines and their CSV/JSON outputs.

Every float is written with 17 significant digits so repeated runs with the
same seed produce byte-identical files.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import clustering as cl
from .errors import remove_random_edges
from .graph import ErrorVector, WeightedDigraph
from .metrics import cluster_roles, nmi
from .partition import Partition

log = logging.getLogger(__name__)

METHODS = ("fs", "delta", "symmetric")


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class RecoveryGrid:
    """NMI against a reference partition over removal fractions and Markov times."""

    r_values: np.ndarray
    times: np.ndarray
    nmi: dict

    @property
    def methods(self) -> tuple[str, ...]:
        return tuple(self.nmi)

    def max_over_t(self, method: str) -> np.ndarray:
        grid = self.nmi[method]
        out = np.full(grid.shape[0], np.nan)
        for i, row in enumerate(grid):
            if np.any(np.isfinite(row)):
                out[i] = np.nanmax(row)
        return out

    def difference(self, a: str = "delta", b: str = "fs") -> np.ndarray:
        return self.nmi[a] - self.nmi[b]


def removal_seed(seed: int, r_index: int) -> int:
    return int(np.random.SeedSequence([seed, r_index, 7]).generate_state(1)[0])


def recovery_grid(
    g: WeightedDigraph,
    truth: Partition,
    r_values,
    times,
    n_runs: int = 50,
    seed: int = 0,
    methods=("fs", "delta"),
    cov_mode: str = "exact",
    p0: str = "uniform",
    orphans: str = "role",
    threads: int = 1,
) -> RecoveryGrid:
    """Remove edges at each fraction ``r`` and score every method's sweep.

    The FS and ΔFS backward processes coincide, so their backward
    partitions are computed once and shared.
    """
    r_values = np.asarray(r_values, dtype=float)
    times = np.asarray(times, dtype=float)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    out = {m: np.full((len(r_values), len(times)), np.nan) for m in methods}
    for i, r in enumerate(r_values):
        degraded, e, _ = remove_random_edges(g, float(r), removal_seed(seed, i))
        if "symmetric" in methods:
            e = ErrorVector(e.eps_out, np.zeros(g.n_nodes) if e.eps_in is None else e.eps_in)
        shared_bwd = None
        for m in methods:
            proc = cl.build_processes(degraded, e, m)
            fwd = cl.sweep_side(proc, "forward", times, n_runs, cov_mode, seed, p0, threads)
            if m in ("fs", "delta") and shared_bwd is not None:
                bwd = shared_bwd
            else:
                bwd = cl.sweep_side(proc, "backward", times, n_runs, cov_mode, seed, p0, threads)
                if m in ("fs", "delta"):
                    shared_bwd = bwd
            res = cl.assemble(degraded, times, fwd, bwd, orphans)
            for k, part in enumerate(res.partitions):
                if part is not None:
                    out[m][i, k] = nmi(part, truth)
            log.info("r=%g %s: max NMI %.4f", r, m, np.nanmax(out[m][i]) if np.any(np.isfinite(out[m][i])) else np.nan)
    return RecoveryGrid(r_values, times, out)


def write_matrix(M: np.ndarray, rows, cols, path: str | Path, corner: str = "t") -> None:
    """Square-or-rectangular matrix with a header row and a leading column of grid values."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([corner] + [fmt(c) for c in cols])
        for r, row in zip(rows, M):
            w.writerow([fmt(r)] + [fmt(v) for v in row])


def read_matrix(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    cols = np.array([float(c) for c in rows[0][1:]])
    idx = np.array([float(r[0]) for r in rows[1:]])
    M = np.array([[float(v) for v in r[1:]] for r in rows[1:]]).reshape(len(idx), len(cols))
    return M, idx, cols


def write_sweep(res: cl.SweepResult, labels, out_dir: str | Path) -> None:
    """``sweep.csv``, per-side NVI curves, one partition JSON per grid point and ``optimal.json``."""
    out = Path(out_dir)
    (out / "partitions").mkdir(parents=True, exist_ok=True)
    with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "n_clusters", "quality", "nvi_next"])
        for k, t in enumerate(res.times):
            nxt = fmt(res.nvi_adjacent[k]) if k < len(res.nvi_adjacent) else ""
            w.writerow([fmt(t), int(res.n_clusters[k]), fmt(res.quality[k]), nxt])
    nf, nb = res.side_nvi("forward"), res.side_nvi("backward")
    with open(out / "sweep_sides.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "nvi_next_forward", "nvi_next_backward"])
        for k in range(len(nf)):
            w.writerow([fmt(res.times[k]), fmt(nf[k]), fmt(nb[k])])
    for k, part in enumerate(res.partitions):
        if part is not None:
            part.write(out / "partitions" / f"t{k:03d}.json", labels)
    if res.optimal is not None:
        res.optimal.write(out / "optimal.json", labels)
    with open(out / "local_minima.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "t", "nvi_next", "n_clusters"])
        for k in res.local_minima:
            w.writerow([k, fmt(res.times[k]), fmt(res.nvi_adjacent[k]), int(res.n_clusters[k])])


def write_heatmap(res: cl.SweepResult, path: str | Path) -> None:
    keep = [k for k, p in enumerate(res.partitions) if p is not None]
    if len(keep) < 2:
        log.warning("fewer than two partitions; no NVI heatmap written")
        return
    H = cl.nvi_heatmap([res.partitions[k] for k in keep])
    write_matrix(H, res.times[keep], res.times[keep], path)


def write_roles(g: WeightedDigraph, part: Partition, path: str | Path, definition: str = "boundary") -> list:
    roles = cluster_roles(g, part, definition)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cluster", "size", "in_balance", "role"])
        for c in roles:
            w.writerow([c.cluster, c.size, fmt(c.in_balance), c.role])
    return roles


def write_recovery(grid: RecoveryGrid, out_dir: str | Path) -> None:
    """One ``nmi_<method>.csv`` heatmap (rows r, columns t), the ΔFS−FS difference and per-r maxima."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m, M in grid.nmi.items():
        write_matrix(M, grid.r_values, grid.times, out / f"nmi_{m}.csv", corner="r")
    if "fs" in grid.nmi and "delta" in grid.nmi:
        write_matrix(grid.difference(), grid.r_values, grid.times, out / "nmi_diff.csv", corner="r")
    with open(out / "max_nmi.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r"] + list(grid.methods))
        cols = [grid.max_over_t(m) for m in grid.methods]
        for i, r in enumerate(grid.r_values):
            w.writerow([fmt(r)] + [fmt(c[i]) for c in cols])
