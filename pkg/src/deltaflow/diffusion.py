"""Random-walk generators, transition matrices and covariance matrices.

A :class:`Generator` stores ``M = walk + outer(tele_from, tele_to)``: a sparse
row-normalised walk part plus an optional rank-one teleportation part. Dense
matrices are only formed on request.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .graph import ErrorVector, ReducedGraph

log = logging.getLogger(__name__)

DENSE_CAP = 2000
HARD_CAP = 20000


class DiffusionError(ArithmeticError):
    """Numerical failure or violated precondition in the diffusion layer."""


class NotConverged(DiffusionError):
    def __init__(self, msg: str, residual: float, last=None):
        super().__init__(f"{msg} (residual {residual:.3g})")
        self.residual = residual
        self.last = last


@dataclass(frozen=True)
class TeleportProfile:
    alpha: np.ndarray
    target_weights: np.ndarray
    normalizer: float

    @property
    def target(self) -> np.ndarray:
        return self.target_weights / self.normalizer


@dataclass(frozen=True, eq=False)
class Generator:
    walk: sp.csr_matrix
    direction: str
    kind: str
    graph: ReducedGraph | None = None
    tele_from: np.ndarray | None = None
    tele_to: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.walk.shape[0]

    @property
    def has_teleport(self) -> bool:
        return self.tele_from is not None and bool(np.any(self.tele_from > 0))

    def toarray(self) -> np.ndarray:
        m = self.walk.toarray()
        if self.tele_from is not None:
            m += np.outer(self.tele_from, self.tele_to)
        return m

    def left(self, x: np.ndarray) -> np.ndarray:
        """``x @ M`` for a vector or a stack of row vectors."""
        y = np.asarray(self.walk.T @ x.T).T
        if self.tele_from is not None:
            y = y + np.multiply.outer(x @ self.tele_from, self.tele_to)
        return y

    def right(self, x: np.ndarray) -> np.ndarray:
        """``M @ x`` for a vector or a matrix of column vectors."""
        y = np.asarray(self.walk @ x)
        if self.tele_from is not None:
            y = y + np.multiply.outer(self.tele_from, self.tele_to @ x)
        return y

    def row_sums(self) -> np.ndarray:
        return self.right(np.ones(self.n))


@dataclass(frozen=True)
class StationaryDistribution:
    pi: np.ndarray
    residual: float
    iterations: int = 0


@dataclass(frozen=True, eq=False)
class CovarianceMatrix:
    """``S = base + left @ right.T``; ``base`` is dense (exact) or sparse (linearized)."""

    base: np.ndarray | sp.csr_matrix
    markov_time: float
    mode: str
    left: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    right: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    @property
    def n(self) -> int:
        return self.base.shape[0]

    @property
    def rank(self) -> int:
        return self.left.shape[1] if self.left.size else 0

    def factors(self) -> tuple[np.ndarray, np.ndarray]:
        if self.rank == 0:
            return np.zeros((self.n, 0)), np.zeros((self.n, 0))
        return self.left, self.right

    def toarray(self) -> np.ndarray:
        s = self.base.toarray() if sp.issparse(self.base) else np.array(self.base, dtype=float)
        if self.rank:
            s += self.left @ self.right.T
        return s

    def row_sums(self) -> np.ndarray:
        r = np.asarray(self.base @ np.ones(self.n)).ravel()
        if self.rank:
            r = r + self.left @ self.right.sum(axis=0)
        return r


def _row_normalise(adj: sp.csr_matrix, strength: np.ndarray) -> sp.csr_matrix:
    adj = sp.csr_matrix(adj, dtype=float)
    inv = np.zeros_like(strength, dtype=float)
    pos = strength > 0
    inv[pos] = 1.0 / strength[pos]
    return sp.csr_matrix(sp.diags(inv) @ adj)


def build_fs_forward(rg: ReducedGraph) -> Generator:
    """Walk along edges: row ``i`` is ``A[i, :] / s_out[i]``."""
    if np.any(rg.s_out <= 0):
        raise DiffusionError("zero out-strength row in forward FS generator")
    return Generator(_row_normalise(rg.adj, rg.s_out), "forward", "fs", rg)


def build_fs_backward(rg: ReducedGraph) -> Generator:
    """Walk against edges: row ``j`` is ``A[:, j] / s_in[j]``."""
    if np.any(rg.s_in <= 0):
        raise DiffusionError("zero in-strength row in backward FS generator")
    return Generator(_row_normalise(rg.adj.T.tocsr(), rg.s_in), "backward", "fs", rg)


def teleport_probabilities(err: np.ndarray, strength: np.ndarray) -> np.ndarray:
    """``err / (err + strength)`` with 0 where both vanish."""
    denom = err + strength
    out = np.zeros_like(denom, dtype=float)
    pos = denom > 0
    out[pos] = err[pos] / denom[pos]
    return out


def build_delta_forward(rg: ReducedGraph, e: ErrorVector) -> tuple[Generator, TeleportProfile]:
    """Forward walk that teleports with probability ``eps/(eps + s_out)``.

    Teleport landing is proportional to in-strength on the reduced graph.
    """
    eps = np.asarray(e.eps_out, dtype=float)
    if eps.shape[0] == rg.parent.n_nodes:
        eps = eps[rg.kept]
    if eps.shape[0] != rg.n_nodes:
        raise ValueError("error vector not aligned with graph")
    if np.any(eps < 0):
        raise ValueError("negative error")
    if np.any(rg.s_out + eps <= 0):
        raise DiffusionError("node with zero out-strength and zero error in delta forward process")
    alpha = teleport_probabilities(eps, rg.s_out)
    z = float(rg.s_in.sum())
    profile = TeleportProfile(alpha, rg.s_in.copy(), z)
    if not np.any(alpha > 0):
        return Generator(_row_normalise(rg.adj, rg.s_out), "forward", "delta", rg), profile
    if z <= 0:
        raise DiffusionError("no teleport targets: total in-strength is zero")
    walk = sp.csr_matrix(sp.diags(1.0 - alpha) @ _row_normalise(rg.adj, rg.s_out))
    gen = Generator(walk, "forward", "delta", rg, alpha, rg.s_in / z)
    return gen, profile


def build_symmetric(
    rg_f: ReducedGraph, rg_b: ReducedGraph, e: ErrorVector
) -> tuple[Generator, Generator]:
    """Forward and backward generators when both out- and in-errors are known.

    Forward walkers teleport with probability ``omega_i`` to nodes weighted by
    ``chi_j``; backward walkers teleport with ``chi_i`` to nodes weighted by
    ``omega_j`` (``omega = a/(a + s_out)``, ``chi = b/(b + s_in)``).
    """
    if e.eps_in is None:
        raise ValueError("symmetric variant needs eps_in")

    def side(rg, err_self, err_target, s_self, s_target, adj, direction):
        err_self = err_self[rg.kept]
        err_target = err_target[rg.kept]
        if np.any(s_self + err_self <= 0):
            raise DiffusionError(f"node with zero strength and zero error in {direction} process")
        leave = teleport_probabilities(err_self, s_self)
        land = teleport_probabilities(err_target, s_target)
        walk = _row_normalise(adj, s_self)
        if not np.any(leave > 0):
            return Generator(walk, direction, "symmetric", rg)
        z = float(land.sum())
        if z <= 0:
            raise DiffusionError("no teleport targets with nonzero error")
        walk = sp.csr_matrix(sp.diags(1.0 - leave) @ walk)
        return Generator(walk, direction, "symmetric", rg, leave, land / z)

    fwd = side(rg_f, e.eps_out, e.eps_in, rg_f.s_out, rg_f.s_in, rg_f.adj, "forward")
    bwd = side(rg_b, e.eps_in, e.eps_out, rg_b.s_in, rg_b.s_out, rg_b.adj.T.tocsr(), "backward")
    return fwd, bwd


def stationary(gen: Generator, tol: float = 1e-10, max_iter: int = 100_000, lazy: bool = False) -> StationaryDistribution:
    """Power iteration ``pi <- pi M`` from the uniform vector.

    ``lazy`` iterates ``(I + M)/2`` instead, which has the same fixed points
    but does not oscillate on periodic chains.
    """
    n = gen.n
    pi = np.full(n, 1.0 / n)
    res = math.inf
    for it in range(1, max_iter + 1):
        nxt = gen.left(pi)
        res = float(np.abs(nxt - pi).sum())
        if res <= tol:
            nxt = np.clip(nxt, 0.0, None)
            nxt /= nxt.sum()
            return StationaryDistribution(nxt, float(np.abs(gen.left(nxt) - nxt).sum()), it)
        pi = 0.5 * (pi + nxt) if lazy else nxt
    raise NotConverged("stationary distribution did not converge", res, pi)


def estimate_ts(
    gen: Generator,
    pi: StationaryDistribution,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    fallback: float | None = None,
) -> float:
    """Smallest ``n >= 1`` with ``max|u M^n - pi| <= tol`` for uniform ``u``.

    Without ``fallback`` a chain that never settles raises; with it, a warning
    is logged and ``fallback`` is returned.
    """
    x = np.full(gen.n, 1.0 / gen.n)
    err = math.inf
    for it in range(1, max_iter + 1):
        x = gen.left(x)
        err = float(np.abs(x - pi.pi).max())
        if err <= tol:
            return float(it)
    if fallback is not None:
        log.warning("walk did not reach stationarity (residual %.3g); using ts = %g", err, fallback)
        return float(fallback)
    raise NotConverged("walk did not reach stationarity", err)


def _series_action(gen: Generator, t: float, x: np.ndarray, tol: float = 1e-16) -> np.ndarray:
    # exp(-t(I-M)) x with t split into steps h <= 1; M is non-negative, so the
    # Taylor terms of exp(hM) never cancel.
    steps = max(1, math.ceil(t))
    h = t / steps
    for _ in range(steps):
        term = x.copy()
        acc = x.copy()
        k = 0
        while True:
            k += 1
            term = gen.right(term) * (h / k)
            acc += term
            if np.abs(term).max() <= tol * np.abs(acc).max():
                break
        x = math.exp(-h) * acc
    return x


def transition_exact(gen: Generator, t: float, dense_cap: int = DENSE_CAP, hard_cap: int = HARD_CAP) -> np.ndarray:
    """``exp(-t (I - M))`` as a dense row-stochastic matrix."""
    if t < 0:
        raise ValueError("Markov time must be non-negative")
    n = gen.n
    if n > hard_cap:
        raise DiffusionError(f"exact transition for {n} nodes exceeds hard cap {hard_cap}")
    if t == 0:
        return np.eye(n)
    if n <= dense_cap:
        lap = np.eye(n) - gen.toarray()
        T = scipy.linalg.expm(-t * lap)
    else:
        T = _series_action(gen, t, np.eye(n))
    np.clip(T, 0.0, None, out=T)
    return T


def transition_linearized(gen: Generator, t: float, ts: float, pi: StationaryDistribution | None = None) -> np.ndarray:
    """Piecewise-linear surrogate: ``I -> M`` on [0, 1], ``M -> W`` on [1, ts], then ``W``.

    ``W`` is the rank-one limit ``1 pi``.
    """
    if t < 0:
        raise ValueError("Markov time must be non-negative")
    if ts <= 1:
        raise ValueError("stationarity time must exceed 1")
    n = gen.n
    if t <= 1:
        return (1.0 - t) * np.eye(n) + t * gen.toarray()
    if pi is None:
        pi = stationary(gen)
    W = np.tile(pi.pi, (n, 1))
    if t >= ts:
        return W
    # weight on M falls linearly from 1 at t=1 to 0 at t=ts
    w_m = (ts - t) / (ts - 1.0)
    return w_m * gen.toarray() + (1.0 - w_m) * W


def covariance_exact(
    gen: Generator,
    p0: np.ndarray | None,
    t: float,
    on_unreachable: str = "raise",
    T: np.ndarray | None = None,
) -> CovarianceMatrix:
    """``P0 T diag(p0 T)^-1 T' P0 - p0' p0`` with ``T = exp(-t(I - M))``.

    ``p0`` defaults to uniform. With ``on_unreachable="clamp"`` zero entries of
    ``p0 T`` are replaced by 1e-300 instead of raising.
    """
    n = gen.n
    p0 = np.full(n, 1.0 / n) if p0 is None else np.asarray(p0, dtype=float)
    if p0.shape != (n,) or abs(p0.sum() - 1.0) > 1e-10 or np.any(p0 < 0):
        raise ValueError("p0 must be a probability vector over the process nodes")
    if T is None:
        T = transition_exact(gen, t)
    pt = p0 @ T
    zero = pt <= 0
    if zero.any():
        if on_unreachable != "clamp":
            raise DiffusionError(f"unreachable node at time {t}")
        log.warning("clamping %d unreachable node(s) at t=%g", int(zero.sum()), t)
        pt = np.where(zero, 1e-300, pt)
    X = p0[:, None] * T
    S = (X / pt) @ X.T
    S = 0.5 * (S + S.T)
    S -= np.outer(p0, p0)
    return CovarianceMatrix(S, float(t), "exact")


def covariance_linearized(
    gen: Generator,
    pi: StationaryDistribution,
    t: float,
    teleport: TeleportProfile | None = None,
) -> CovarianceMatrix:
    """First-order covariance ``(1-2t) Pi + t (Pi M + M' Pi) - pi' pi`` for ``0 <= t <= 1``.

    The sparse part holds ``(1-2t) Pi + t (Pi W + W' Pi)`` for the walk part
    ``W``; the teleport term and ``-pi' pi`` stay as rank-one factors.
    """
    if not 0 <= t <= 1:
        raise ValueError("linearized covariance is defined for 0 <= t <= 1")
    p = pi.pi
    P = sp.diags(p)
    pw = sp.csr_matrix(P @ gen.walk)
    base = sp.csr_matrix((1 - 2 * t) * P + t * (pw + pw.T))
    base.sum_duplicates()
    left = [-p]
    right = [p]
    a, b = gen.tele_from, gen.tele_to
    if teleport is not None and a is None:
        a, b = teleport.alpha, teleport.target
    if a is not None and np.any(a > 0):
        pa = p * a
        left += [t * pa, t * b]
        right += [b, pa]
    return CovarianceMatrix(base, float(t), "linearized", np.column_stack(left), np.column_stack(right))


def dump_matrix(m, path) -> None:
    """Write a matrix as sorted ``row col value`` lines with 17 significant digits."""
    coo = sp.coo_matrix(m)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w", encoding="utf-8") as fh:
        for k in order:
            fh.write(f"{coo.row[k]} {coo.col[k]} {coo.data[k]:.17g}\n")
