"""Conductance, honest core extraction, walk mixing and per-phase reports."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

Adjacency = Mapping[int, Iterable[int]]


def _index(adj: Adjacency):
    nodes = sorted(adj)
    pos = {u: i for i, u in enumerate(nodes)}
    rows, cols = [], []
    for u in nodes:
        for v in adj[u]:
            if v in pos:
                rows.append(pos[u])
                cols.append(pos[v])
    n = len(nodes)
    A = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A = ((A + A.T) > 0).astype(np.float64)
    A.setdiag(0)
    A.eliminate_zeros()
    return nodes, A.tocsr()


def induced(adj: Adjacency, keep: Iterable[int]) -> dict[int, set]:
    keep = set(keep)
    return {u: {v for v in adj[u] if v in keep} for u in sorted(keep) if u in adj}


def _disconnected_or_isolated(A: sp.csr_matrix) -> bool:
    deg = np.asarray(A.sum(axis=1)).ravel()
    if (deg == 0).any():
        return True
    ncomp, _ = connected_components(A, directed=False)
    return ncomp > 1


def conductance_exact(adj: Adjacency, max_vertices: int = 16) -> float | None:
    """min over S of cut(S) / min(vol S, vol V\\S), by enumerating all cuts.

    None for graphs with fewer than two vertices; 0.0 for disconnected
    graphs or graphs with an isolated vertex.
    """
    nodes, A = _index(adj)
    n = len(nodes)
    if n <= 1:
        return None
    if n > max_vertices:
        raise ValueError(f"exact conductance limited to {max_vertices} vertices, got {n}")
    if _disconnected_or_isolated(A):
        return 0.0
    coo = sp.triu(A, k=1).tocoo()
    eu, ev = coo.row.astype(np.int64), coo.col.astype(np.int64)
    deg = np.asarray(A.sum(axis=1)).ravel()
    total = deg.sum()
    # fix vertex n-1 outside S: each cut counted once
    masks = np.arange(1, 1 << (n - 1), dtype=np.int64)
    bits = ((masks[:, None] >> np.arange(n - 1)) & 1).astype(bool)
    bits = np.hstack([bits, np.zeros((masks.size, 1), dtype=bool)])
    vol = bits @ deg
    cut = (bits[:, eu] != bits[:, ev]).sum(axis=1)
    denom = np.minimum(vol, total - vol)
    return float((cut / denom).min())


@dataclass(frozen=True)
class SpectralEstimate:
    phi: float  # conductance of the best sweep cut (an upper bound on phi)
    lower: float  # (1 - lambda2) / 2
    upper: float  # sqrt(2 (1 - lambda2))
    lambda2: float
    converged: bool
    iterations: int

    @property
    def confidence(self) -> str:
        return "full" if self.converged else "degraded"


def _sweep(order: np.ndarray, A: sp.csr_matrix, deg: np.ndarray) -> float:
    """Best conductance over prefix sets of ``order``, in O(m)."""
    n = order.size
    rank = np.empty(n, dtype=np.int64)
    rank[order] = np.arange(n)
    coo = sp.triu(A, k=1).tocoo()
    lo = np.minimum(rank[coo.row], rank[coo.col])
    hi = np.maximum(rank[coo.row], rank[coo.col])
    # edge (lo, hi) is cut by prefixes of size lo+1 .. hi
    diff = np.zeros(n + 1)
    np.add.at(diff, lo + 1, 1.0)
    np.add.at(diff, hi + 1, -1.0)
    cut = np.cumsum(diff)[1:n]  # prefix sizes 1..n-1
    vol = np.cumsum(deg[order])[: n - 1]
    denom = np.minimum(vol, deg.sum() - vol)
    return float((cut / denom).min())


def conductance_estimate(
    adj: Adjacency,
    tol: float = 1e-8,
    max_iter: int = 10_000,
    block: int = 4,
    seed: int = 0,
) -> SpectralEstimate | None:
    """Second eigenvalue of the normalised adjacency plus a sweep cut.

    Uses deflated block power iteration on a lazy operator, slightly more
    than (I + N) / 2, so eigenvalues are positive and nothing oscillates.
    """
    nodes, A = _index(adj)
    n = len(nodes)
    if n <= 1:
        return None
    if _disconnected_or_isolated(A):
        return SpectralEstimate(0.0, 0.0, 0.0, 1.0, True, 0)
    deg = np.asarray(A.sum(axis=1)).ravel()
    dinv = 1.0 / np.sqrt(deg)
    N = sp.diags(dinv) @ A @ sp.diags(dinv)
    top = np.sqrt(deg)
    top /= np.linalg.norm(top)

    k = max(1, min(block, n - 1))
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, k))

    def orth(Y):
        Y = Y - np.outer(top, top @ Y)
        q, _ = np.linalg.qr(Y)
        return q

    X = orth(X)
    prev = np.inf
    lam2 = 0.0
    vec = X[:, 0]
    converged = False
    it = 0
    shift = 1.0 + 1e-3  # keeps (shift I + N) positive definite, so no column collapses
    for it in range(1, max_iter + 1):
        NX = N @ X
        X = orth((shift * X + NX) / (1.0 + shift))
        H = X.T @ (N @ X)
        w, V = np.linalg.eigh(0.5 * (H + H.T))
        lam2 = float(w[-1])
        vec = X @ V[:, -1]
        if abs(lam2 - prev) < tol:
            resid = np.linalg.norm(N @ vec - lam2 * vec)
            if resid < math.sqrt(tol) * 10:
                converged = True
                break
        prev = lam2
    gap = max(0.0, 1.0 - lam2)
    lower = min(1.0, gap / 2)
    upper = min(1.0, math.sqrt(2 * gap))
    score = vec * dinv
    order = np.lexsort((np.arange(n), score))
    phi = _sweep(order, A, deg)
    return SpectralEstimate(phi, lower, upper, lam2, converged, it)


def core_extract(
    adj_start: Adjacency,
    byzantine: Iterable[int],
    churned: Iterable[int],
) -> set[int]:
    """Honest nodes of the phase-start graph that stay well connected.

    Starting from honest nodes not in ``churned``, repeatedly peel any node
    with more than half of its start-graph links going to Byzantine,
    churned or already-peeled nodes, then keep the largest connected
    component; repeat until nothing changes.
    """
    bad = set(byzantine) | set(churned)
    core = {u for u in adj_start if u not in bad}
    while True:
        changed = True
        while changed:
            changed = False
            for u in sorted(core):
                nb = adj_start[u]
                if not nb:
                    core.discard(u)
                    changed = True
                    continue
                outside = sum(1 for v in nb if v not in core)
                if 2 * outside > len(nb):
                    core.discard(u)
                    changed = True
        if not core:
            return core
        comp = largest_component(induced(adj_start, core))
        if comp == core:
            return core
        core = comp


def largest_component(adj: Adjacency) -> set[int]:
    nodes, A = _index(adj)
    if not nodes:
        return set()
    _, labels = connected_components(A, directed=False)
    counts = np.bincount(labels)
    best = int(np.argmax(counts))  # lowest label wins ties
    return {nodes[i] for i in np.flatnonzero(labels == best)}


def honest_component_fraction(adj: Adjacency, byzantine: Iterable[int]) -> float:
    byz = set(byzantine)
    honest = [u for u in adj if u not in byz]
    if not honest:
        return 0.0
    return len(largest_component(induced(adj, honest))) / len(honest)


def stationary(adj: Adjacency) -> dict[int, float]:
    deg = {u: len(set(adj[u])) for u in adj}
    total = sum(deg.values())
    return {u: deg[u] / total for u in sorted(adj)} if total else {}


def endpoint_uniformity(
    endpoints: Iterable[int], adj: Adjacency, min_samples: int = 1000
) -> float | None:
    """Total-variation distance between the empirical endpoint law and
    deg / 2|E| on ``adj``.  None with fewer than ``min_samples`` endpoints."""
    ep = np.asarray(list(endpoints), dtype=np.int64)
    if ep.size < min_samples:
        return None
    pi = stationary(adj)
    if not pi:
        return None
    nodes = np.fromiter(pi, dtype=np.int64)
    target = np.fromiter(pi.values(), dtype=np.float64)
    pos = np.searchsorted(nodes, ep)
    pos = np.minimum(pos, nodes.size - 1)
    inside = nodes[pos] == ep
    emp = np.bincount(pos[inside], minlength=nodes.size) / ep.size
    outside_mass = 1.0 - inside.mean()
    return float(0.5 * (np.abs(emp - target).sum() + outside_mass))


@dataclass
class PhaseReport:
    phase: int
    t_start: int
    t_end: int
    warm: bool
    n_alive: int
    n_byzantine: int
    n_churned: int
    core_size: int
    kappa: float
    tokens_in_core: int
    phi_estimate: float | None
    phi_lower: float | None
    phi_upper: float | None
    phi_exact: float | None
    phi_confidence: str
    largest_honest_component: float
    max_honest_out: int
    max_honest_in: int
    endpoint_tv: float | None
    in_core_walks: int
    return_success: float | None
    leaked_fraction: float | None
    failed_joins: int
    blacklist_events: int
    adversary_actions: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        out = []
        for c in self.columns():
            v = getattr(self, c)
            out.append("" if v is None else v)
        return out


def write_reports_csv(reports: list[PhaseReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PhaseReport.columns())
        for r in reports:
            w.writerow(r.row())


def read_reports_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
