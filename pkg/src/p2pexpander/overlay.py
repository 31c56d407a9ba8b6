"""Dynamic overlay graph with per-node out/in connection ledgers.

Edges are undirected for walks and analysis; the out/in split only tracks
which endpoint initiated the link so that the degree caps (3d out, 6d in
at honest nodes) can be enforced.
"""
from __future__ import annotations

import enum
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Iterable

import numpy as np


class LinkOutcome(enum.Enum):
    ESTABLISHED = "established"
    REJECTED_FULL = "rejected_full"
    REJECTED_UNVERIFIED = "rejected_unverified"
    REJECTED_FLOODED = "rejected_flooded"
    DUPLICATE = "duplicate"


class InvariantViolation(AssertionError):
    def __init__(self, message: str, dump: dict | None = None):
        super().__init__(message)
        self.dump = dump or {}


@dataclass
class NodeRecord:
    id: int
    joined_at: int
    is_byzantine: bool = False
    out_links: set = field(default_factory=set)
    in_links: set = field(default_factory=set)
    blacklist: set = field(default_factory=set)
    is_new: bool = True

    @property
    def neighbors(self) -> set:
        return self.out_links | self.in_links

    @property
    def degree(self) -> int:
        return len(self.out_links) + len(self.in_links)


@dataclass(frozen=True)
class FrozenNode:
    id: int
    joined_at: int
    is_byzantine: bool
    out_links: frozenset
    in_links: frozenset
    blacklist: frozenset
    is_new: bool


@dataclass(frozen=True)
class OverlaySnapshot:
    time: int
    nodes: MappingProxyType  # id -> FrozenNode
    edges: frozenset  # (min, max) pairs

    @property
    def n_alive(self) -> int:
        return len(self.nodes)

    @property
    def byzantine(self) -> frozenset:
        return frozenset(i for i, r in self.nodes.items() if r.is_byzantine)

    @property
    def honest(self) -> frozenset:
        return frozenset(i for i, r in self.nodes.items() if not r.is_byzantine)

    def adjacency(self) -> dict[int, set]:
        adj = {i: set() for i in self.nodes}
        for u, v in self.edges:
            adj[u].add(v)
            adj[v].add(u)
        return adj

    def to_edgelist(self) -> str:
        """JSON header line followed by sorted ``u v`` lines."""
        header = {
            "time": self.time,
            "n_alive": self.n_alive,
            "n_byzantine": len(self.byzantine),
        }
        lines = [json.dumps(header, sort_keys=True)]
        lines += [f"{u} {v}" for u, v in sorted(self.edges)]
        return "\n".join(lines) + "\n"


def parse_edgelist(text: str) -> tuple[dict, list[tuple[int, int]]]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = json.loads(lines[0])
    edges = []
    for ln in lines[1:]:
        u, v = ln.split()
        edges.append((int(u), int(v)))
    return header, edges


class RoundMailbox:
    """Per-edge FIFO queues; a message sent in round r is readable in r+1."""

    def __init__(self):
        self._queues: dict[tuple[int, int], deque] = defaultdict(deque)
        self.discarded = 0

    def put(self, round_: int, sender: int, receiver: int, payload: Any) -> None:
        self._queues[(sender, receiver)].append((round_, payload))

    def drop_edge(self, u: int, v: int) -> None:
        for key in ((u, v), (v, u)):
            q = self._queues.pop(key, None)
            if q:
                self.discarded += len(q)

    def drop_node(self, u: int) -> None:
        for key in [k for k in self._queues if u in k]:
            self.discarded += len(self._queues.pop(key))

    def collect(self, round_: int) -> dict[int, list[tuple[int, Any]]]:
        """Pop every message sent before ``round_``, keyed by receiver."""
        out: dict[int, list] = defaultdict(list)
        for (s, r) in sorted(self._queues):
            q = self._queues[(s, r)]
            while q and q[0][0] < round_:
                out[r].append((s, q.popleft()[1]))
        for k in [k for k, q in self._queues.items() if not q]:
            del self._queues[k]
        return dict(out)

    def pending(self) -> int:
        return sum(len(q) for q in self._queues.values())


class Overlay:
    """The mutable graph G_t.

    ``version`` increments on every structural change so that consumers
    (the token pool) can cache derived adjacency arrays.
    """

    def __init__(self, d: int):
        self.d = d
        self.nodes: dict[int, NodeRecord] = {}
        self.mailbox = RoundMailbox()
        self.version = 0
        self.dropped_sends = 0
        self._edge_listeners = []

    @property
    def out_cap(self) -> int:
        return 3 * self.d

    @property
    def in_cap(self) -> int:
        return 6 * self.d

    def add_edge_listener(self, fn) -> None:
        """``fn(u, v)`` is called for every edge removed."""
        self._edge_listeners.append(fn)

    def __contains__(self, u) -> bool:
        return u in self.nodes

    def add_node(self, u: int, t: int, is_byzantine: bool = False) -> NodeRecord:
        if u in self.nodes:
            raise ValueError(f"node {u} already present")
        rec = NodeRecord(u, t, is_byzantine)
        self.nodes[u] = rec
        self.version += 1
        return rec

    def has_edge(self, u: int, v: int) -> bool:
        a = self.nodes.get(u)
        return a is not None and (v in a.out_links or v in a.in_links)

    def add_link(self, u: int, v: int) -> LinkOutcome:
        """u initiates a link to v; only the hard caps are checked here."""
        if u == v or u not in self.nodes or v not in self.nodes or self.has_edge(u, v):
            return LinkOutcome.DUPLICATE
        a, b = self.nodes[u], self.nodes[v]
        if not b.is_byzantine and len(b.in_links) >= self.in_cap:
            return LinkOutcome.REJECTED_FULL
        if not a.is_byzantine and len(a.out_links) >= self.out_cap:
            return LinkOutcome.REJECTED_FULL
        a.out_links.add(v)
        b.in_links.add(u)
        self.version += 1
        return LinkOutcome.ESTABLISHED

    def drop_link(self, u: int, v: int) -> bool:
        a, b = self.nodes.get(u), self.nodes.get(v)
        if a is None or b is None or not self.has_edge(u, v):
            return False
        a.out_links.discard(v)
        a.in_links.discard(v)
        b.out_links.discard(u)
        b.in_links.discard(u)
        self.mailbox.drop_edge(u, v)
        self.version += 1
        for fn in self._edge_listeners:
            fn(u, v)
        return True

    def remove_node(self, u: int) -> list[int]:
        """Removes u and all incident edges; returns former neighbours."""
        rec = self.nodes.get(u)
        if rec is None:
            return []
        nbrs = sorted(rec.neighbors)
        for v in nbrs:
            self.drop_link(u, v)
        for v in self.nodes.values():
            v.blacklist.discard(u)
        self.mailbox.drop_node(u)
        del self.nodes[u]
        self.version += 1
        return nbrs

    def send(self, round_: int, u: int, v: int, payload: Any) -> bool:
        if not self.has_edge(u, v):
            self.dropped_sends += 1
            return False
        self.mailbox.put(round_, u, v, payload)
        return True

    def deliver(self, round_: int) -> dict[int, list[tuple[int, Any]]]:
        return self.mailbox.collect(round_)

    def edges(self) -> set[tuple[int, int]]:
        out = set()
        for u, rec in self.nodes.items():
            for v in rec.out_links:
                out.add((min(u, v), max(u, v)))
        return out

    def snapshot(self, t: int) -> OverlaySnapshot:
        frozen = {
            u: FrozenNode(
                r.id,
                r.joined_at,
                r.is_byzantine,
                frozenset(r.out_links),
                frozenset(r.in_links),
                frozenset(r.blacklist),
                r.is_new,
            )
            for u, r in sorted(self.nodes.items())
        }
        return OverlaySnapshot(t, MappingProxyType(frozen), frozenset(self.edges()))

    def csr(self) -> tuple[np.ndarray, np.ndarray, int]:
        """(indptr, indices) over node ids ``0..max_id``; neighbours sorted."""
        size = (max(self.nodes) + 1) if self.nodes else 0
        deg = np.zeros(size, dtype=np.int64)
        for u, r in self.nodes.items():
            deg[u] = len(r.out_links) + len(r.in_links)
        indptr = np.zeros(size + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.empty(indptr[-1], dtype=np.int64)
        for u, r in self.nodes.items():
            if deg[u]:
                indices[indptr[u] : indptr[u + 1]] = sorted(r.out_links | r.in_links)
        return indptr, indices, size

    def check_invariants(self, departed: Iterable[int] = ()) -> None:
        """Full scan: ledger symmetry, honest caps, no dangling references."""
        for u, r in self.nodes.items():
            for v in r.out_links:
                if v not in self.nodes or u not in self.nodes[v].in_links:
                    raise InvariantViolation(f"asymmetric ledger {u}->{v}", {"node": u})
            for v in r.in_links:
                if v not in self.nodes or u not in self.nodes[v].out_links:
                    raise InvariantViolation(f"asymmetric ledger {v}->{u}", {"node": u})
            if r.out_links & r.in_links:
                raise InvariantViolation(f"parallel edge at {u}", {"node": u})
            if u in r.out_links or u in r.in_links:
                raise InvariantViolation(f"self loop at {u}", {"node": u})
            if not r.is_byzantine and len(r.out_links) > self.out_cap:
                raise InvariantViolation(f"honest out-degree cap exceeded at {u}", {"node": u})
            if not r.is_byzantine and len(r.in_links) > self.in_cap:
                raise InvariantViolation(f"honest in-degree cap exceeded at {u}", {"node": u})
        for x in departed:
            if x in self.nodes:
                raise InvariantViolation(f"departed node {x} still present")
