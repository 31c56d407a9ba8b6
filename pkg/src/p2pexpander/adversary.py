"""Adaptive Byzantine adversary: corruption on join, budget, behaviours.

The adversary sees the current overlay and token pool (read-only by
convention) but never the master seed, so it cannot precompute later
random draws.  Its own randomness comes from a separate stream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .construct import ConnRequest
from .walk import AT_BYZ_FWD, AT_BYZ_RET

CORRUPTION_POLICIES = ("none", "random", "targeted")
STRATEGIES = ("silent", "absorb", "token_flood", "walk_bias", "conn_flood")
LIFETIME_OVERRIDES = ("persist", "schedule")


@dataclass(frozen=True)
class AdversaryConfig:
    beta: float = 0.02
    corruption: str = "none"
    p: float = 1.0
    strategy: str = "absorb"
    flood_k: int = 1
    lifetime_override: str = "persist"

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.corruption not in CORRUPTION_POLICIES:
            raise ValueError(f"unknown corruption policy {self.corruption!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.lifetime_override not in LIFETIME_OVERRIDES:
            raise ValueError(f"unknown lifetime override {self.lifetime_override!r}")
        if not 0 <= self.p <= 1:
            raise ValueError("p must lie in [0, 1]")
        if self.flood_k < 1:
            raise ValueError("flood_k must be >= 1")


def budget_fn(n_alive: int, beta: float) -> float:
    """Maximum number of simultaneously corrupted nodes: beta n / log2 n."""
    if n_alive < 2:
        return 0.0
    return beta * n_alive / math.log2(n_alive)


@dataclass
class AdversaryView:
    round: int
    overlay: object
    pool: object
    byzantine: frozenset
    phase_boundary: bool = False


@dataclass
class ActionCounts:
    absorbed: int = 0
    forwarded: int = 0
    forged: int = 0
    injected: int = 0
    relayed: int = 0
    requests: int = 0
    messages: int = 0

    def add(self, other: "ActionCounts") -> None:
        for k in vars(self):
            setattr(self, k, getattr(self, k) + getattr(other, k))

    def total(self) -> int:
        return sum(vars(self).values())


class Adversary:
    def __init__(self, cfg: AdversaryConfig, seed: int, d: int):
        self.cfg = cfg
        self.seed = seed
        self.d = d
        self._bias_target: dict[int, int] = {}
        self.counts = ActionCounts()

    def _rng(self, r: int, node: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, 0xAD, r, node, purpose])

    def budget(self, n_alive: int) -> float:
        return budget_fn(n_alive, self.cfg.beta)

    # -- corruption ----------------------------------------------------
    def decide_corruption(self, view: AdversaryView, node: int) -> bool:
        """Called right after ``node`` joined; True turns it Byzantine."""
        cfg = self.cfg
        if cfg.corruption == "none":
            return False
        n_alive = len(view.overlay.nodes)
        if len(view.byzantine) + 1 > self.budget(n_alive):
            return False
        if cfg.corruption == "random":
            return bool(self._rng(view.round, node, 0).random() < cfg.p)
        # targeted: go after joiners sitting next to low-degree honest nodes
        ov = view.overlay
        for v in ov.nodes[node].neighbors:
            rec = ov.nodes[v]
            if not rec.is_byzantine and rec.degree <= 2 * self.d:
                return True
        return False

    def ignores_leave(self, node: int) -> bool:
        return self.cfg.lifetime_override == "persist"

    # -- connections -----------------------------------------------------
    def accepts(self, node: int, request: ConnRequest) -> bool:
        return self.cfg.strategy != "silent"

    def connection_requests(self, view: AdversaryView) -> list[ConnRequest]:
        """Extra requests injected at a phase boundary."""
        if self.cfg.strategy != "conn_flood":
            return []
        ov = view.overlay
        honest = [u for u in sorted(ov.nodes) if not ov.nodes[u].is_byzantine]
        n_req = 6 * self.d
        out = []
        for b in sorted(view.byzantine):
            for h in honest:
                for k in range(n_req):
                    # token ids no honest walk ever used
                    out.append(ConnRequest(b, h, -(k + 1), is_new=False))
        self.counts.requests += len(out)
        return out

    # -- per-round token behaviour ------------------------------------
    def round_actions(self, view: AdversaryView) -> ActionCounts:
        acts = ActionCounts()
        for b in sorted(view.byzantine):
            acts.add(self._node_actions(view, b))
        self.counts.add(acts)
        return acts

    def _node_actions(self, view: AdversaryView, b: int) -> ActionCounts:
        pool, ov = view.pool, view.overlay
        strat = self.cfg.strategy
        acts = ActionCounts()
        inbox = pool.byzantine_inbox(b)
        st = pool.state[inbox]
        fwd, ret = inbox[st == AT_BYZ_FWD], inbox[st == AT_BYZ_RET]

        if strat in ("silent", "absorb"):
            pool.absorb(inbox)
            acts.absorbed += inbox.size
            return acts

        pool.byz_relay_returns(ret, view.round)
        acts.relayed += ret.size

        if strat == "token_flood":
            pool.absorb(fwd)
            acts.absorbed += fwd.size
            per_edge = pool.p.cap + self.cfg.flood_k
            for h in sorted(ov.nodes[b].neighbors):
                if not ov.nodes[h].is_byzantine:
                    pool.inject(b, h, per_edge, view.round)
                    acts.injected += per_edge
            return acts

        if strat == "conn_flood":
            pool.absorb(fwd)
            acts.absorbed += fwd.size
            return acts

        # walk_bias: claim every token as its own endpoint and steer the
        # original on towards one fixed neighbour, staying under the cap
        if fwd.size == 0:
            return acts
        pool.forge_returns(fwd, b)
        acts.forged += fwd.size
        target = self._bias_neighbor(b, ov, view.round)
        L = pool.p.rw_length
        can = fwd[pool.ctr[fwd] < L - 1] if target is not None else fwd[:0]
        can = can[: pool.p.cap]
        pool.byz_forward(can, target, append_self=True)
        acts.forwarded += can.size
        rest = np.setdiff1d(fwd, can)
        pool.absorb(rest)
        acts.absorbed += rest.size
        return acts

    def _bias_neighbor(self, b: int, ov, r: int) -> int | None:
        nbrs = sorted(v for v in ov.nodes[b].neighbors if not ov.nodes[v].is_byzantine)
        if not nbrs:
            return None
        cur = self._bias_target.get(b)
        if cur not in nbrs:
            cur = int(self._rng(r, b, 1).choice(nbrs))
            self._bias_target[b] = cur
        return cur

    # -- departures ------------------------------------------------------
    def rotation_victims(self, byzantine: Iterable[int], joined_at: dict[int, int], n_alive: int) -> list[int]:
        """Oldest corrupted nodes to retire while over budget."""
        byz = sorted(byzantine, key=lambda u: (joined_at[u], u))
        excess = len(byz) - math.floor(self.budget(n_alive))
        return byz[: max(0, excess)]
