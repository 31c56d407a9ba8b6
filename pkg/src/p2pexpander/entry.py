"""Entry manager: a size-capped list of prior joiners with random eviction."""
from __future__ import annotations

import json

import numpy as np


class EntryManager:
    """Holds at most ``capacity`` ids; knows nothing about liveness.

    The only operations are ``register`` and ``query``; the engine calls
    them during a join and never afterwards.
    """

    def __init__(self, capacity: int, rng: np.random.Generator, d: int = 4):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.d = d
        self.rng = rng
        self.nodes_list: list[int] = []
        self._members: set[int] = set()
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.nodes_list)

    def __contains__(self, u) -> bool:
        return u in self._members

    def register(self, u: int) -> int | None:
        """Adds u, evicting a uniformly random resident if full.

        Returns the evicted id (or None).
        """
        if u in self._members:
            return None
        evicted = None
        if len(self.nodes_list) >= self.capacity:
            pos = int(self.rng.integers(len(self.nodes_list)))
            evicted = self.nodes_list.pop(pos)
            self._members.discard(evicted)
            self.evictions += 1
        self.nodes_list.append(u)
        self._members.add(u)
        return evicted

    def query(self, u: int | None = None, k: int | None = None) -> list[int]:
        """Up to 3d distinct ids drawn uniformly without replacement."""
        k = 3 * self.d if k is None else k
        size = len(self.nodes_list)
        if size == 0:
            return []
        idx = self.rng.choice(size, size=min(k, size), replace=False)
        return [self.nodes_list[i] for i in idx]

    def dump(self) -> str:
        return json.dumps({"capacity": self.capacity, "nodes_list": self.nodes_list})
