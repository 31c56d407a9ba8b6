import numpy as np
import pytest

from p2pexpander.overlay import Overlay


def random_regular_edges(n: int, rng: np.random.Generator) -> set[tuple[int, int]]:
    """Union of two random Hamiltonian cycles, retried until simple (4-regular)."""
    while True:
        edges = set()
        ok = True
        for _ in range(2):
            perm = rng.permutation(n)
            for i in range(n):
                a, b = int(perm[i]), int(perm[(i + 1) % n])
                e = (min(a, b), max(a, b))
                if e in edges:
                    ok = False
                    break
                edges.add(e)
            if not ok:
                break
        if ok:
            return edges


def static_overlay(n: int, edges, d: int = 4, byzantine=()) -> Overlay:
    """Overlay with the given undirected edges; caps are not enforced."""
    ov = Overlay(d)
    for u in range(n):
        ov.add_node(u, 0, u in set(byzantine))
    for u, v in sorted(edges):
        ov.nodes[u].out_links.add(v)
        ov.nodes[v].in_links.add(u)
    ov.version += 1
    return ov


def adjacency(n: int, edges) -> dict[int, set]:
    adj = {u: set() for u in range(n)}
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    return adj


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
