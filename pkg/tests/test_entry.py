import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from p2pexpander.churn import ChurnConfig, alive_set, build_schedule
from p2pexpander.entry import EntryManager


def test_empty_query():
    em = EntryManager(10, np.random.default_rng(0))
    assert em.query() == []


def test_small_list_returns_everyone():
    em = EntryManager(10, np.random.default_rng(0), d=4)
    for u in range(5):
        em.register(u)
    assert sorted(em.query()) == [0, 1, 2, 3, 4]


def test_query_size_and_distinct():
    em = EntryManager(100, np.random.default_rng(1), d=4)
    for u in range(60):
        em.register(u)
    q = em.query()
    assert len(q) == 12 and len(set(q)) == 12


def test_full_list_evicts_exactly_one():
    em = EntryManager(5, np.random.default_rng(2))
    for u in range(5):
        assert em.register(u) is None
    ev = em.register(99)
    assert ev in range(5)
    assert len(em) == 5 and 99 in em and ev not in em
    assert em.evictions == 1


def test_register_is_idempotent():
    em = EntryManager(3, np.random.default_rng(2))
    em.register(1)
    em.register(1)
    assert len(em) == 1


def test_capacity_validation():
    with pytest.raises(ValueError):
        EntryManager(0, np.random.default_rng(0))


def test_dump():
    em = EntryManager(3, np.random.default_rng(2))
    em.register(4)
    assert json.loads(em.dump()) == {"capacity": 3, "nodes_list": [4]}


def test_eviction_is_uniform():
    # which resident is evicted from a full list should be uniform
    counts = np.zeros(20)
    rng = np.random.default_rng(3)
    for _ in range(4000):
        em = EntryManager(20, rng)
        for u in range(20):
            em.register(u)
        counts[em.register(100)] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_query_uniform_over_list():
    em = EntryManager(50, np.random.default_rng(4), d=1)
    for u in range(50):
        em.register(u)
    counts = np.zeros(50)
    for _ in range(20000):
        for v in em.query():
            counts[v] += 1
    assert stats.chisquare(counts).pvalue > 1e-3


def test_recent_alive_nodes_near_uniform():
    """Nodes younger than n are each present with constant probability, so
    their selection frequencies stay within a factor 4 of one another."""
    n = 200
    s = build_schedule(ChurnConfig(n_stable=n, horizon=5 * n, seed=21))
    t = 5 * n
    arrivals = [u for u in range(s.n_nodes) if s.join_round[u] <= t]
    young = sorted(u for u in alive_set(s, t) if t - s.join_round[u] <= n)
    counts = dict.fromkeys(young, 0)
    for rep in range(100):
        em = EntryManager(n, np.random.default_rng([rep, 5]), d=4)
        for u in arrivals:
            em.register(u)
        drawn = 0
        while drawn < 1000:
            for v in em.query():
                drawn += 1
                if v in counts:
                    counts[v] += 1
    freq = np.array(list(counts.values()), dtype=float)
    assert freq.min() > 0
    assert freq.max() / freq.min() <= 4


@settings(max_examples=40, deadline=None)
@given(cap=st.integers(1, 30), regs=st.lists(st.integers(0, 200), max_size=200), seed=st.integers(0, 999))
def test_list_never_exceeds_capacity(cap, regs, seed):
    em = EntryManager(cap, np.random.default_rng(seed), d=2)
    for u in regs:
        em.register(u)
        assert len(em) <= cap
        assert len(set(em.nodes_list)) == len(em)
    q = em.query()
    assert len(q) == min(6, len(em)) and set(q) <= set(em.nodes_list)
