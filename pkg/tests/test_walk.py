import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_regular_edges, static_overlay
from p2pexpander.walk import (
    ABSORBED,
    BLACKLISTED,
    F_FWD,
    LOST_CHURN,
    RETURNED,
    TokenPool,
    WalkParams,
    WalkStats,
    log2n,
    write_stats_csv,
)


def cycle(n):
    return {(min(i, (i + 1) % n), max(i, (i + 1) % n)) for i in range(n)}


def run_rounds(pool, r0, r1):
    for r in range(r0, r1 + 1):
        pool.step(r)


def test_params_for_512():
    wp = WalkParams.for_network(512, scale=1 / 9)
    assert log2n(512) == 9
    assert wp.rw_length == 36
    assert wp.numtokens == 81
    assert wp.cap == 324
    full = WalkParams.for_network(512)
    assert full.numtokens == 729


def test_params_validation():
    with pytest.raises(ValueError):
        WalkParams.for_network(64, scale=0)
    with pytest.raises(ValueError):
        WalkParams(0, 1, 1)


def test_single_token_timing_and_path():
    n, L = 12, 5
    ov = static_overlay(n, cycle(n))
    pool = TokenPool(WalkParams(1, 4, L), ov, n, seed=1)
    pool.initiate([0], r=10)
    run_rounds(pool, 11, 11 + 2 * L)
    assert pool.state[0] == RETURNED
    assert pool.verified_round[0] == 11 + L
    assert pool.returned_round[0] - pool.verified_round[0] == L
    path = [0] + pool.path[0].tolist()
    for a, b in zip(path, path[1:]):
        assert (a - b) % n in (1, n - 1)
    assert pool.endpoint[0] == path[-1]
    rec = pool.verified_record()
    assert rec == {path[-1]: {(0, 0)}}
    assert pool.verified_lists() == {0: [(path[-1], 0)]}


def test_walk_not_done_one_round_early():
    n, L = 10, 4
    ov = static_overlay(n, cycle(n))
    pool = TokenPool(WalkParams(1, 4, L), ov, n, seed=2)
    pool.initiate([3], r=0)
    run_rounds(pool, 1, L)  # last hop only arrives in round L + 1
    assert pool.ctr[0] == L - 1 and not pool.recorded[0]
    pool.step(L + 1)
    assert pool.recorded[0] and pool.ctr[0] == L


def test_departure_mid_return_loses_token():
    n, L = 10, 4
    ov = static_overlay(n, cycle(n))
    pool = TokenPool(WalkParams(1, 4, L), ov, n, seed=3)
    pool.initiate([0], r=0)
    run_rounds(pool, 1, L + 1)
    assert pool.recorded[0]
    mid = int(pool.path[0, 0])  # first hop: the last node the return visits
    assert mid != 0
    ov.remove_node(mid)
    run_rounds(pool, L + 2, 2 * L + 2)
    assert pool.state[0] == LOST_CHURN
    assert pool.verified_lists() == {}


def test_fifo_cap_per_edge():
    # a star leaf with numtokens > cap can only release cap per round
    ov = static_overlay(2, {(0, 1)})
    pool = TokenPool(WalkParams(10, 3, 2), ov, 2, seed=4)
    pool.initiate([0], r=0)
    pool.step(1)
    assert int((pool.state == F_FWD).sum()) == 3
    # the oldest tokens leave first
    assert sorted(np.flatnonzero(pool.state == F_FWD).tolist()) == [0, 1, 2]
    assert pool.stats.max_fwd_sent_per_edge == 3


def test_exact_cap_accepted_and_excess_blacklists():
    ov = static_overlay(2, {(0, 1)}, byzantine=[0])
    cap = 5
    pool = TokenPool(WalkParams(1, cap, 3), ov, 2, seed=5)
    first = pool.inject(0, 1, cap, r=1)
    pool.step(2)
    assert (pool.ctr[first] == 1).all()
    assert (0 in ov.nodes[1].blacklist) is False
    second = pool.inject(0, 1, cap + 1, r=2)
    pool.step(3)
    assert (1, 0) in pool.blacklist and 0 in ov.nodes[1].blacklist
    assert (pool.state[second] == BLACKLISTED).all()
    later = pool.inject(0, 1, 1, r=3)  # short-circuited: never materialised
    assert later.size == 0
    assert pool.stats.blacklist_events == 1


def test_blacklist_is_monotone_across_reset():
    ov = static_overlay(2, {(0, 1)}, byzantine=[0])
    pool = TokenPool(WalkParams(1, 2, 3), ov, 2, seed=6)
    pool.inject(0, 1, 3, r=1)
    pool.step(2)
    pool.reset()
    assert (1, 0) in pool.blacklist
    assert pool.inject(0, 1, 1, r=3).size == 0


def test_reset_discards_and_clears_records():
    n = 16
    ov = static_overlay(n, random_regular_edges(n, np.random.default_rng(0)))
    pool = TokenPool(WalkParams(3, 12, 4), ov, n, seed=7)
    pool.initiate(range(n), r=0)
    run_rounds(pool, 1, 6)
    stats = pool.reset()
    assert stats.initiated == 3 * n
    assert stats.in_transit > 0
    assert pool.m == 0
    assert pool.verified_record() == {} and pool.verified_lists() == {}
    assert len(pool.history) == 1 and pool.phase == 1


def test_absorb_and_byzantine_inbox():
    ov = static_overlay(3, {(0, 1), (1, 2)}, byzantine=[1])
    pool = TokenPool(WalkParams(4, 8, 3), ov, 3, seed=8)
    pool.initiate([0], r=0)
    run_rounds(pool, 1, 2)
    inbox = pool.byzantine_inbox(1)
    assert inbox.size == 4 and pool.touched_byz[inbox].all()
    pool.absorb(inbox)
    assert (pool.state == ABSORBED).all()
    assert pool.conservation()["absorbed_byz"] == 4


def test_forged_return_reaches_source():
    ov = static_overlay(3, {(0, 1), (1, 2)}, byzantine=[2])
    pool = TokenPool(WalkParams(1, 8, 6), ov, 3, seed=9)
    pool.initiate([0], r=0)
    r = 1
    while pool.byzantine_inbox(2).size == 0:
        pool.step(r)
        r += 1
    idx = pool.byzantine_inbox(2)
    new = pool.forge_returns(idx, claimed_endpoint=2)
    pool.absorb(idx)
    for rr in range(r, r + 10):
        pool.step(rr)
    assert pool.state[new[0]] == RETURNED
    assert pool.verified_lists()[0][0][0] == 2
    # the acceptor never recorded it
    assert 2 not in pool.verified_record()


def test_malformed_counter_is_dropped():
    ov = static_overlay(2, {(0, 1)}, byzantine=[0])
    pool = TokenPool(WalkParams(1, 8, 3), ov, 2, seed=10)
    idx = pool.inject(0, 1, 2, r=0)
    pool.cols["ctr"][idx] = 3
    pool.step(1)
    assert (pool.state[idx] == ABSORBED).all()


def test_stats_csv(tmp_path):
    p = tmp_path / "w.csv"
    write_stats_csv([WalkStats(phase=1, initiated=5)], p)
    lines = p.read_text().splitlines()
    assert lines[0].split(",")[:3] == ["phase", "initiated", "verified"]
    assert lines[1].startswith("1,5,")


def test_walk_step_lower_bound_static_expander():
    n = 128
    ov = static_overlay(n, random_regular_edges(n, np.random.default_rng(1)))
    wp = WalkParams.for_network(n, scale=0.1)
    pool = TokenPool(wp, ov, n, seed=11)
    pool.initiate(range(n), r=0)
    run_rounds(pool, 1, 2 * wp.rw_length)
    done = pool.recorded.mean()
    assert done >= 0.999


@settings(max_examples=20, deadline=None)
@given(
    n=st.integers(4, 30),
    seed=st.integers(0, 10_000),
    rounds=st.integers(1, 40),
    leave_at=st.integers(1, 40),
)
def test_conservation_under_departures(n, seed, rounds, leave_at):
    rng = np.random.default_rng(seed)
    edges = {(min(a, b), max(a, b)) for a, b in rng.integers(0, n, size=(3 * n, 2)) if a != b}
    ov = static_overlay(n, edges)
    pool = TokenPool(WalkParams(3, 6, 5), ov, n, seed=seed)
    pool.initiate(range(n), r=0)
    for r in range(1, rounds + 1):
        if r == leave_at and len(ov.nodes) > 1:
            ov.remove_node(int(rng.integers(n)))
        pool.step(r)
        c = pool.conservation()
        assert c["initiated"] == sum(v for k, v in c.items() if k != "initiated")
    stats = pool.reset()
    assert stats.initiated == (
        stats.returned + stats.lost_churn + stats.absorbed_byz
        + stats.dropped_blacklist + stats.in_transit
    )
