import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from p2pexpander.construct import (
    ConnRequest,
    ConstructParams,
    JoinStatus,
    accept_policy,
    join,
    phase_boundary,
    plan_maintenance,
)
from p2pexpander.entry import EntryManager
from p2pexpander.overlay import LinkOutcome, Overlay

D = 4


def rng(seed=0):
    return np.random.default_rng(seed)


def honest_accept(ov, seed=0):
    g = rng(seed)

    def accept(v, req):
        rec = ov.nodes[v]
        return accept_policy(len(rec.in_links), set(), [req], ov.d, g, rec.neighbors)[0]

    return accept


def test_params_phase_constraint():
    cp = ConstructParams.for_network(512, rw_length=36)
    assert cp.log_n == 9 and cp.eta == 9 and cp.phase_length == 81
    assert cp.max_join_retries == 18
    with pytest.raises(ValueError):
        ConstructParams.for_network(512, rw_length=36, eta=7)


def test_policy_verified_token_accepted():
    rec = {(7, 42)}
    out = accept_policy(3, rec, [ConnRequest(7, 1, 42)], D, rng())
    assert out[0].outcome is LinkOutcome.ESTABLISHED and out[0].reason == "verified"


def test_policy_unknown_token_rejected():
    out = accept_policy(3, {(7, 42)}, [ConnRequest(7, 1, 43)], D, rng())
    assert out[0].outcome is LinkOutcome.REJECTED_UNVERIFIED


def test_policy_old_token_after_reset_rejected():
    out = accept_policy(0, set(), [ConnRequest(7, 1, 42)], D, rng())
    assert out[0].outcome is LinkOutcome.REJECTED_UNVERIFIED


def test_policy_full_rejects_non_new():
    out = accept_policy(6 * D, {(7, 42)}, [ConnRequest(7, 1, 42)], D, rng())
    assert out[0].outcome is LinkOutcome.REJECTED_FULL


def test_policy_new_node_exception():
    ok = accept_policy(6 * D - 1, set(), [ConnRequest(7, 1, None, is_new=True)], D, rng())
    assert ok[0].outcome is LinkOutcome.ESTABLISHED and ok[0].reason == "new_node"
    full = accept_policy(6 * D, set(), [ConnRequest(7, 1, None, is_new=True)], D, rng())
    assert full[0].outcome is LinkOutcome.REJECTED_UNVERIFIED


def test_policy_flood_rejected_wholesale():
    rec = {(9, t) for t in range(100)}
    reqs = [ConnRequest(9, 1, t) for t in range(6 * D)]
    out = accept_policy(0, rec, reqs, D, rng())
    assert all(o.outcome is LinkOutcome.REJECTED_FLOODED for o in out)
    out = accept_policy(0, rec, reqs[:-1], D, rng())
    assert [o.outcome for o in out].count(LinkOutcome.ESTABLISHED) == 1
    assert all(o.outcome in (LinkOutcome.ESTABLISHED, LinkOutcome.DUPLICATE) for o in out)


def test_policy_quota_random_subset():
    rec = {(u, 0) for u in range(40)}
    reqs = [ConnRequest(u, 100, 0) for u in range(40)]
    out = accept_policy(6 * D - 5, rec, reqs, D, rng(3))
    acc = [o for o in out if o.outcome is LinkOutcome.ESTABLISHED]
    assert len(acc) == 5
    assert sum(o.outcome is LinkOutcome.REJECTED_FULL for o in out) == 35


def test_policy_existing_neighbor_duplicate():
    out = accept_policy(1, {(5, 0)}, [ConnRequest(5, 1, 0)], D, rng(), existing={5})
    assert out[0].outcome is LinkOutcome.DUPLICATE


def test_first_node_joins_alone():
    ov = Overlay(D)
    em = EntryManager(10, rng(), D)
    cp = ConstructParams.for_network(16, rw_length=16)
    ov.add_node(0, 1)
    out = join(0, ov, em, cp, honest_accept(ov))
    assert out.status is JoinStatus.JOINED and out.connections == 0


def test_bootstrap_joins_everyone_present():
    ov = Overlay(D)
    em = EntryManager(50, rng(1), D)
    cp = ConstructParams.for_network(64, rw_length=24)
    for u in range(30):
        ov.add_node(u, u)
        out = join(u, ov, em, cp, honest_accept(ov, u))
        assert out.status is JoinStatus.JOINED
        assert out.connections >= min(D + 1, u)
        assert u not in em  # registered only by the caller
        em.register(u)
        ov.check_invariants()
    for rec in ov.nodes.values():
        assert len(rec.out_links) <= 3 * D and len(rec.in_links) <= 6 * D


def test_join_fails_when_only_dead_candidates():
    ov = Overlay(D)
    em = EntryManager(20, rng(2), D)
    for u in range(20):
        em.register(u)
    ov.add_node(100, 5)
    ov.add_node(101, 5)  # one live peer, but not in the entry list
    cp = ConstructParams(D, 9, 3, 9)
    logs = []
    out = join(100, ov, em, cp, honest_accept(ov), logs.append, 5)
    assert out.status is JoinStatus.FAILED and out.attempts == 3
    assert all(e["reason"] == "absent" for e in logs)


def test_join_stops_at_out_cap():
    ov = Overlay(D)
    em = EntryManager(200, rng(3), D)
    for u in range(100):
        ov.add_node(u, 0)
        em.register(u)
    ov.add_node(500, 1)
    cp = ConstructParams(D, 9, 18, 9)
    out = join(500, ov, em, cp, honest_accept(ov))
    assert out.status is JoinStatus.JOINED
    assert D + 1 <= out.connections <= 3 * D


def test_plan_drop_and_replace():
    out_links = set(range(10, 10 + 2 * D))
    vl = [(e, e + 1000) for e in range(50, 60)]
    plan = plan_maintenance(1, out_links, out_links, vl, D, rng())
    assert len(plan.drops) == D and set(plan.drops) <= out_links
    assert len(plan.targets) == D and plan.shortfall == 0


def test_plan_skips_drop_on_shortfall():
    out_links = set(range(10, 10 + 2 * D))
    plan = plan_maintenance(1, out_links, out_links, [(50, 0)], D, rng())
    assert plan.drops == [] and plan.targets == [] and plan.shortfall == D - 1


def test_plan_top_up_below_2d():
    out_links = {10, 11}
    vl = [(e, e) for e in range(50, 70)]
    plan = plan_maintenance(1, out_links, out_links, vl, D, rng())
    assert plan.drops == [] and len(plan.targets) == 3 * D - 2


def test_plan_excludes_self_neighbors_and_repeats():
    vl = [(1, 0), (10, 1), (50, 2), (50, 3), (51, 4)]
    plan = plan_maintenance(1, {10}, {10}, vl, D, rng())
    assert sorted(e for e, _ in plan.targets) == [50, 51]


def _two_phase_overlay():
    ov = Overlay(D)
    for u in range(40):
        ov.add_node(u, 0)
    g = rng(9)
    for u in range(40):
        for v in g.choice(40, size=6, replace=False):
            if len(ov.nodes[u].out_links) < 2 * D:
                ov.add_link(u, int(v))
    for rec in ov.nodes.values():
        rec.is_new = False
    return ov


def test_phase_boundary_respects_caps_and_records():
    ov = _two_phase_overlay()
    g = rng(10)
    lists, record = {}, {}
    tid = 0
    for u in range(40):
        for e in g.choice(40, size=12, replace=False):
            e = int(e)
            lists.setdefault(u, []).append((e, tid))
            record.setdefault(e, set()).add((u, tid))
            tid += 1
    logs = []
    counters = phase_boundary(ov, lists, record, D, rng(11), log=logs.append, round_=81)
    ov.check_invariants()
    assert counters["accepted"] > 0
    for ev in logs:
        if ev["event"] == "accept":
            assert (ev["requester"], ev["token"]) in record[ev["target"]]


def test_phase_boundary_rejects_flooder():
    ov = _two_phase_overlay()
    ov.add_node(99, 0, is_byzantine=True)
    flood = [ConnRequest(99, 3, -(k + 1)) for k in range(6 * D)]
    logs = []
    phase_boundary(ov, {}, {}, D, rng(), flood, log=logs.append)
    assert all(e["reason"] == "flooded" for e in logs if e["requester"] == 99)
    assert 99 not in ov.nodes[3].neighbors


def test_phase_boundary_silent_byzantine_refuses():
    ov = _two_phase_overlay()
    ov.add_node(99, 0, is_byzantine=True)
    lists = {0: [(99, 1)]}
    phase_boundary(ov, lists, {}, D, rng(), byzantine_accepts=lambda v, r: False)
    assert 99 not in ov.nodes[0].neighbors


def test_phase_boundary_deterministic():
    a, b = _two_phase_overlay(), _two_phase_overlay()
    lists = {u: [((u * 7 + k) % 40, k) for k in range(12)] for u in range(40)}
    record = {}
    for u, lst in lists.items():
        for e, t in lst:
            record.setdefault(e, set()).add((u, t))
    la, lb = [], []
    phase_boundary(a, lists, record, D, rng(5), log=la.append)
    phase_boundary(b, lists, record, D, rng(5), log=lb.append)
    assert la == lb and a.edges() == b.edges()


@settings(max_examples=25, deadline=None)
@given(
    in_deg=st.integers(0, 6 * D),
    reqs=st.lists(st.tuples(st.integers(0, 8), st.integers(0, 5), st.booleans()), max_size=40),
    recorded=st.sets(st.tuples(st.integers(0, 8), st.integers(0, 5)), max_size=20),
    seed=st.integers(0, 1000),
)
def test_policy_never_overfills_or_accepts_unbacked(in_deg, reqs, recorded, seed):
    requests = [ConnRequest(u, 100, t, is_new=new) for u, t, new in reqs]
    out = accept_policy(in_deg, recorded, requests, D, rng(seed))
    acc = [o for o in out if o.outcome is LinkOutcome.ESTABLISHED]
    assert len(acc) <= 6 * D - in_deg
    assert len({o.request.requester for o in acc}) == len(acc)
    for o in acc:
        r = o.request
        assert (r.requester, r.token_id) in recorded or (r.is_new and in_deg < 6 * D)
