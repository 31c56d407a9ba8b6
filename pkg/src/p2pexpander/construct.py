"""Join procedure and per-phase drop / replenish / accept policy."""
from __future__ import annotations

import enum
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

from .overlay import LinkOutcome, Overlay
from .walk import log2n


@dataclass(frozen=True)
class ConstructParams:
    d: int = 4
    eta: int = 9
    max_join_retries: int = 18
    log_n: int = 9

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if self.max_join_retries < 1:
            raise ValueError("max_join_retries must be >= 1")

    @property
    def phase_length(self) -> int:
        return self.eta * self.log_n

    @classmethod
    def for_network(
        cls,
        n: int,
        rw_length: int,
        d: int = 4,
        eta: int | None = None,
        slack: int = 2,
        max_join_retries: int | None = None,
    ) -> "ConstructParams":
        lg = log2n(n)
        if eta is None:
            eta = math.ceil((2 * rw_length + slack) / lg)
        if eta * lg < 2 * rw_length:
            raise ValueError(
                f"phase length {eta * lg} is shorter than two walk lengths ({2 * rw_length})"
            )
        if max_join_retries is None:
            max_join_retries = 2 * lg
        return cls(d, eta, max_join_retries, lg)


class JoinStatus(enum.Enum):
    JOINED = "joined"
    FAILED = "failed"


@dataclass(frozen=True)
class JoinOutcome:
    node: int
    attempts: int
    connections: int
    status: JoinStatus


@dataclass(frozen=True)
class ConnRequest:
    requester: int
    target: int
    token_id: int | None = None
    is_new: bool = False


@dataclass(frozen=True)
class Decision:
    request: ConnRequest
    outcome: LinkOutcome
    reason: str


def accept_policy(
    in_degree: int,
    record: set,
    requests: list[ConnRequest],
    d: int,
    rng: np.random.Generator,
    existing: Iterable[int] = (),
) -> list[Decision]:
    """Decisions for the requests one honest node received this phase.

    Flooders (>= 6d requests) are rejected outright; the rest must cite a
    (source, token) pair this node recorded as a walk endpoint, or be a
    new node arriving while in-degree < 6d.  A uniformly random subset of
    eligible requests fills the remaining in-quota.
    """
    in_cap = 6 * d
    existing = set(existing)
    counts = Counter(r.requester for r in requests)
    out: list[Decision | None] = [None] * len(requests)
    eligible: list[int] = []
    picked_from = set()
    for i, req in enumerate(requests):
        if counts[req.requester] >= in_cap:
            out[i] = Decision(req, LinkOutcome.REJECTED_FLOODED, "flooded")
        elif req.requester in existing or req.requester in picked_from:
            out[i] = Decision(req, LinkOutcome.DUPLICATE, "duplicate")
        elif req.token_id is not None and (req.requester, req.token_id) in record:
            eligible.append(i)
            picked_from.add(req.requester)
        elif req.is_new and in_degree < in_cap:
            eligible.append(i)
            picked_from.add(req.requester)
        else:
            out[i] = Decision(req, LinkOutcome.REJECTED_UNVERIFIED, "unverified")
    room = max(0, in_cap - in_degree)
    k = min(len(eligible), room)
    chosen = set()
    if k:
        chosen = {eligible[j] for j in rng.choice(len(eligible), size=k, replace=False)}
    for i in eligible:
        req = requests[i]
        if i in chosen:
            verified = req.token_id is not None and (req.requester, req.token_id) in record
            out[i] = Decision(req, LinkOutcome.ESTABLISHED, "verified" if verified else "new_node")
        else:
            out[i] = Decision(req, LinkOutcome.REJECTED_FULL, "full")
    return out  # type: ignore[return-value]


AcceptFn = Callable[[int, ConnRequest], Decision]


def join(
    u: int,
    overlay: Overlay,
    entry,
    params: ConstructParams,
    accept: AcceptFn,
    log: Callable[[dict], None] | None = None,
    round_: int = 0,
) -> JoinOutcome:
    """Connect a newcomer through the entry manager, retrying on shortfall.

    ``u`` must already be present in ``overlay`` (with no links).  The
    newcomer keeps querying until it holds more than d out-links or the
    retry budget runs out.  While the network is tiny the target is
    lowered to the number of other members, so the very first node joins
    with no links at all.
    """
    d = params.d
    others = len(overlay.nodes) - 1
    required = min(d + 1, others)
    rec = overlay.nodes[u]
    attempts = 0
    while True:
        attempts += 1
        for v in entry.query(u):
            if len(rec.out_links) >= 3 * d:
                break
            if v == u or v in rec.out_links or v in rec.in_links:
                continue
            req = ConnRequest(u, v, None, is_new=True)
            if v not in overlay.nodes:
                if log:
                    log({"round": round_, "event": "reject", "requester": u, "target": v,
                         "reason": "absent", "phase_kind": "join"})
                continue
            dec = accept(v, req)
            outcome = dec.outcome
            if outcome is LinkOutcome.ESTABLISHED:
                outcome = overlay.add_link(u, v)
            if log:
                if outcome is LinkOutcome.ESTABLISHED:
                    log({"round": round_, "event": "accept", "requester": u, "target": v,
                         "reason": dec.reason, "token": None, "phase_kind": "join"})
                else:
                    log({"round": round_, "event": "reject", "requester": u, "target": v,
                         "reason": dec.reason if dec.outcome is not LinkOutcome.ESTABLISHED
                         else outcome.value, "phase_kind": "join"})
        if len(rec.out_links) >= required or attempts >= params.max_join_retries:
            break
    conns = len(rec.out_links)
    status = JoinStatus.JOINED if conns >= required else JoinStatus.FAILED
    return JoinOutcome(u, attempts, conns, status)


@dataclass
class MaintainPlan:
    node: int
    drops: list[int]
    targets: list[tuple[int, int]]  # (endpoint, token id)
    shortfall: int = 0


def plan_maintenance(
    u: int,
    out_links: set,
    neighbors: set,
    verified_list: list[tuple[int, int]],
    d: int,
    rng: np.random.Generator,
) -> MaintainPlan:
    """Which out-links to drop and which verified endpoints to request.

    At out-degree >= 2d: drop d random out-links and replace them, but only
    when at least d fresh verified endpoints are on hand.  Below 2d: top up
    towards 3d from whatever is verified.
    """
    seen = set()
    cands = []
    for e, t in verified_list:
        if e == u or e in neighbors or e in seen:
            continue
        seen.add(e)
        cands.append((e, t))
    d_out = len(out_links)
    drops: list[int] = []
    if d_out >= 2 * d:
        if len(cands) < d:
            return MaintainPlan(u, [], [], shortfall=d - len(cands))
        drops = [int(x) for x in rng.choice(sorted(out_links), size=d, replace=False)]
        need = d
    else:
        need = 3 * d - d_out
    k = min(need, len(cands))
    picks = rng.choice(len(cands), size=k, replace=False) if k else []
    return MaintainPlan(u, sorted(drops), [cands[i] for i in sorted(picks)], need - k)


def phase_boundary(
    overlay: Overlay,
    verified_lists: dict[int, list[tuple[int, int]]],
    verified_record: dict[int, set],
    d: int,
    rng: np.random.Generator,
    extra_requests: Iterable[ConnRequest] = (),
    byzantine_accepts: Callable[[int, ConnRequest], bool] | None = None,
    log: Callable[[dict], None] | None = None,
    round_: int = 0,
) -> dict[str, int]:
    """Runs drop/replenish for every honest node, then all accept decisions.

    Requests are collected first and decided per target afterwards so the
    result does not depend on node iteration order.
    """
    counters = Counter()
    honest = [u for u in sorted(overlay.nodes) if not overlay.nodes[u].is_byzantine]
    plans = []
    for u in honest:
        rec = overlay.nodes[u]
        plan = plan_maintenance(u, rec.out_links, rec.neighbors, verified_lists.get(u, []), d, rng)
        plans.append(plan)
        counters["shortfall"] += plan.shortfall
    for plan in plans:
        for v in plan.drops:
            if overlay.drop_link(plan.node, v):
                counters["drops"] += 1
                if log:
                    log({"round": round_, "event": "drop", "u": plan.node, "v": v, "reason": "maintain"})

    requests: dict[int, list[ConnRequest]] = defaultdict(list)
    for plan in plans:
        for e, t in plan.targets:
            requests[e].append(ConnRequest(plan.node, e, t, is_new=overlay.nodes[plan.node].is_new))
    for req in extra_requests:
        requests[req.target].append(req)

    for v in sorted(requests):
        reqs = requests[v]
        counters["requests"] += len(reqs)
        tgt = overlay.nodes.get(v)
        if tgt is None:
            decisions = [Decision(r, LinkOutcome.REJECTED_FULL, "absent") for r in reqs]
        elif tgt.is_byzantine:
            ok = byzantine_accepts or (lambda _v, _r: True)
            decisions = [
                Decision(r, LinkOutcome.ESTABLISHED, "byzantine")
                if ok(v, r) else Decision(r, LinkOutcome.REJECTED_FULL, "byzantine_refused")
                for r in reqs
            ]
        else:
            decisions = accept_policy(
                len(tgt.in_links), verified_record.get(v, set()), reqs, d, rng, tgt.neighbors
            )
        for dec in decisions:
            r = dec.request
            outcome = dec.outcome
            if outcome is LinkOutcome.ESTABLISHED:
                if r.requester not in overlay.nodes:
                    outcome = LinkOutcome.DUPLICATE
                else:
                    outcome = overlay.add_link(r.requester, v)
            if outcome is LinkOutcome.ESTABLISHED:
                counters["accepted"] += 1
                if log:
                    log({"round": round_, "event": "accept", "requester": r.requester, "target": v,
                         "reason": dec.reason, "token": r.token_id, "phase_kind": "maintain"})
            else:
                counters["rejected"] += 1
                if log:
                    reason = dec.reason if dec.outcome is not LinkOutcome.ESTABLISHED else outcome.value
                    log({"round": round_, "event": "reject", "requester": r.requester, "target": v,
                         "reason": reason, "token": r.token_id, "phase_kind": "maintain"})
    return dict(counters)
