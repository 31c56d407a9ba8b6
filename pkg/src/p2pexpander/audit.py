"""Replays an event log and checks connection and degree invariants."""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


@dataclass
class AuditReport:
    events: int = 0
    accepts: int = 0
    honest_accepts: int = 0
    backed_verified: int = 0
    backed_new_node: int = 0
    unaudited: int = 0
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def summary(self) -> dict:
        return {
            "events": self.events,
            "accepts": self.accepts,
            "honest_accepts": self.honest_accepts,
            "backed_verified": self.backed_verified,
            "backed_new_node": self.backed_new_node,
            "unaudited": self.unaudited,
            "violations": len(self.violations),
        }


def read_events(path) -> list[dict]:
    return [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]


def audit_events(events: Iterable[dict], max_report: int = 50) -> AuditReport:
    """Every accepted link at an honest node must be backed by a
    verified (endpoint, source, token) triple of the current phase or by
    the requester being new; honest degree caps must hold throughout."""
    rep = AuditReport()
    d = None
    byz: set[int] = set()
    new: set[int] = set()
    batch: set[tuple[int, int, int]] | None = None
    out_deg: dict[int, int] = defaultdict(int)
    in_deg: dict[int, int] = defaultdict(int)
    out_of: dict[int, set] = defaultdict(set)
    in_of: dict[int, set] = defaultdict(set)

    def fail(msg):
        if len(rep.violations) < max_report:
            rep.violations.append(msg)
        else:
            rep.violations.append("...")

    def unlink(a, b):
        if b in out_of[a]:
            out_of[a].discard(b)
            in_of[b].discard(a)
        elif a in out_of[b]:
            out_of[b].discard(a)
            in_of[a].discard(b)

    for ev in events:
        rep.events += 1
        kind = ev.get("event")
        r = ev.get("round")
        if kind == "run_start":
            d = ev["d"]
        elif kind == "join":
            new.add(ev["node"])
        elif kind == "corrupt":
            byz.add(ev["node"])
        elif kind == "verified_batch":
            batch = set(zip(ev["endpoint"], ev["source"], ev["token"]))
        elif kind == "phase_boundary":
            new.clear()
            batch = None
        elif kind in ("leave", "join_failed"):
            u = ev["node"]
            for v in list(out_of[u]) + list(in_of[u]):
                unlink(u, v)
            out_of.pop(u, None)
            in_of.pop(u, None)
        elif kind == "drop":
            unlink(ev["u"], ev["v"])
        elif kind == "accept":
            rep.accepts += 1
            u, v = ev["requester"], ev["target"]
            out_of[u].add(v)
            in_of[v].add(u)
            if v in byz:
                continue
            rep.honest_accepts += 1
            verified = None if batch is None else (v, u, ev.get("token")) in batch
            if u in new and ev.get("token") is None:
                rep.backed_new_node += 1
            elif verified:
                rep.backed_verified += 1
            elif u in new:
                rep.backed_new_node += 1
            elif verified is None and ev.get("reason") == "verified":
                rep.unaudited += 1
            else:
                fail(f"round {r}: {v} accepted {u} (token {ev.get('token')}) without backing")
            if d is not None:
                if len(in_of[v]) > 6 * d:
                    fail(f"round {r}: honest in-degree of {v} exceeds 6d")
                if u not in byz and len(out_of[u]) > 3 * d:
                    fail(f"round {r}: honest out-degree of {u} exceeds 3d")
    return rep
