"""Capacity-limited random-walk tokens with verified reverse-path return.

All tokens of a phase live in one :class:`TokenPool`, stored column-wise
so a whole round of per-node processing is a handful of numpy passes.
Semantics per honest node and round:

* tokens delivered on an edge are read one round after they were sent;
* a neighbour whose batch on that edge exceeds ``cap`` is blacklisted and
  the batch, and everything it sends later, is ignored;
* an accepted forward token has its counter incremented and the receiver
  appended to its path; at ``rw_length`` it is verified at the receiver,
  otherwise it is queued to a uniformly random neighbour's FIFO outbox;
* each outbox releases at most ``cap`` tokens per round;
* verified tokens hop back along the reversed path, one hop per round.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, fields

import numpy as np

Q_FWD, F_FWD, Q_RET, F_RET = 0, 1, 2, 3
AT_BYZ_FWD, AT_BYZ_RET = 4, 5
RETURNED, LOST_CHURN, ABSORBED, BLACKLISTED, DISCARDED = 6, 7, 8, 9, 10

LIVE_STATES = (Q_FWD, F_FWD, Q_RET, F_RET, AT_BYZ_FWD, AT_BYZ_RET)


def log2n(n: int) -> int:
    return max(1, math.ceil(math.log2(max(n, 2))))


@dataclass(frozen=True)
class WalkParams:
    numtokens: int
    cap: int
    rw_length: int
    scale: float = 1.0

    def __post_init__(self):
        if self.numtokens < 1 or self.cap < 1 or self.rw_length < 1:
            raise ValueError("numtokens, cap and rw_length must all be >= 1")

    @classmethod
    def for_network(
        cls,
        n: int,
        scale: float = 1.0,
        a: float = 4.0,
        c: int = 4,
        numtokens: int | None = None,
    ) -> "WalkParams":
        """numtokens = scale * log^3 n, cap = a * numtokens, rw_length = c * log n."""
        if not 0 < scale <= 1:
            raise ValueError("scale must lie in (0, 1]")
        lg = log2n(n)
        if numtokens is None:
            numtokens = max(1, round(scale * lg**3))
        return cls(numtokens, max(1, math.ceil(a * numtokens)), c * lg, scale)


@dataclass
class WalkStats:
    phase: int = 0
    initiated: int = 0
    verified: int = 0
    returned: int = 0
    lost_churn: int = 0
    absorbed_byz: int = 0
    dropped_blacklist: int = 0
    in_transit: int = 0
    blacklist_events: int = 0
    fabricated: int = 0
    isolated_initiators: int = 0
    max_fwd_sent_per_edge: int = 0

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


def write_stats_csv(rows: list[WalkStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(WalkStats.columns())
        for r in rows:
            w.writerow(r.row())


class TokenPool:
    """Token state for one phase across the whole overlay.

    ``overlay`` is read for adjacency and per-node flags; the
    pool caches derived arrays until ``overlay.version`` changes.
    """

    _COLS = {
        "src": np.int32,
        "tid": np.int64,
        "ctr": np.int32,
        "holder": np.int32,
        "dest": np.int32,
        "seq": np.int64,
        "state": np.int8,
        "endpoint": np.int32,
        "rp": np.int32,
        "fabricated": np.bool_,
        "recorded": np.bool_,
        "touched_byz": np.bool_,
        "born": np.int32,
        "verified_round": np.int32,
        "returned_round": np.int32,
    }

    def __init__(self, params: WalkParams, overlay, n_ids: int, seed: int = 0, on_event=None):
        self.p = params
        self.overlay = overlay
        self.K = int(n_ids)
        self.seed = seed
        self.on_event = on_event
        self.phase = 0
        self.next_tid = 0
        self._seq = 0
        self._version = -1
        self.blacklist: set[tuple[int, int]] = set()  # (receiver, sender)
        self._bl_keys = np.empty(0, dtype=np.int64)
        self._alloc(0)
        self.stats = WalkStats()
        self.history: list[WalkStats] = []

    # -- storage -----------------------------------------------------
    def _alloc(self, m: int) -> None:
        self.m = 0
        self.cols = {k: np.empty(m, dtype=t) for k, t in self._COLS.items()}
        self.path = np.full((m, self.p.rw_length), -1, dtype=np.int32)

    def _append(self, k: int, **vals) -> np.ndarray:
        need = self.m + k
        cur = self.path.shape[0]
        if need > cur:
            new = max(need, 2 * cur, 1024)
            for name, arr in self.cols.items():
                grown = np.empty(new, dtype=arr.dtype)
                grown[: self.m] = arr[: self.m]
                self.cols[name] = grown
            path = np.full((new, self.p.rw_length), -1, dtype=np.int32)
            path[: self.m] = self.path[: self.m]
            self.path = path
        idx = np.arange(self.m, need)
        defaults = dict(
            ctr=0, seq=0, endpoint=-1, rp=-1, fabricated=False, recorded=False,
            touched_byz=False, verified_round=-1, returned_round=-1,
        )
        defaults.update(vals)
        for name in self.cols:
            self.cols[name][idx] = defaults[name]
        self.path[idx] = -1
        self.m = need
        return idx

    def __getattr__(self, name):
        cols = self.__dict__.get("cols")
        if cols is not None and name in cols:
            return cols[name][: self.__dict__["m"]]
        raise AttributeError(name)

    def _next_seq(self, k: int) -> np.ndarray:
        s = np.arange(self._seq, self._seq + k, dtype=np.int64)
        self._seq += k
        return s

    def _rng(self, r: int, purpose: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, 0x7A1C, r, purpose])

    # -- overlay view ------------------------------------------------
    def _refresh(self) -> None:
        ov = self.overlay
        if ov.version == self._version:
            return
        K = self.K
        alive = np.zeros(K, dtype=bool)
        byz = np.zeros(K, dtype=bool)
        deg = np.zeros(K, dtype=np.int64)
        nbr_lists = []
        for u in sorted(ov.nodes):
            rec = ov.nodes[u]
            alive[u] = True
            byz[u] = rec.is_byzantine
            nb = sorted(rec.out_links | rec.in_links)
            deg[u] = len(nb)
            nbr_lists.append(nb)
        indptr = np.zeros(K + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.fromiter(
            (v for nb in nbr_lists for v in nb), dtype=np.int64, count=int(indptr[-1])
        )
        owners = np.repeat(np.arange(K, dtype=np.int64), deg)
        self._alive, self._byz, self._deg = alive, byz, deg
        self._indptr, self._indices = indptr, indices
        self._edge_keys = owners * K + indices  # sorted: owners asc, nbrs asc
        self._version = ov.version

    def _is_edge(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        if self._edge_keys.size == 0:
            return np.zeros(u.shape, dtype=bool)
        keys = u.astype(np.int64) * self.K + v
        pos = np.searchsorted(self._edge_keys, keys)
        pos = np.minimum(pos, self._edge_keys.size - 1)
        return self._edge_keys[pos] == keys

    def _random_neighbor(self, nodes: np.ndarray, rng) -> np.ndarray:
        """Uniform neighbour per entry; -1 where the node is isolated."""
        deg = self._deg[nodes]
        pick = (rng.random(nodes.size) * deg).astype(np.int64)
        out = np.full(nodes.size, -1, dtype=np.int64)
        ok = deg > 0
        out[ok] = self._indices[self._indptr[nodes[ok]] + pick[ok]]
        return out

    # -- phase lifecycle ---------------------------------------------
    def initiate(self, nodes, r: int) -> int:
        """Each listed honest node creates numtokens tokens into random outboxes."""
        self._refresh()
        nodes = np.asarray(sorted(nodes), dtype=np.int64)
        if nodes.size == 0:
            return 0
        has_nbr = self._deg[nodes] > 0
        self.stats.isolated_initiators += int((~has_nbr).sum())
        nodes = nodes[has_nbr]
        k = nodes.size * self.p.numtokens
        if k == 0:
            return 0
        src = np.repeat(nodes, self.p.numtokens)
        dest = self._random_neighbor(src, self._rng(r, 0))
        tids = np.arange(self.next_tid, self.next_tid + k)
        self.next_tid += k
        self._append(
            k, src=src, tid=tids, holder=src, dest=dest, seq=self._next_seq(k),
            state=Q_FWD, born=r,
        )
        self.stats.initiated += k
        return k

    def inject(self, sender: int, receiver: int, count: int, r: int) -> np.ndarray:
        """Byzantine ``sender`` puts ``count`` fabricated tokens on an edge."""
        if count <= 0:
            return np.empty(0, dtype=np.int64)
        self.stats.fabricated += count
        if (receiver, sender) in self.blacklist:
            # would be discarded on arrival anyway; skip materialising them
            return np.empty(0, dtype=np.int64)
        tids = np.arange(self.next_tid, self.next_tid + count)
        self.next_tid += count
        return self._append(
            count, src=sender, tid=tids, holder=sender, dest=receiver,
            seq=self._next_seq(count), state=F_FWD, fabricated=True, born=r,
        )

    def reset(self) -> WalkStats:
        """Phase boundary: discard everything still in flight; start fresh."""
        st = self.state
        done = self.stats
        live = np.isin(st, LIVE_STATES)
        done.in_transit = int((live & ~self.fabricated).sum())
        self.history.append(done)
        self.phase += 1
        self.stats = WalkStats(phase=self.phase)
        self._alloc(max(1024, self.m))
        return done

    def conservation(self) -> dict[str, int]:
        """Honest-initiated tokens by terminal (or live) state."""
        own = ~self.fabricated
        st = self.state[own]
        live = int(np.isin(st, LIVE_STATES).sum())
        return {
            "initiated": int(own.sum()),
            "in_transit": live,
            "returned": int((st == RETURNED).sum()),
            "lost_churn": int((st == LOST_CHURN).sum()),
            "absorbed_byz": int((st == ABSORBED).sum()),
            "dropped_blacklist": int((st == BLACKLISTED).sum()),
        }

    # -- per-round processing ----------------------------------------
    def step(self, r: int) -> None:
        """Deliver last round's sends, process them, then drain outboxes."""
        self._refresh()
        rng = self._rng(r, 1)
        self._purge_held(rng)
        self._deliver(r, rng)
        self._send(Q_FWD, F_FWD)
        self._send(Q_RET, F_RET)

    def _set_state(self, idx, state) -> None:
        self.cols["state"][idx] = state

    def _lose(self, idx, state=LOST_CHURN) -> None:
        idx = np.asarray(idx)
        if idx.size == 0:
            return
        own = ~self.cols["fabricated"][idx]
        n = int(own.sum())
        if state == LOST_CHURN:
            self.stats.lost_churn += n
        elif state == ABSORBED:
            self.stats.absorbed_byz += n
        elif state == BLACKLISTED:
            self.stats.dropped_blacklist += n
        self._set_state(idx, state)

    def _purge_held(self, rng) -> None:
        st = self.state
        at_byz = np.flatnonzero((st == AT_BYZ_FWD) | (st == AT_BYZ_RET))
        if at_byz.size:
            self._lose(at_byz[~self._alive[self.holder[at_byz]]], ABSORBED)
        held = np.flatnonzero((st == Q_FWD) | (st == Q_RET))
        if held.size == 0:
            return
        h = self.holder[held]
        dead = ~self._alive[h]
        self._lose(held[dead])
        held = held[~dead]
        bad = ~self._is_edge(self.holder[held], self.dest[held])
        bad_idx = held[bad]
        if bad_idx.size == 0:
            return
        is_ret = self.state[bad_idx] == Q_RET
        self._lose(bad_idx[is_ret])
        fwd = bad_idx[~is_ret]
        if fwd.size:
            nb = self._random_neighbor(self.holder[fwd].astype(np.int64), rng)
            iso = nb < 0
            self._lose(fwd[iso])
            self.cols["dest"][fwd[~iso]] = nb[~iso]

    def _deliver(self, r: int, rng) -> None:
        st = self.state
        arr = np.flatnonzero((st == F_FWD) | (st == F_RET))
        if arr.size == 0:
            return
        s = self.holder[arr].astype(np.int64)
        v = self.dest[arr].astype(np.int64)
        ok = self._alive[v] & self._alive[s] & self._is_edge(s, v)
        self._lose(arr[~ok])
        arr, s, v = arr[ok], s[ok], v[ok]

        byz = self._byz[v]
        if byz.any():
            b = arr[byz]
            self.cols["touched_byz"][b] = True
            self.cols["holder"][b] = v[byz]
            is_fwd = self.state[b] == F_FWD
            self._set_state(b[is_fwd], AT_BYZ_FWD)
            self._set_state(b[~is_fwd], AT_BYZ_RET)
            arr, s, v = arr[~byz], s[~byz], v[~byz]
        if arr.size == 0:
            return

        keys = v * self.K + s
        if self._bl_keys.size:
            bl = np.isin(keys, self._bl_keys)
            self._lose(arr[bl], BLACKLISTED)
            arr, s, v, keys = arr[~bl], s[~bl], v[~bl], keys[~bl]

        is_fwd = self.state[arr] == F_FWD
        over = set()
        for mask in (is_fwd, ~is_fwd):
            if mask.any():
                uk, cnt = np.unique(keys[mask], return_counts=True)
                over.update(uk[cnt > self.p.cap].tolist())
        if over:
            for key in sorted(over):
                self._blacklist(int(key // self.K), int(key % self.K), r)
            drop = np.isin(keys, np.fromiter(over, dtype=np.int64))
            self._lose(arr[drop], BLACKLISTED)
            arr, v, is_fwd = arr[~drop], v[~drop], is_fwd[~drop]

        self._accept_forward(arr[is_fwd], v[is_fwd], r, rng)
        self._accept_return(arr[~is_fwd], v[~is_fwd], r)

    def _blacklist(self, receiver: int, sender: int, r: int) -> None:
        if (receiver, sender) in self.blacklist:
            return
        self.blacklist.add((receiver, sender))
        self._bl_keys = np.sort(
            np.fromiter((a * self.K + b for a, b in self.blacklist), dtype=np.int64)
        )
        rec = self.overlay.nodes.get(receiver)
        if rec is not None:
            rec.blacklist.add(sender)
        self.stats.blacklist_events += 1
        if self.on_event:
            self.on_event({"round": r, "event": "blacklist", "node": receiver, "peer": sender})

    def _accept_forward(self, idx, v, r, rng) -> None:
        if idx.size == 0:
            return
        L = self.p.rw_length
        c = self.cols
        # counters only a Byzantine sender could have produced
        bad = (c["ctr"][idx] < 0) | (c["ctr"][idx] >= L)
        if bad.any():
            self._lose(idx[bad], ABSORBED)
            idx, v = idx[~bad], v[~bad]
            if idx.size == 0:
                return
        ctr = c["ctr"][idx] + 1
        c["ctr"][idx] = ctr
        self.path[idx, ctr - 1] = v
        c["holder"][idx] = v
        fin = ctr >= L
        done, vd = idx[fin], v[fin]
        if done.size:
            c["endpoint"][done] = vd
            c["recorded"][done] = True
            c["verified_round"][done] = r
            self.stats.verified += int((~c["fabricated"][done]).sum())
            self._enqueue_return(done, np.full(done.size, L - 1))
        go, vg = idx[~fin], v[~fin]
        if go.size:
            nb = self._random_neighbor(vg, rng)
            iso = nb < 0
            self._lose(go[iso])
            go, nb = go[~iso], nb[~iso]
            c["dest"][go] = nb
            c["seq"][go] = self._next_seq(go.size)
            c["state"][go] = Q_FWD

    def _enqueue_return(self, idx, holder_pos) -> None:
        """Queue at the current holder towards the previous hop on the path."""
        c = self.cols
        prev = holder_pos - 1
        nxt = np.where(prev >= 0, self.path[idx, np.maximum(prev, 0)], c["src"][idx])
        c["dest"][idx] = nxt
        c["rp"][idx] = prev
        c["seq"][idx] = self._next_seq(idx.size)
        c["state"][idx] = Q_RET

    def _accept_return(self, idx, v, r) -> None:
        if idx.size == 0:
            return
        c = self.cols
        c["holder"][idx] = v
        home = c["rp"][idx] < 0
        fin = idx[home]
        if fin.size:
            c["state"][fin] = RETURNED
            c["returned_round"][fin] = r
            self.stats.returned += int((~c["fabricated"][fin]).sum())
        rest = idx[~home]
        if rest.size:
            self._enqueue_return(rest, c["rp"][rest])

    def _send(self, q_state: int, f_state: int) -> None:
        q = np.flatnonzero(self.state == q_state)
        if q.size == 0:
            return
        keys = self.holder[q].astype(np.int64) * self.K + self.dest[q]
        order = np.lexsort((self.seq[q], keys))
        sk = keys[order]
        first = np.empty(sk.size, dtype=bool)
        first[0] = True
        first[1:] = sk[1:] != sk[:-1]
        pos = np.arange(sk.size)
        start = np.maximum.accumulate(np.where(first, pos, 0))
        rank = pos - start
        sent = q[order[rank < self.p.cap]]
        self._set_state(sent, f_state)
        if q_state == Q_FWD and sent.size:
            self.stats.max_fwd_sent_per_edge = max(
                self.stats.max_fwd_sent_per_edge, int(min(rank.max() + 1, self.p.cap))
            )

    # -- Byzantine-side primitives -----------------------------------
    def byzantine_inbox(self, node: int | None = None) -> np.ndarray:
        st = self.state
        idx = np.flatnonzero((st == AT_BYZ_FWD) | (st == AT_BYZ_RET))
        if node is not None:
            idx = idx[self.holder[idx] == node]
        return idx

    def absorb(self, idx) -> None:
        self._lose(np.asarray(idx, dtype=np.int64), ABSORBED)

    def byz_forward(
        self, idx, to: int, counter: int | None = None, append_self: bool = False
    ) -> None:
        """Byzantine holder sends tokens on to ``to`` (no cap applies to it).

        With ``append_self`` the holder records itself on the path the way an
        honest relay would; the caller must keep the counter below rw_length.
        """
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        c = self.cols
        if append_self:
            ctr = c["ctr"][idx]
            if (ctr >= self.p.rw_length - 1).any():
                raise ValueError("append_self would complete the walk at a Byzantine node")
            self.path[idx, ctr] = c["holder"][idx]
            c["ctr"][idx] = ctr + 1
        if counter is not None:
            c["ctr"][idx] = counter
        c["dest"][idx] = to
        c["state"][idx] = F_FWD

    def byz_relay_returns(self, idx, r: int) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return
        c = self.cols
        home = c["rp"][idx] < 0
        fin = idx[home]
        c["state"][fin] = RETURNED
        c["returned_round"][fin] = r
        self.stats.returned += int((~c["fabricated"][fin]).sum())
        rest = idx[~home]
        if rest.size:
            self._enqueue_return(rest, c["rp"][rest])
            c["state"][rest] = F_RET

    def forge_returns(self, idx, claimed_endpoint: int) -> np.ndarray:
        """Send back fake 'verified' copies claiming ``claimed_endpoint``."""
        idx = np.asarray(idx, dtype=np.int64)
        if idx.size == 0:
            return idx
        c = self.cols
        src, tid, ctr, holder = (c[k][idx].copy() for k in ("src", "tid", "ctr", "holder"))
        paths = self.path[idx].copy()
        new = self._append(
            idx.size, src=src, tid=tid, ctr=ctr, holder=holder, dest=holder,
            state=F_RET, fabricated=True, endpoint=claimed_endpoint, born=c["born"][idx],
        )
        self.path[new] = paths
        self.stats.fabricated += idx.size
        self._enqueue_return(new, ctr)
        self.cols["state"][new] = F_RET
        return new

    # -- connection capabilities -------------------------------------
    def verified_record(self) -> dict[int, set[tuple[int, int]]]:
        """Endpoint -> {(source, token id)} recorded this phase."""
        c = self.cols
        idx = np.flatnonzero(c["recorded"][: self.m])
        out: dict[int, set] = {}
        for e, s, t in zip(c["endpoint"][idx].tolist(), c["src"][idx].tolist(), c["tid"][idx].tolist()):
            out.setdefault(e, set()).add((s, t))
        return out

    def verified_lists(self) -> dict[int, list[tuple[int, int]]]:
        """Source -> [(endpoint, token id)] in return order."""
        c = self.cols
        idx = np.flatnonzero(self.state == RETURNED)
        order = np.lexsort((idx, c["returned_round"][idx]))
        idx = idx[order]
        out: dict[int, list] = {}
        for s, e, t in zip(c["src"][idx].tolist(), c["endpoint"][idx].tolist(), c["tid"][idx].tolist()):
            out.setdefault(s, []).append((e, t))
        return out
