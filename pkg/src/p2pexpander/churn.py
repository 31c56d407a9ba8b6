"""M/M/infinity churn: Poisson arrivals, exponential lifetimes.

A schedule is built once from a :class:`ChurnConfig` and is immutable
afterwards.  Continuous event times are rounded *up* to integer rounds so
that the snapshot at integer time ``t`` contains exactly the nodes whose
continuous arrival is ``<= t`` and whose departure is ``> t``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np

JOIN = "join"
LEAVE = "leave"


class ConfigError(ValueError):
    """Invalid simulation configuration."""


@dataclass(frozen=True)
class ChurnConfig:
    lam: float = 1.0
    n_stable: int = 512
    horizon: int = 2560
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.n_stable < 2:
            raise ConfigError(f"n_stable must be >= 2, got {self.n_stable}")
        if self.horizon < 1:
            raise ConfigError(f"horizon must be >= 1, got {self.horizon}")

    @property
    def mu(self) -> float:
        return self.lam / self.n_stable


@dataclass(frozen=True, order=True)
class ChurnEvent:
    time: int
    kind_rank: int  # 0 = join, 1 = leave; joins sort first within a round
    node: int

    @property
    def kind(self) -> str:
        return JOIN if self.kind_rank == 0 else LEAVE

    def to_json(self) -> str:
        return json.dumps({"time": self.time, "kind": self.kind, "node": self.node})

    @classmethod
    def make(cls, time: int, kind: str, node: int) -> "ChurnEvent":
        if kind not in (JOIN, LEAVE):
            raise ValueError(f"unknown event kind {kind!r}")
        return cls(int(time), 0 if kind == JOIN else 1, int(node))


@dataclass(frozen=True)
class ArrivalWindow:
    t_start: int
    t_end: int
    count: int = 0

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ValueError("t_end must not precede t_start")
        if self.count < 0:
            raise ValueError("count must be non-negative")

    @property
    def length(self) -> int:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class Schedule:
    """Join/leave rounds for every node that arrives by ``cfg.horizon``.

    Node ids are ``0..n_nodes-1`` in arrival order and are never reused.
    ``leave_round`` may exceed the horizon; such nodes have no Leave event.
    """

    cfg: ChurnConfig
    arrival_time: np.ndarray  # continuous
    lifetime: np.ndarray  # continuous
    join_round: np.ndarray
    leave_round: np.ndarray
    _events: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_nodes(self) -> int:
        return int(self.join_round.size)

    @property
    def events(self) -> tuple[ChurnEvent, ...]:
        return self._events

    def __iter__(self) -> Iterator[ChurnEvent]:
        return iter(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def joins_at(self, t: int) -> np.ndarray:
        lo, hi = np.searchsorted(self.join_round, [t, t + 1], side="left")
        return np.arange(lo, hi)

    def alive_count(self, t) -> np.ndarray:
        """Vectorised ``len(alive_set(t))`` for an array of rounds."""
        t = np.asarray(t)
        joined = np.searchsorted(self.join_round, t, side="right")
        left = np.searchsorted(np.sort(self.leave_round), t, side="right")
        return joined - left


def build_schedule(cfg: ChurnConfig) -> Schedule:
    rng = np.random.default_rng([cfg.seed, 0xC4])
    # draw in chunks until past the horizon; expected count is lam * horizon
    chunk = max(64, int(cfg.lam * cfg.horizon * 1.1) + 64)
    parts, total = [], 0.0
    while total <= cfg.horizon:
        gaps = rng.exponential(1.0 / cfg.lam, size=chunk)
        times = total + np.cumsum(gaps)
        parts.append(times)
        total = float(times[-1])
    arrival = np.concatenate(parts)
    arrival = arrival[arrival <= cfg.horizon]
    lifetime = rng.exponential(1.0 / cfg.mu, size=arrival.size)

    join_round = np.ceil(arrival).astype(np.int64)
    leave_round = np.ceil(arrival + lifetime).astype(np.int64)
    events = _events_from_rounds(join_round, leave_round, cfg.horizon)
    return Schedule(cfg, arrival, lifetime, join_round, leave_round, events)


def _events_from_rounds(join_round, leave_round, horizon) -> tuple:
    events = [ChurnEvent(int(t), 0, i) for i, t in enumerate(join_round)]
    events += [
        ChurnEvent(int(t), 1, i) for i, t in enumerate(leave_round) if t <= horizon
    ]
    events.sort()
    return tuple(events)


def alive_set(schedule: Schedule, t: int) -> set[int]:
    """Nodes with ``join <= t < leave``."""
    joined = int(np.searchsorted(schedule.join_round, t, side="right"))
    lr = schedule.leave_round[:joined]
    return set(np.flatnonzero(lr > t).tolist())


def arrivals_in(schedule: Schedule, t_start: int, t_end: int) -> int:
    """Arrivals in the continuous interval ``(t_start, t_end]``."""
    lo, hi = np.searchsorted(schedule.join_round, [t_start + 1, t_end + 1], side="left")
    return int(hi - lo)


@dataclass
class ConcentrationReport:
    windows: list[ArrivalWindow]
    expected: list[int]
    bound: list[float]
    passed: list[bool]

    @property
    def pass_fraction(self) -> float:
        return sum(self.passed) / len(self.passed) if self.passed else 1.0


def validate_arrival_concentration(
    schedule: Schedule, windows: Iterable[ArrivalWindow]
) -> ConcentrationReport:
    """Checks ``|N(t', t) - (t - t')| <= 4 sqrt((t - t') ln n)`` per window."""
    lam = schedule.cfg.lam
    ln_n = math.log(schedule.cfg.n_stable)
    out = ConcentrationReport([], [], [], [])
    for w in windows:
        if w.t_end > schedule.cfg.horizon:
            raise ValueError(f"window {w} extends past the horizon")
        observed = arrivals_in(schedule, w.t_start, w.t_end)
        expected = lam * w.length
        bound = 4.0 * math.sqrt(expected * ln_n)
        out.windows.append(ArrivalWindow(w.t_start, w.t_end, observed))
        out.expected.append(expected)
        out.bound.append(bound)
        out.passed.append(abs(observed - expected) <= bound)
    return out


def with_leave_overrides(schedule: Schedule, overrides: Mapping[int, int]) -> Schedule:
    """Copy of ``schedule`` with some Leave rounds replaced.

    The adversary uses this to extend or truncate a corrupted node's stay.
    A Leave no earlier than the node's Join is required.
    """
    leave = schedule.leave_round.copy()
    for node, t in overrides.items():
        if t <= schedule.join_round[node]:
            raise ValueError(f"override for node {node} precedes its join")
        leave[node] = t
    events = _events_from_rounds(schedule.join_round, leave, schedule.cfg.horizon)
    return Schedule(
        schedule.cfg, schedule.arrival_time, schedule.lifetime, schedule.join_round, leave, events
    )


def dump_jsonl(schedule: Schedule, path) -> None:
    with open(path, "w") as fh:
        for ev in schedule.events:
            fh.write(ev.to_json() + "\n")


def load_jsonl(path) -> list[ChurnEvent]:
    events = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            rec = json.loads(line)
            events.append(ChurnEvent.make(rec["time"], rec["kind"], rec["node"]))
    return events


def check_event_stream(events: Iterable[ChurnEvent]) -> None:
    """Raises ``ValueError`` if Join/Leave pairing or ordering is broken."""
    joined, left = set(), set()
    prev = None
    for ev in events:
        if prev is not None and ev < prev:
            raise ValueError(f"events out of order at {ev}")
        prev = ev
        if ev.kind == JOIN:
            if ev.node in joined:
                raise ValueError(f"node {ev.node} joined twice")
            joined.add(ev.node)
        else:
            if ev.node not in joined or ev.node in left:
                raise ValueError(f"leave of node {ev.node} without a matching join")
            left.add(ev.node)
