"""Synchronous round loop that binds the protocol pieces into reproducible runs.

Round ``r`` runs, in order: scheduled leaves, scheduled joins (with the
corruption decision), token delivery and honest forwarding, adversary
actions, and, when ``r`` is a positive multiple of the phase length, the
phase boundary (maintenance, report, token reset, new tokens).
"""
from __future__ import annotations

import csv
import dataclasses
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import ActionCounts, Adversary, AdversaryConfig, AdversaryView
from .churn import ChurnConfig, ConfigError, Schedule, build_schedule
from .construct import (
    ConnRequest,
    ConstructParams,
    Decision,
    JoinStatus,
    accept_policy,
    join,
    phase_boundary,
)
from .entry import EntryManager
from .metrics import (
    PhaseReport,
    conductance_estimate,
    conductance_exact,
    core_extract,
    endpoint_uniformity,
    honest_component_fraction,
    induced,
    write_reports_csv,
)
from .overlay import InvariantViolation, LinkOutcome, Overlay, OverlaySnapshot
from .walk import RETURNED, TokenPool, WalkParams, WalkStats, log2n, write_stats_csv

LOG_LEVELS = ("none", "connections", "full")

# stream keys for derived generators
_JOIN, _BOUNDARY, _ENTRY = 0x10, 0x20, 0xE7


@dataclass(frozen=True)
class ProtocolParams:
    d: int = 4
    eta: int | None = None
    walk_scale: float = 1.0
    a: float = 4.0
    c: int = 4
    numtokens: int | None = None
    max_join_retries: int | None = None
    slack: int = 2


@dataclass(frozen=True)
class RunConfig:
    churn: ChurnConfig = field(default_factory=ChurnConfig)
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    seed: int = 0
    event_log: str = "connections"
    check_invariants: bool = True
    exact_threshold: int = 16
    metrics_every: int = 1
    entry_capacity: int | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.event_log not in LOG_LEVELS:
            raise ConfigError(f"event_log must be one of {LOG_LEVELS}")
        if self.metrics_every < 1:
            raise ConfigError("metrics_every must be >= 1")
        try:
            wp, cp = self.params()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if cp.phase_length < 2 * wp.rw_length:
            raise ConfigError("phase length must be at least twice the walk length")

    def params(self) -> tuple[WalkParams, ConstructParams]:
        n, p = self.churn.n_stable, self.protocol
        wp = WalkParams.for_network(n, p.walk_scale, p.a, p.c, p.numtokens)
        cp = ConstructParams.for_network(n, wp.rw_length, p.d, p.eta, p.slack, p.max_join_retries)
        return wp, cp

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = dict(raw)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            churn = ChurnConfig(**raw.pop("churn", {}))
            protocol = ProtocolParams(**raw.pop("protocol", {}))
            adversary = AdversaryConfig(**raw.pop("adversary", {}))
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return cls(churn=churn, protocol=protocol, adversary=adversary, **raw)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Apply ``{"adversary.beta": 0.01, "seed": 3}``-style overrides."""
        raw = self.to_dict()
        for key, value in overrides.items():
            parts = key.split(".")
            node = raw
            for p in parts[:-1]:
                if p not in node or not isinstance(node[p], dict):
                    raise ConfigError(f"unknown config key {key!r}")
                node = node[p]
            if parts[-1] not in node:
                raise ConfigError(f"unknown config key {key!r}")
            node[parts[-1]] = value
        return RunConfig.from_dict(raw)


@dataclass
class RunResult:
    config: RunConfig
    reports: list[PhaseReport]
    walk_stats: list[WalkStats]
    final_snapshot: OverlaySnapshot
    events: list[str]
    rounds: list[list]
    event_log_path: str | None = None
    wall_clock: dict = field(default_factory=dict)
    failed_joins: int = 0

    def event_text(self) -> str:
        return "".join(line + "\n" for line in self.events)

    def warm_reports(self) -> list[PhaseReport]:
        return [r for r in self.reports if r.warm]


ROUND_COLUMNS = [
    "round", "n_alive", "n_byzantine", "absorbed", "forwarded", "forged",
    "injected", "relayed", "requests",
]


class Simulation:
    def __init__(self, cfg: RunConfig, schedule: Schedule | None = None):
        self.cfg = cfg
        self.n = cfg.churn.n_stable
        seed = cfg.seed
        churn_cfg = dataclasses.replace(cfg.churn, seed=seed)
        self.schedule = schedule if schedule is not None else build_schedule(churn_cfg)
        self.wp, self.cp = cfg.params()
        self.P = self.cp.phase_length
        self.d = cfg.protocol.d
        self.overlay = Overlay(self.d)
        self.entry = EntryManager(
            cfg.entry_capacity or self.n, np.random.default_rng([seed, _ENTRY]), self.d
        )
        self.pool = TokenPool(self.wp, self.overlay, max(1, self.schedule.n_nodes), seed, self._log)
        self.adv = Adversary(cfg.adversary, seed, self.d)
        self.events: list[str] = []
        self.reports: list[PhaseReport] = []
        self.walk_stats: list[WalkStats] = []
        self.rounds: list[list] = []
        self.joined_at: dict[int, int] = {}
        self.left_at: dict[int, int] = {}
        self.failed: set[int] = set()
        self.phase_churned: set[int] = set()
        self.phase_byz: set[int] = set()
        self.phase_failed = 0
        self.phase_actions = 0
        self.prev_snap = self.overlay.snapshot(0)
        self.warm_from = max(3 * math.ceil(math.sqrt(self.n)), self.P)
        leaves: dict[int, list[int]] = {}
        for u, t in enumerate(self.schedule.leave_round.tolist()):
            leaves.setdefault(t, []).append(u)
        self._leaves = leaves

    # -- logging -------------------------------------------------------
    def _log(self, rec: dict) -> None:
        if self.cfg.event_log == "none":
            return
        self.events.append(json.dumps(rec, sort_keys=True, separators=(",", ":")))

    def _byzantine(self) -> frozenset:
        return frozenset(u for u, r in self.overlay.nodes.items() if r.is_byzantine)

    def _view(self, r: int, boundary: bool = False) -> AdversaryView:
        return AdversaryView(r, self.overlay, self.pool, self._byzantine(), boundary)

    # -- round steps -----------------------------------------------------
    def _remove(self, u: int, r: int, reason: str) -> None:
        self.overlay.remove_node(u)
        self.left_at[u] = r
        self.phase_churned.add(u)
        self._log({"round": r, "event": "leave", "node": u, "reason": reason})

    def _leaves_step(self, r: int) -> None:
        for u in self._leaves.get(r, ()):
            rec = self.overlay.nodes.get(u)
            if rec is None:
                continue
            if rec.is_byzantine and self.adv.ignores_leave(u):
                continue
            self._remove(u, r, "churn")
        byz = self._byzantine()
        if byz:
            for u in self.adv.rotation_victims(byz, self.joined_at, len(self.overlay.nodes)):
                self._remove(u, r, "rotation")

    def _join_accept(self, rng):
        ov = self.overlay

        def accept(v: int, req: ConnRequest):
            rec = ov.nodes[v]
            if rec.is_byzantine:
                if self.adv.accepts(v, req):
                    return Decision(req, LinkOutcome.ESTABLISHED, "byzantine")
                return Decision(req, LinkOutcome.REJECTED_FULL, "byzantine_refused")
            return accept_policy(len(rec.in_links), set(), [req], self.d, rng, rec.neighbors)[0]

        return accept

    def _joins_step(self, r: int) -> None:
        sched = self.schedule
        for u in sched.joins_at(r).tolist():
            if sched.leave_round[u] <= r:
                continue  # arrives and leaves within the same round
            rng = np.random.default_rng([self.cfg.seed, _JOIN, r, u])
            self.overlay.add_node(u, r)
            self._log({"round": r, "event": "join", "node": u})
            out = join(u, self.overlay, self.entry, self.cp, self._join_accept(rng), self._log, r)
            if out.status is JoinStatus.FAILED:
                self.overlay.remove_node(u)
                self.failed.add(u)
                self.phase_failed += 1
                self._log({"round": r, "event": "join_failed", "node": u,
                           "attempts": out.attempts, "connections": out.connections})
                continue
            self.joined_at[u] = r
            self.phase_churned.add(u)
            self.entry.register(u)
            if self.adv.decide_corruption(self._view(r), u):
                self.overlay.nodes[u].is_byzantine = True
                self.overlay.version += 1
                self.phase_byz.add(u)
                self._log({"round": r, "event": "corrupt", "node": u})

    def _deliver_messages(self, r: int) -> None:
        # generic mailbox traffic carries nothing honest nodes act on
        self.overlay.deliver(r)

    def _boundary(self, r: int) -> None:
        pool, ov = self.pool, self.overlay
        record = pool.verified_record()
        lists = pool.verified_lists()
        if self.cfg.event_log == "full":
            trip = sorted((e, s, t) for e, st in record.items() for s, t in st)
            self._log({
                "round": r, "event": "verified_batch", "phase": pool.phase,
                "endpoint": [x[0] for x in trip], "source": [x[1] for x in trip],
                "token": [x[2] for x in trip],
            })
        view = self._view(r, True)
        extra = self.adv.connection_requests(view)
        rng = np.random.default_rng([self.cfg.seed, _BOUNDARY, r])
        counters = phase_boundary(
            ov, lists, record, self.d, rng, extra, self.adv.accepts, self._log, r
        )
        phase_idx = len(self.walk_stats)
        report = None
        if phase_idx % self.cfg.metrics_every == 0:
            report = self._report(r)
        stats = pool.reset()
        if self.cfg.check_invariants:
            cons = sum([stats.returned, stats.lost_churn, stats.absorbed_byz,
                        stats.dropped_blacklist, stats.in_transit])
            if cons != stats.initiated:
                raise InvariantViolation(
                    f"token conservation broken in phase {stats.phase}: {stats}",
                    {"round": r},
                )
        self.walk_stats.append(stats)
        if report is not None:
            report.blacklist_events = stats.blacklist_events
            self.reports.append(report)
        for rec in ov.nodes.values():
            rec.is_new = False
        self.prev_snap = ov.snapshot(r)
        self.phase_churned = set()
        self.phase_byz = set()
        self.phase_failed = 0
        self.phase_actions = 0
        honest = [u for u in sorted(ov.nodes) if not ov.nodes[u].is_byzantine]
        pool.initiate(honest, r)
        self._log({"round": r, "event": "phase_boundary", "phase": pool.phase,
                   "n_alive": len(ov.nodes), "requests": counters.get("requests", 0),
                   "accepted": counters.get("accepted", 0), "drops": counters.get("drops", 0)})

    def _report(self, r: int) -> PhaseReport:
        pool, ov = self.pool, self.overlay
        start = self.prev_snap
        adj0 = start.adjacency()
        byz = set(start.byzantine) | set(self._byzantine()) | self.phase_byz
        core = core_extract(adj0, byz, self.phase_churned)
        core_adj = induced(adj0, core)
        lg = log2n(self.n)
        n_byz = len(self._byzantine())
        kappa = (n_byz + len(self.phase_churned)) * lg / len(core) if core else None

        own = ~pool.fabricated
        src = pool.src
        in_core_src = own & np.isin(src, np.fromiter(core, dtype=np.int64, count=len(core)))
        tokens_in_core = int(in_core_src.sum())
        ok = in_core_src & pool.recorded
        idx = np.flatnonzero(ok)
        if idx.size:
            core_mask = np.zeros(self.pool.K + 1, dtype=bool)
            core_mask[list(core)] = True
            paths = pool.path[idx]
            in_core = core_mask[paths].all(axis=1)
            idx = idx[in_core]
        in_core_walks = int(idx.size)
        return_success = (
            float((pool.state[idx] == RETURNED).mean()) if in_core_walks else None
        )
        tv = endpoint_uniformity(pool.endpoint[idx].tolist(), core_adj) if in_core_walks else None

        est = conductance_estimate(core_adj) if len(core) >= 2 else None
        exact = None
        if 2 <= len(core) <= self.cfg.exact_threshold:
            exact = conductance_exact(core_adj, self.cfg.exact_threshold)

        honest = [rec for rec in ov.nodes.values() if not rec.is_byzantine]
        adj_now = {u: rec.neighbors for u, rec in ov.nodes.items()}
        initiated = int(own.sum())
        leaked = float((pool.touched_byz & own).sum() / initiated) if initiated else None
        return PhaseReport(
            phase=len(self.walk_stats),
            t_start=start.time,
            t_end=r,
            warm=start.time >= self.warm_from,
            n_alive=len(ov.nodes),
            n_byzantine=n_byz,
            n_churned=len(self.phase_churned),
            core_size=len(core),
            kappa=kappa,
            tokens_in_core=tokens_in_core,
            phi_estimate=None if est is None else est.phi,
            phi_lower=None if est is None else est.lower,
            phi_upper=None if est is None else est.upper,
            phi_exact=exact,
            phi_confidence="none" if est is None else est.confidence,
            largest_honest_component=honest_component_fraction(adj_now, self._byzantine()),
            max_honest_out=max((len(h.out_links) for h in honest), default=0),
            max_honest_in=max((len(h.in_links) for h in honest), default=0),
            endpoint_tv=tv,
            in_core_walks=in_core_walks,
            return_success=return_success,
            leaked_fraction=leaked,
            failed_joins=self.phase_failed,
            blacklist_events=0,
            adversary_actions=self.phase_actions,
        )

    def _check(self, r: int) -> None:
        ov = self.overlay
        departed = [u for u, t in self.left_at.items() if t == r]
        ov.check_invariants(departed)
        n_byz = sum(1 for rec in ov.nodes.values() if rec.is_byzantine)
        if n_byz > self.adv.budget(len(ov.nodes)) + 1e-9:
            raise InvariantViolation(f"Byzantine budget exceeded at round {r}", {"round": r})

    def step(self, r: int) -> None:
        self._leaves_step(r)
        self._joins_step(r)
        self._deliver_messages(r)
        self.pool.step(r)
        byz = self._byzantine()
        if byz:
            acts = self.adv.round_actions(AdversaryView(r, self.overlay, self.pool, byz))
        else:
            acts = ActionCounts()
        self.phase_actions += acts.total()
        self.rounds.append([
            r, len(self.overlay.nodes), len(byz), acts.absorbed, acts.forwarded,
            acts.forged, acts.injected, acts.relayed, self.adv.counts.requests,
        ])
        if r > 0 and r % self.P == 0:
            self._boundary(r)
        if self.cfg.check_invariants:
            self._check(r)

    def run(self) -> RunResult:
        t0 = time.perf_counter()
        cfg = self.cfg
        self._log({"round": 0, "event": "run_start", "d": self.d, "n": self.n,
                   "phase_length": self.P, "cap": self.wp.cap, "numtokens": self.wp.numtokens,
                   "rw_length": self.wp.rw_length, "seed": cfg.seed})
        for r in range(1, cfg.churn.horizon + 1):
            try:
                self.step(r)
            except InvariantViolation as exc:
                exc.dump.setdefault("round", r)
                exc.dump["snapshot"] = self.overlay.snapshot(r).to_edgelist()
                raise
        wall = time.perf_counter() - t0
        result = RunResult(
            config=cfg,
            reports=self.reports,
            walk_stats=self.walk_stats,
            final_snapshot=self.overlay.snapshot(cfg.churn.horizon),
            events=self.events,
            rounds=self.rounds,
            wall_clock={"seconds": wall, "rounds": cfg.churn.horizon},
            failed_joins=len(self.failed),
        )
        if cfg.out_dir:
            write_outputs(result, cfg.out_dir)
        return result


def run(config: RunConfig, schedule: Schedule | None = None) -> RunResult:
    return Simulation(config, schedule).run()


def write_outputs(result: RunResult, out_dir) -> dict[str, str]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "events": out / "events.jsonl",
        "reports": out / "phase_reports.csv",
        "walks": out / "walk_stats.csv",
        "rounds": out / "rounds.csv",
        "snapshot": out / "final_snapshot.txt",
        "config": out / "config.json",
        "summary": out / "summary.json",
    }
    paths["events"].write_text(result.event_text())
    write_reports_csv(result.reports, paths["reports"])
    write_stats_csv(result.walk_stats, paths["walks"])
    with open(paths["rounds"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROUND_COLUMNS)
        w.writerows(result.rounds)
    paths["snapshot"].write_text(result.final_snapshot.to_edgelist())
    paths["config"].write_text(json.dumps(result.config.to_dict(), indent=2, sort_keys=True))
    summary = {
        "phases": len(result.reports),
        "warm_phases": len(result.warm_reports()),
        "failed_joins": result.failed_joins,
        "wall_clock": result.wall_clock,
    }
    paths["summary"].write_text(json.dumps(summary, indent=2, sort_keys=True))
    result.event_log_path = str(paths["events"])
    return {k: str(v) for k, v in paths.items()}


# -- sweeps ---------------------------------------------------------------

NUMERIC_COLUMNS = [
    c for c in PhaseReport.columns() if c not in ("phase", "t_start", "t_end", "warm", "phi_confidence")
]


def expand_grid(grid: dict[str, list]) -> list[dict]:
    if not grid:
        raise ConfigError("parameter grid must not be empty")
    keys = sorted(grid)
    for k in keys:
        if not isinstance(grid[k], list) or not grid[k]:
            raise ConfigError(f"grid entry {k!r} must be a non-empty list")
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def parse_seeds(text: str) -> list[int]:
    """``"3..7"`` (inclusive) or a comma list ``"1,4,9"``."""
    text = text.strip()
    if ".." in text:
        a, b = text.split("..", 1)
        lo, hi = int(a), int(b)
        if hi < lo:
            raise ConfigError(f"empty seed range {text!r}")
        return list(range(lo, hi + 1))
    return [int(x) for x in text.split(",") if x.strip()]


@dataclass
class SweepResult:
    rows: list[dict]
    summary: list[dict]
    failures: list[dict]


def sweep(
    template: RunConfig,
    grid: dict[str, list],
    seeds: list[int],
    out_dir=None,
    workers: int = 1,
) -> SweepResult:
    """Cartesian product of ``grid`` x ``seeds``; one row per (cell, seed, phase)."""
    cells = expand_grid(grid)
    jobs = [(ci, cell, s) for ci, cell in enumerate(cells) for s in seeds]
    results = []
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as ex:
            results = list(ex.map(_sweep_job, [(template, cell, s) for _, cell, s in jobs]))
    else:
        results = [_sweep_job((template, cell, s)) for _, cell, s in jobs]

    rows, failures = [], []
    for (ci, cell, s), (reports, err) in zip(jobs, results):
        if err is not None:
            failures.append({"cell": ci, **cell, "seed": s, "error": err})
            continue
        for rep in reports:
            row = {"cell": ci, **{k: cell[k] for k in sorted(cell)}, "seed": s}
            row.update(dataclasses.asdict(rep))
            rows.append(row)

    summary = []
    for ci, cell in enumerate(cells):
        mine = [r for r in rows if r["cell"] == ci]
        phases = sorted({r["phase"] for r in mine})
        for ph in phases:
            sel = [r for r in mine if r["phase"] == ph]
            out = {"cell": ci, **{k: cell[k] for k in sorted(cell)}, "phase": ph, "n_seeds": len(sel)}
            for col in NUMERIC_COLUMNS:
                vals = [float(r[col]) for r in sel if r[col] is not None]
                out[f"{col}_mean"] = float(np.mean(vals)) if vals else None
                out[f"{col}_min"] = min(vals) if vals else None
                out[f"{col}_max"] = max(vals) if vals else None
            summary.append(out)

    res = SweepResult(rows, summary, failures)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        _write_dicts(rows, out / "sweep_runs.csv")
        _write_dicts(summary, out / "sweep_summary.csv")
        (out / "sweep_failures.json").write_text(json.dumps(failures, indent=2))
    return res


def _sweep_job(args):
    template, cell, seed = args
    try:
        cfg = template.with_overrides({**cell, "seed": seed, "out_dir": None})
        return run(cfg).reports, None
    except (ConfigError, InvariantViolation, ValueError) as exc:
        return [], f"{type(exc).__name__}: {exc}"


def _write_dicts(rows: list[dict], path) -> None:
    cols: list[str] = []
    for r in rows:
        for k in r:
            if k not in cols:
                cols.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})
