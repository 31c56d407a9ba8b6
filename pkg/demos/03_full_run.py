"""One full protocol run at n = 512 with a small absorbing adversary.

Loads ``demos/config.json``, runs 5n rounds (about half a minute) and prints
one line per phase.  Outputs land in ``demos/out/full_run``.
"""
from pathlib import Path

from p2pexpander.engine import RunConfig, run

here = Path(__file__).parent
cfg = RunConfig.load(here / "config.json").with_overrides({"out_dir": str(here / "out" / "full_run")})
walk, construct = cfg.params()
print(f"phase length {construct.phase_length} rounds, walk length {walk.rw_length}, "
      f"{walk.numtokens} tokens per node per phase")

res = run(cfg)
print(f"finished {len(res.rounds)} rounds in {res.wall_clock['seconds']:.1f} s, {res.failed_joins} failed joins")
print(" phase  start warm alive byz core   phi   comp  out  in  return")
for r in res.reports:
    phi = "  -  " if r.phi_estimate is None else f"{r.phi_estimate:.3f}"
    ret = "  -" if r.return_success is None else f"{r.return_success:.2f}"
    print(f"{r.phase:6d} {r.t_start:6d} {'yes' if r.warm else ' no':>4} {r.n_alive:5d} {r.n_byzantine:3d} "
          f"{r.core_size:4d} {phi} {r.largest_honest_component:6.3f} {r.max_honest_out:4d} {r.max_honest_in:3d}  {ret}")

# Most tokens die with a departing node on the long return trip; walks that
# stay inside the core come back.
s = res.walk_stats[-1]
print(f"last phase: {s.initiated} tokens started, {s.returned} verified and returned")
print(f"reports and logs written to {cfg.out_dir}")
