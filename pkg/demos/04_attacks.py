"""Adversary strategies side by side on a small network.

Each run uses n = 256 and beta = 0.1, which allows about three Byzantine nodes
at a time.  The table shows the worst warm phase of each run.
"""
from p2pexpander.engine import RunConfig, run

base = {
    "churn": {"n_stable": 256, "horizon": 3 * 256},
    "protocol": {"walk_scale": 1 / 8},
    "adversary": {"beta": 0.1, "corruption": "random"},
    "seed": 5,
}

print(f"{'strategy':12s} {'byz':>4s} {'min core':>9s} {'min phi':>8s} {'min comp':>9s} {'blacklists':>10s}")
for strategy in ("silent", "absorb", "token_flood", "walk_bias", "conn_flood"):
    cfg = RunConfig.from_dict(base).with_overrides({"adversary.strategy": strategy})
    warm = run(cfg).warm_reports()
    print(f"{strategy:12s} {max(r.n_byzantine for r in warm):4d} "
          f"{min(r.core_size for r in warm):9d} "
          f"{min(r.phi_estimate or 0.0 for r in warm):8.3f} "
          f"{min(r.largest_honest_component for r in warm):9.3f} "
          f"{sum(r.blacklist_events for r in warm):10d}")

# walk_bias forges short returns for tokens it receives; those claims survive
# churn better than honest ones and win many of the replacement links.
