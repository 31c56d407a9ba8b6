"""Churn on its own: how many nodes are alive, and how arrivals bunch up.

Run with ``python demos/01_churn.py``.
"""
import numpy as np

from p2pexpander.churn import ArrivalWindow, ChurnConfig, build_schedule, validate_arrival_concentration

n = 1000
schedule = build_schedule(ChurnConfig(lam=1.0, n_stable=n, horizon=5 * n, seed=1))
print(f"{schedule.n_nodes} nodes arrive over {5 * n} rounds")

# The population fills up like 1 - exp(-t/n) and then hovers around n.
for t in (100, 500, 1000, 2000, 3000, 4000, 5000):
    print(f"  round {t:5d}: {int(schedule.alive_count(t)):5d} alive")

sizes = schedule.alive_count(np.arange(3000, 5001))
print(f"late rounds: min {sizes.min()}  max {sizes.max()}  (band is [{0.75 * n:.0f}, {1.25 * n:.0f}])")

# Arrivals in a window of length n stay within 4 sqrt(n ln n) of n.
windows = [ArrivalWindow(k * n, (k + 1) * n) for k in range(5)]
rep = validate_arrival_concentration(schedule, windows)
for w, bound in zip(rep.windows, rep.bound):
    print(f"  window [{w.t_start}, {w.t_end}): {w.count} arrivals, allowed deviation {bound:.0f}")

# Lifetimes are exponential with mean n, so the median is n ln 2.
print(f"median lifetime {np.median(schedule.lifetime):.0f} vs n ln 2 = {n * np.log(2):.0f}")
