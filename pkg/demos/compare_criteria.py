"""Compare the three criteria on one random desk-scale instance.

Run with ``python3 demos/compare_criteria.py [seed]``.  Each criterion is
solved from the same channel draw; the table shows what the rounded,
certified solution looks like under every metric, so the trade-off between
fairness (MEE), efficiency (EE) and coverage (SUM) is visible side by side.
"""

import sys

import numpy as np

from mgmc.ccp import CcpConfig, solve_instance
from mgmc.criteria import CRITERIA
from mgmc.system import SystemConfig, dbw_to_watts, generate_channels

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
cfg = SystemConfig(M=3, N=10, G=4, P_T=dbw_to_watts(20.0), eps=1.0)
H = generate_channels(cfg, seed).H

print(f"M={cfg.M} antennas, N={cfg.N} users, G={cfg.G} groups, P_T={cfg.P_T:g} W, seed {seed}")
print(f"{'criterion':>9} {'status':>10} {'iters':>5} {'users':>5} {'mee':>9} {'ee':>9} "
      f"{'bits/s/Hz':>9} {'power W':>8}")
for crit in CRITERIA:
    rep = solve_instance(cfg, H, CcpConfig(criterion=crit), seed=seed)
    m = rep.metrics
    print(f"{crit:>9} {rep.status:>10} {rep.iterations:5d} {m.scheduled_users:5d} {m.mee:9.4f} "
          f"{m.ee:9.4f} {m.throughput:9.3f} {m.consumed_power:8.2f}")

    # which users ended up where
    groups = [np.flatnonzero(rep.assignment.eta[:, j]).tolist() for j in range(cfg.G)]
    served = {j: g for j, g in enumerate(groups) if rep.assignment.delta[j]}
    print(f"{'':>9} groups -> users {served}")
