"""How far is the CCP heuristic from the exhaustive optimum on a tiny instance?

With N=3 users and G=2 groups every joint assignment can be enumerated and
precoded optimally (up to local restarts).  The heuristic's own solution is
fed to the search as an incumbent, so the oracle can never report a worse
score; the gap column is the relative shortfall of the heuristic.
"""

import sys

from mgmc.ccp import CcpConfig
from mgmc.harness import RunConfig, oracle_report
from mgmc.system import SystemConfig, dbw_to_watts, generate_channels

seeds = range(int(sys.argv[1]) if len(sys.argv) > 1 else 3)
print(f"{'seed':>4} {'crit':>4} {'heuristic':>10} {'oracle':>10} {'gap':>7} {'assignments':>11}")
for s in seeds:
    cfg = SystemConfig(M=2, N=3, G=2, P_T=dbw_to_watts(10.0), eps=1.0)
    rc = RunConfig(cfg, CcpConfig(), s, generate_channels(cfg, s))
    for crit, r in oracle_report(rc, restarts=4)["criteria"].items():
        print(f"{s:4d} {crit:>4} {r['heuristic']:10.4f} {r['oracle']:10.4f} {r['gap']:7.3f} "
              f"{r['assignments']:11d}")
