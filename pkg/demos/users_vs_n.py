"""Scheduled users as the population grows, averaged over a few channel draws.

``python3 demos/users_vs_n.py`` runs a small sweep through the harness (the
same code path as ``mgmc sweep``) and prints the aggregate table.  Expect SUM
to admit the most users, EE the fewest; a full-size run takes longer, so the
defaults here are deliberately small.
"""

from mgmc.harness import parse_experiment, run_sweep

spec = parse_experiment({
    "system": {"M": 2, "N": 4, "G": 3, "P_T_dBW": 20.0, "eps": 1.0},
    "axis": "N",
    "values": [4, 6, 8],
    "realizations": 3,
    "criteria": ["MEE", "EE", "SUM"],
    "base_seed": 0,
})
_, rows = run_sweep(spec, workers=1)

print(f"{'N':>3} {'crit':>4} {'users':>7} {'mee':>8} {'ee':>8} {'power W':>8} {'conv':>5}")
for r in rows:
    print(f"{r['value']:>3} {r['criterion']:>4} {r['scheduled_users_mean']:7.2f} {r['mee_mean']:8.4f} "
          f"{r['ee_mean']:8.4f} {r['consumed_power_mean']:8.2f} {r['converged_fraction']:5.2f}")
