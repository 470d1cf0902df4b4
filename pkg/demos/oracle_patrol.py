"""Five agents patrol the default floor plan with the greedy oracle.

Run it with ``python3 demos/oracle_patrol.py [horizon]``. It prints how the
zone averages settle against their thresholds and how far each agent's
gossip-driven multipliers drift from the central reference.
"""

import sys

import numpy as np

from dualpatrol.config import load_config
from dualpatrol.runtime import execute_online


def main(horizon=10_000):
    cfg = load_config("floorplan").with_overrides(oracle=True, horizon=horizon)
    run = execute_online(cfg, seed=0)

    print(f"{cfg.n_agents} agents, {cfg.n_zones} zones, {horizon} steps, disc {cfg.disc} m\n")
    print("zone  threshold  average  margin")
    for m, (c, avg) in enumerate(zip(cfg.c, run.final_average)):
        print(f"{m:>4}  {c:>9.2f}  {avg:>7.3f}  {avg - c:+.3f}")

    gap = np.abs(run.lam - run.lam_central[:, None, :]).max(axis=(1, 2))
    print(f"\nlargest multiplier gap to the central update: {gap.max():.3f}")
    print(f"final central multipliers: {np.round(run.lam_central[-1], 2)}")
    # who talks to whom, as a fraction of steps
    print("\nlink frequency:")
    print(np.array2string(run.comm_frequency, precision=2))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 10_000)
