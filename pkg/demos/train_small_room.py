"""Train one agent to split its time between two zones, then run it.

Uses the ``smoke`` config (one agent, a 6 x 4 m room, two zones that must
each be occupied 40% of the time). Training takes a few seconds.
"""

import numpy as np

from dualpatrol.config import load_config
from dualpatrol.policy import action_distribution
from dualpatrol.runtime import execute_online, train_offline

cfg = load_config("smoke")
params, log = train_offline(cfg)
first, last = log.entries[0]["mean_return"], log.entries[-1]["mean_return"]
print(f"trained {cfg.episodes} episodes: batch return {first:+.3f} -> {last:+.3f}")

# the policy reads the multipliers: push one up and it should head for that zone
for lam in ([1.0, 0.0], [0.0, 1.0]):
    probs = [np.round(action_distribution(params[0], tile, lam), 2) for tile in range(2)]
    print(f"lam={lam}: P(zone | tile 0) = {probs[0]}, P(zone | tile 1) = {probs[1]}")

run = execute_online(cfg, params, seed=0)
print(f"\nexecution over {run.horizon} steps")
for m, (c, avg) in enumerate(zip(cfg.c, run.final_average)):
    print(f"zone {m}: average {avg:.3f} vs threshold {c}")
