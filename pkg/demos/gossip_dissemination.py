"""How fast one reward bit crosses a line of agents over flaky links.

For paths of increasing length, compare the simulated arrival delay at the
far end with the negative binomial law and count the rows still missing at
the end of a 100-step rollout.
"""

from dualpatrol.analysis import nbinom_cdf, simulate_dissemination
from dualpatrol.comms import FootprintGraph

TRIALS = 20_000

for hops in (1, 2, 3):
    for p in (0.3, 0.8):
        arrival, missing = simulate_dissemination(FootprintGraph.path(hops + 1), p, TRIALS, 100)
        print(f"{hops} hop(s), link prob {p}: mean delay {arrival.mean():6.2f} (law {hops / p:5.2f}), "
              f"rows missing {missing.mean():5.2f}")
        for i in (hops, 2 * hops, 4 * hops):
            print(f"    P(arrived by {i:>2}) = {(arrival <= i).mean():.3f}   law {nbinom_cdf(hops, p, i):.3f}")
