"""Named, splittable random streams.

Every stochastic source (graph sampling, action sampling, environment
resets, training multipliers, synthetic occupancy) draws from its own
Philox stream keyed by ``(seed, stream name, *extra)``, so perturbing one
source never shifts the draws of another.
"""

from __future__ import annotations

import numpy as np

STREAMS = {
    "graph": 1,
    "policy": 2,
    "env": 3,
    "lambda": 4,
    "occupancy": 5,
    "init": 6,
    "montecarlo": 7,
}


def _key(seed: int, name: str, extra: tuple[int, ...]) -> np.ndarray:
    try:
        sid = STREAMS[name]
    except KeyError:
        raise ValueError(f"unknown random stream {name!r}") from None
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(sid, *map(int, extra)))
    return ss.generate_state(2, dtype=np.uint64)


def stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Sequential generator for one named source."""
    return np.random.Generator(np.random.Philox(key=_key(seed, name, extra)))


def counter_stream(seed: int, name: str, counter: int, *extra: int) -> np.random.Generator:
    """Generator positioned by an explicit counter (e.g. the timestep).

    Draws depend only on ``(seed, name, counter, extra)``, never on how many
    values were consumed before, which makes per-timestep samples pure.
    """
    ctr = np.array([0, 0, int(counter), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed, name, extra), counter=ctr))
