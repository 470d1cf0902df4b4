"""Stochastic communication graphs.

Two edge models share one sampling entry point:

* :class:`BernoulliModel` keeps every footprint edge independently with
  probability ``p`` at every timestep.
* :class:`ProximityModel` links two agents when they see each other or are
  within ``disc`` meters, walls notwithstanding.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .env import ConfigurationError, FloorPlan
from .rng import counter_stream


def _pair(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class FootprintGraph:
    n_nodes: int
    edges: tuple[tuple[int, int], ...]

    def __post_init__(self):
        clean = []
        for u, v in self.edges:
            u, v = int(u), int(v)
            if u == v:
                raise ConfigurationError(f"self-loop on node {u}")
            if not (0 <= u < self.n_nodes and 0 <= v < self.n_nodes):
                raise ConfigurationError(f"edge {(u, v)} references a missing node")
            clean.append(_pair(u, v))
        object.__setattr__(self, "edges", tuple(sorted(set(clean))))
        if self.n_nodes > 1 and len(_bfs(self.n_nodes, self.edges, 0)) < self.n_nodes:
            raise ConfigurationError("footprint graph must be connected")

    @classmethod
    def complete(cls, n: int) -> "FootprintGraph":
        return cls(n, tuple((u, v) for u in range(n) for v in range(u + 1, n)))

    @classmethod
    def path(cls, n: int) -> "FootprintGraph":
        return cls(n, tuple((u, u + 1) for u in range(n - 1)))

    @classmethod
    def from_edges(cls, n: int, edges: Iterable[Sequence[int]]) -> "FootprintGraph":
        return cls(n, tuple(tuple(e) for e in edges))

    @property
    def edge_array(self) -> np.ndarray:
        return np.array(self.edges, dtype=int).reshape(-1, 2)


def _bfs(n: int, edges: Sequence[tuple[int, int]], source: int) -> dict[int, int]:
    adj: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    hops = {source: 0}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in hops:
                hops[v] = hops[u] + 1
                queue.append(v)
    return hops


def diameter(g: FootprintGraph) -> int:
    """Largest shortest-path hop count over all node pairs."""
    best = 0
    for s in range(g.n_nodes):
        hops = _bfs(g.n_nodes, g.edges, s)
        if len(hops) < g.n_nodes:
            raise ConfigurationError("diameter of a disconnected graph is undefined")
        best = max(best, max(hops.values()))
    return best


def eccentric_pair(g: FootprintGraph) -> tuple[int, int]:
    """A node pair realising the diameter (lowest indices first)."""
    best, pair = -1, (0, 0)
    for s in range(g.n_nodes):
        hops = _bfs(g.n_nodes, g.edges, s)
        far = max(hops, key=lambda v: (hops[v], -v))
        if hops[far] > best:
            best, pair = hops[far], (s, far)
    return pair


@dataclass(frozen=True)
class GraphSample:
    time: int
    n_nodes: int
    active_edges: tuple[tuple[int, int], ...]

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=bool)
        for u, v in self.active_edges:
            a[u, v] = a[v, u] = True
        return a


def neighbors(sample: GraphSample, n: int) -> set[int]:
    out = set()
    for u, v in sample.active_edges:
        if u == n:
            out.add(v)
        elif v == n:
            out.add(u)
    return out


@dataclass(frozen=True)
class BernoulliModel:
    footprint: FootprintGraph
    p: float
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        if not 0 < self.p <= 1:
            raise ConfigurationError(f"edge probability must lie in (0, 1], got {self.p}")

    @property
    def n_nodes(self) -> int:
        return self.footprint.n_nodes


@dataclass(frozen=True)
class ProximityModel:
    plan: FloorPlan
    n_nodes: int
    disc: float = 5.0

    def __post_init__(self):
        if not self.disc > 0:
            raise ConfigurationError(f"disc size must be positive, got {self.disc}")

    @property
    def footprint(self) -> FootprintGraph:
        # any pair may meet, so the potential-connectivity graph is complete
        return FootprintGraph.complete(self.n_nodes)


GraphModel = BernoulliModel | ProximityModel


def sample(model: GraphModel, t: int, positions: np.ndarray | None = None) -> GraphSample:
    """Active edges at timestep ``t``; a pure function of its arguments."""
    if isinstance(model, BernoulliModel):
        edges = model.footprint.edges
        if model.p >= 1.0:
            return GraphSample(t, model.n_nodes, edges)
        draw = counter_stream(model.seed, "graph", t, model.stream_id).random(len(edges))
        return GraphSample(t, model.n_nodes, tuple(e for e, u in zip(edges, draw) if u < model.p))
    if isinstance(model, ProximityModel):
        if positions is None:
            raise ValueError("the proximity model needs agent positions")
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        if len(pos) != model.n_nodes:
            raise ValueError(f"expected {model.n_nodes} positions, got {len(pos)}")
        rows = pos.tolist()
        blocked = model.plan._wallset.blocked
        active = []
        for u in range(model.n_nodes):
            xu, yu = rows[u]
            for v in range(u + 1, model.n_nodes):
                xv, yv = rows[v]
                if math.hypot(xu - xv, yu - yv) <= model.disc or not blocked(xu, yu, xv, yv):
                    active.append((u, v))
        return GraphSample(t, model.n_nodes, tuple(active))
    raise TypeError(f"unsupported graph model {type(model).__name__}")
