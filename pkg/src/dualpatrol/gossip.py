"""One-bit max gossip of zone rewards over a rollout.

Each agent keeps a ``T0 x M`` bit matrix whose row ``tau`` estimates the
global reward vector at time ``tau`` of the current rollout. A row is seeded
by the agent's own zone indicators at ``t == tau`` and afterwards can only
gain bits, by OR-ing in the rows its current neighbors held one step
earlier. Buffers are dropped at rollout boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .comms import GraphSample
from .env import FloorPlan, zone_membership


class RolloutMismatchError(ValueError):
    pass


class IncompleteRolloutError(ValueError):
    pass


@dataclass(frozen=True)
class RewardBuffer:
    """Gossip estimates held by one agent during one rollout.

    Row ``i`` of ``bits`` is the estimate of ``r(S_tau)`` for
    ``tau = rollout_start + i``; only the first ``filled`` rows are set.
    """

    agent: int
    rollout_start: int
    bits: np.ndarray
    filled: int = 0

    @classmethod
    def empty(cls, agent: int, rollout_start: int, horizon: int, n_zones: int) -> "RewardBuffer":
        return cls(agent, rollout_start, np.zeros((horizon, n_zones), dtype=bool), 0)

    @property
    def horizon(self) -> int:
        return self.bits.shape[0]

    @property
    def current_time(self) -> int:
        """Latest timestep whose row is set (``rollout_start - 1`` when empty)."""
        return self.rollout_start + self.filled - 1

    def estimate(self, tau: int) -> np.ndarray:
        i = tau - self.rollout_start
        if not 0 <= i < self.filled:
            raise IndexError(f"row for time {tau} is not set")
        return self.bits[i]


def observe_local(buffer: RewardBuffer, t: int, own_position, plan: FloorPlan) -> RewardBuffer:
    """Seed row ``t`` with the agent's own zone indicators."""
    i = t - buffer.rollout_start
    if not 0 <= i < buffer.horizon:
        raise RolloutMismatchError(f"time {t} lies outside the rollout starting at {buffer.rollout_start}")
    if i < buffer.filled:
        raise ValueError(f"row for time {t} is already initialised")
    if i > buffer.filled:
        raise ValueError(f"rows before time {t} are still unset")
    bits = buffer.bits.copy()
    bits[i] = zone_membership(own_position, plan)
    return RewardBuffer(buffer.agent, buffer.rollout_start, bits, buffer.filled + 1)


def spread(bits: np.ndarray, edges: np.ndarray, active: np.ndarray | None = None) -> np.ndarray:
    """One synchronous OR round over undirected edges.

    ``bits`` has shape ``(..., N, K)`` with a bool or unsigned-integer dtype
    (packed bits work as well, OR is bitwise); ``edges`` is ``(E, 2)``;
    ``active`` has shape ``(..., E)`` and defaults to all edges present.
    Every node reads the input snapshot, so information moves one hop.
    """
    out = bits.copy()
    for e, (u, v) in enumerate(np.asarray(edges, dtype=int).reshape(-1, 2)):
        if active is None:
            out[..., u, :] |= bits[..., v, :]
            out[..., v, :] |= bits[..., u, :]
            continue
        on = active[..., e]
        if bits.dtype == bool:
            mask = on[..., None]
        else:
            full = np.iinfo(bits.dtype).max
            mask = np.where(on, full, 0).astype(bits.dtype)[..., None]
        out[..., u, :] |= bits[..., v, :] & mask
        out[..., v, :] |= bits[..., u, :] & mask
    return out


def exchange(buffers: Sequence[RewardBuffer], sample: GraphSample, wire: "WireLog | None" = None) -> list[RewardBuffer]:
    """Merge neighbor estimates for every row set before ``sample.time``.

    All agents read the previous-step snapshot and then all write, so the
    result does not depend on agent order.
    """
    if not buffers:
        return []
    start, filled = buffers[0].rollout_start, buffers[0].filled
    for b in buffers:
        if b.rollout_start != start or b.filled != filled or b.bits.shape != buffers[0].bits.shape:
            raise RolloutMismatchError("buffers belong to different rollouts or times")
    if sample.time != start + filled:
        raise RolloutMismatchError(f"graph sample at t={sample.time} does not follow buffers at t={start + filled - 1}")
    if sample.n_nodes != len(buffers):
        raise ValueError("graph sample and buffer count disagree")
    stacked = np.stack([b.bits for b in buffers])
    if wire is not None:
        wire.record(sample, stacked, start)
    edges = np.array(sample.active_edges, dtype=int).reshape(-1, 2)
    merged = spread(stacked.reshape(len(buffers), -1), edges).reshape(stacked.shape)
    return [RewardBuffer(b.agent, start, merged[n], filled) for n, b in enumerate(buffers)]


def finalize(buffer: RewardBuffer) -> np.ndarray:
    """Per-zone sum of the end-of-rollout estimates, the dual update input."""
    if buffer.filled != buffer.horizon:
        raise IncompleteRolloutError(f"only {buffer.filled} of {buffer.horizon} rows are set")
    return buffer.bits.sum(axis=0, dtype=np.int64)


@dataclass
class WireLog:
    """Delta-encoded wire accounting.

    A sender transmits to a neighbor only the ``(tau, m)`` bits it has not
    already delivered to that neighbor during the current rollout. Since a
    receiver never loses bits within a rollout, this carries exactly the
    information of the full OR message.
    """

    n_agents: int
    keep_events: bool = True
    events: list[tuple[int, int, int, int]] = field(default_factory=list)
    total_bits: int = 0
    _sent: dict = field(default_factory=dict)
    _rollout: int | None = None

    def record(self, sample: GraphSample, stacked: np.ndarray, rollout_start: int):
        if rollout_start != self._rollout:
            self._sent.clear()
            self._rollout = rollout_start
        for u, v in sample.active_edges:
            for s, r in ((u, v), (v, u)):
                prev = self._sent.get((s, r))
                payload = delta_payload(stacked[s], prev)
                self._sent[(s, r)] = stacked[s].copy() if prev is None else prev | stacked[s]
                self.total_bits += int(payload.size)
                if self.keep_events:
                    self.events.append((sample.time, s, r, int(payload.size)))


def delta_payload(sender_bits: np.ndarray, already_sent: np.ndarray | None) -> np.ndarray:
    """Flat ``(tau, m)`` indices of set bits not delivered yet."""
    fresh = sender_bits if already_sent is None else sender_bits & ~already_sent
    return np.flatnonzero(fresh)


def apply_payload(receiver_bits: np.ndarray, payload: np.ndarray) -> np.ndarray:
    out = receiver_bits.copy()
    out.reshape(-1)[payload] = True
    return out
