"""Contractive projected dual updates, centralized and gossip-driven."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class DualConfig:
    alpha: float
    eta: float
    rollout: int
    thresholds: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(c) for c in self.thresholds))
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if int(self.rollout) < 1:
            raise ValueError(f"rollout length must be >= 1, got {self.rollout}")
        c = np.asarray(self.thresholds)
        if (c < 0).any() or (c >= 1).any():
            raise ValueError("thresholds must lie in [0, 1)")

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=float)

    @property
    def n_zones(self) -> int:
        return len(self.thresholds)


@dataclass(frozen=True)
class Multipliers:
    values: np.ndarray
    rollout_index: int = 0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if (v < 0).any():
            raise ValueError("multipliers must be nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, n_zones: int) -> "Multipliers":
        return cls(np.zeros(n_zones))


def _contract(lam: Multipliers, deficit: np.ndarray, cfg: DualConfig) -> Multipliers:
    # deficit = T0 * c - (summed rewards); shared by both updates so that
    # perfect estimates reproduce the centralized result bit for bit
    raw = (1.0 - cfg.alpha) * lam.values + (cfg.eta / cfg.rollout) * deficit
    return Multipliers(np.maximum(raw, 0.0), lam.rollout_index + 1)


def central_update(lam: Multipliers, reward_trace, cfg: DualConfig) -> Multipliers:
    """``[(1 - alpha) lam + eta/T0 * sum_tau (c - r_tau)]_+`` from the true rewards."""
    trace = np.asarray(reward_trace)
    if trace.shape != (cfg.rollout, cfg.n_zones):
        raise ValueError(f"reward trace must have shape {(cfg.rollout, cfg.n_zones)}, got {trace.shape}")
    sums = trace.sum(axis=0, dtype=np.int64) if trace.dtype.kind in "biu" else trace.sum(axis=0)
    return _contract(lam, cfg.rollout * cfg.c - sums, cfg)


def distributed_update(lam: Multipliers, estimate_sums, cfg: DualConfig, rollout_index: int | None = None) -> Multipliers:
    """Same recursion driven by an agent's end-of-rollout gossip sums."""
    if rollout_index is not None and rollout_index != lam.rollout_index:
        raise ValueError(f"estimates from rollout {rollout_index} cannot update multipliers at rollout {lam.rollout_index}")
    sums = np.asarray(estimate_sums)
    if sums.shape != (cfg.n_zones,):
        raise ValueError(f"estimate sums must have shape {(cfg.n_zones,)}")
    return _contract(lam, cfg.rollout * cfg.c - sums, cfg)


def norm_bound(cfg: DualConfig, n_zones: int | None = None) -> float:
    """Almost-sure bound ``eta sqrt(M) / alpha`` on the multiplier norm from zero."""
    m = cfg.n_zones if n_zones is None else n_zones
    return cfg.eta * math.sqrt(m) / cfg.alpha


def average_bound(cfg: DualConfig, n_zones: int | None = None) -> float:
    """Asymptotic bound ``eta sqrt(M / alpha)`` on running multiplier averages."""
    m = cfg.n_zones if n_zones is None else n_zones
    return cfg.eta * math.sqrt(m / cfg.alpha)
