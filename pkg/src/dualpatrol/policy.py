"""Policies over the augmented state (tile, multipliers).

The parametric policy is a softmax over ``M`` zone logits produced by a
one-hidden-layer ReLU network whose input is the one-hot tile concatenated
with the multipliers scaled by ``lambda_max``. Gradients are written out by
hand; ``tests/test_policy.py`` checks them against finite differences.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import FloorPlan

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W1", "b1", "W2", "b2")


class OffPolicyError(ValueError):
    """Traces were generated by different parameters than the ones updated."""


@dataclass
class PolicyParams:
    W1: np.ndarray  # (H, D)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (M, H)
    b2: np.ndarray  # (M,)
    n_tiles: int
    lambda_max: float = 10.0
    weight_cap: float = 10.0

    @property
    def n_zones(self) -> int:
        return self.W2.shape[0]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            **{k: v.copy() for k, v in self.arrays().items()},
            n_tiles=self.n_tiles,
            lambda_max=self.lambda_max,
            weight_cap=self.weight_cap,
        )

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for k in PARAM_NAMES:
            h.update(np.ascontiguousarray(getattr(self, k), dtype=np.float64).tobytes())
        return h.hexdigest()

    def flat(self) -> np.ndarray:
        return np.concatenate([getattr(self, k).ravel() for k in PARAM_NAMES])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, i = self.copy(), 0
        for k in PARAM_NAMES:
            a = getattr(out, k)
            a[...] = vec[i:i + a.size].reshape(a.shape)
            i += a.size
        return out

    def to_dict(self, config_hash: str = "") -> dict:
        return {
            "version": CHECKPOINT_VERSION,
            "n_tiles": self.n_tiles,
            "n_zones": self.n_zones,
            "hidden": self.hidden,
            "lambda_max": self.lambda_max,
            "weight_cap": self.weight_cap,
            "config_hash": config_hash,
            "shapes": {k: list(getattr(self, k).shape) for k in PARAM_NAMES},
            "weights": {k: getattr(self, k).ravel().tolist() for k in PARAM_NAMES},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyParams":
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
        arrays = {
            k: np.asarray(data["weights"][k], dtype=float).reshape(data["shapes"][k]) for k in PARAM_NAMES
        }
        return cls(**arrays, n_tiles=int(data["n_tiles"]), lambda_max=float(data["lambda_max"]),
                   weight_cap=float(data["weight_cap"]))


def save_checkpoint(params: PolicyParams, path: str | Path, config_hash: str = "") -> None:
    Path(path).write_text(json.dumps(params.to_dict(config_hash), sort_keys=True))


def load_checkpoint(path: str | Path) -> PolicyParams:
    return PolicyParams.from_dict(json.loads(Path(path).read_text()))


def init_params(n_tiles: int, n_zones: int, hidden: int, rng: np.random.Generator,
                lambda_max: float = 10.0, weight_cap: float = 10.0, output_scale: float = 0.01) -> PolicyParams:
    """He-initialised hidden layer, near-zero output layer (almost uniform policy)."""
    d = n_tiles + n_zones
    return PolicyParams(
        W1=rng.normal(0.0, np.sqrt(2.0 / d), size=(hidden, d)),
        b1=np.zeros(hidden),
        W2=rng.normal(0.0, output_scale, size=(n_zones, hidden)),
        b2=np.zeros(n_zones),
        n_tiles=n_tiles,
        lambda_max=lambda_max,
        weight_cap=weight_cap,
    )


def encode_input(params: PolicyParams, tile, lam) -> np.ndarray:
    """Rows of ``[one_hot(tile), lam / lambda_max]``; accepts scalars or batches."""
    tiles = np.atleast_1d(np.asarray(tile, dtype=int))
    lam = np.atleast_2d(np.asarray(lam, dtype=float))
    if (lam < 0).any():
        raise ValueError("multipliers must be nonnegative")
    if ((tiles < 0) | (tiles >= params.n_tiles)).any():
        raise ValueError("tile index out of range")
    lam = np.broadcast_to(lam, (len(tiles), lam.shape[1]))
    x = np.zeros((len(tiles), params.input_dim))
    x[np.arange(len(tiles)), tiles] = 1.0
    x[:, params.n_tiles:] = lam / params.lambda_max
    return x


def forward(params: PolicyParams, x: np.ndarray):
    pre = x @ params.W1.T + params.b1
    h = np.maximum(pre, 0.0)
    logits = h @ params.W2.T + params.b2
    return logits, pre, h


def softmax(logits: np.ndarray) -> np.ndarray:
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite policy logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def action_distribution(params: PolicyParams, tile: int, lam) -> np.ndarray:
    logits, _, _ = forward(params, encode_input(params, tile, lam))
    return softmax(logits)[0]


def log_prob(params: PolicyParams, x: np.ndarray, actions) -> np.ndarray:
    logits, _, _ = forward(params, np.atleast_2d(x))
    z = logits - logits.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1))
    a = np.atleast_1d(np.asarray(actions, dtype=int))
    return z[np.arange(len(a)), a] - lse


def score_gradient(params: PolicyParams, x: np.ndarray, actions, weights=None) -> dict[str, np.ndarray]:
    """``sum_i w_i * grad log pi(a_i | x_i)`` by backpropagation.

    With ``weights=None`` every sample has weight one.
    """
    x = np.atleast_2d(x)
    a = np.atleast_1d(np.asarray(actions, dtype=int))
    w = np.ones(len(a)) if weights is None else np.asarray(weights, dtype=float)
    logits, pre, h = forward(params, x)
    delta = -softmax(logits)
    delta[np.arange(len(a)), a] += 1.0
    delta *= w[:, None]
    dpre = (delta @ params.W2) * (pre > 0)
    return {
        "W1": dpre.T @ x,
        "b1": dpre.sum(axis=0),
        "W2": delta.T @ h,
        "b2": delta.sum(axis=0),
    }


def joint_action_distribution(params: Sequence[PolicyParams], tiles: Sequence[int], lam) -> np.ndarray:
    """Product of the agents' marginals as an ``M x ... x M`` array (one axis per agent)."""
    joint = np.ones(())
    for p, tile in zip(params, tiles):
        joint = np.multiply.outer(joint, action_distribution(p, tile, lam))
    return joint


def weighted_reward(r, lam, c) -> float:
    """``lam . (r - c)``."""
    r, lam, c = (np.asarray(v, dtype=float) for v in (r, lam, c))
    if not r.shape == lam.shape == c.shape:
        raise ValueError("reward, multipliers and thresholds must share one shape")
    return float(lam @ (r - c))


@dataclass
class EpisodeTrace:
    """One on-policy episode of a single learner.

    ``rewards[t]`` is the global reward vector observed after ``actions[t]``
    was taken, i.e. ``r(S_{t+1})``.
    """

    agent: int
    tiles: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    lam: np.ndarray
    thresholds: np.ndarray
    fingerprint: str

    @property
    def horizon(self) -> int:
        return len(self.actions)

    def weighted(self) -> np.ndarray:
        return (self.rewards - self.thresholds) @ self.lam


def centered_reward_to_go(weighted: np.ndarray) -> np.ndarray:
    """``Q_t = sum_{t' >= t} (w_t' - mean(w))``, the critic-free advantage."""
    w = np.asarray(weighted, dtype=float)
    centered = w - w.mean()
    return np.cumsum(centered[::-1])[::-1]


class Adam:
    """Optional adaptive step (ascent). Plain SGA is the default elsewhere."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def direction(self, grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        self.t += 1
        out = {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g)) * self.beta1 + (1 - self.beta1) * g
            v = self.v.get(k, np.zeros_like(g)) * self.beta2 + (1 - self.beta2) * g * g
            self.m[k], self.v[k] = m, v
            mh = m / (1 - self.beta1**self.t)
            vh = v / (1 - self.beta2**self.t)
            out[k] = mh / (np.sqrt(vh) + self.eps)
        return out


def policy_gradient(params: PolicyParams, traces: Sequence[EpisodeTrace]) -> dict[str, np.ndarray]:
    """Batch estimate of the learner's local Lagrangian gradient."""
    if not traces:
        raise ValueError("need at least one trace")
    fp = params.fingerprint()
    grads = {k: np.zeros_like(v) for k, v in params.arrays().items()}
    for tr in traces:
        if tr.fingerprint != fp:
            raise OffPolicyError("trace was generated by different parameters")
        q = centered_reward_to_go(tr.weighted())
        x = encode_input(params, tr.tiles, tr.lam)
        g = score_gradient(params, x, tr.actions, q / tr.horizon)
        for k in grads:
            grads[k] += g[k]
    for k in grads:
        grads[k] /= len(traces)
    return grads


def policy_gradient_step(params: PolicyParams, traces: Sequence[EpisodeTrace], learning_rate: float,
                         optimizer: Adam | None = None) -> PolicyParams:
    """One ascent step; returns new parameters and leaves ``params`` untouched."""
    grads = policy_gradient(params, traces)
    if optimizer is not None:
        grads = optimizer.direction(grads)
    out = params.copy()
    with np.errstate(invalid="ignore", over="ignore"):
        for k, g in grads.items():
            a = getattr(out, k)
            a += learning_rate * g
            np.clip(a, -params.weight_cap, params.weight_cap, out=a)
    if not all(np.isfinite(a).all() for a in out.arrays().values()):
        raise FloatingPointError("policy weights diverged")
    return out


def sample_action(params: PolicyParams, tile: int, lam, rng: np.random.Generator) -> int:
    probs = action_distribution(params, tile, lam)
    return int(min(np.searchsorted(np.cumsum(probs), rng.random(), side="right"), len(probs) - 1))


def top_zones(lam, k: int) -> np.ndarray:
    """Indices of the ``k`` largest multipliers, ties to the lower index."""
    lam = np.asarray(lam, dtype=float)
    return np.argsort(-lam, kind="stable")[:k]


def greedy_matching(cost: np.ndarray) -> np.ndarray:
    """Repeatedly pair the globally cheapest free (row, column)."""
    n_rows, n_cols = cost.shape
    order = sorted(((cost[i, j], i, j) for i in range(n_rows) for j in range(n_cols)))
    row_to_col = np.full(n_rows, -1)
    used = set()
    for _, i, j in order:
        if row_to_col[i] < 0 and j not in used:
            row_to_col[i] = j
            used.add(j)
    return row_to_col


def oracle_greedy_policy(lam, positions, plan: FloorPlan) -> np.ndarray:
    """Send the agents to the ``N`` most-weighted zones, nearest pairs first."""
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    if n > plan.n_zones:
        raise ValueError(f"oracle assignment needs N <= M (got N={n}, M={plan.n_zones})")
    zones = top_zones(lam, n)
    cost = np.array([[plan.path_length(p, int(z)) for z in zones] for p in pos])
    return zones[greedy_matching(cost)]


def sample_lambda_for_training(rng: np.random.Generator, n_zones: int, lambda_max: float = 10.0,
                               one_hot_fraction: float = 0.1, kind: str = "mixed") -> np.ndarray:
    """Draw the episode's multipliers from the training distribution.

    ``kind="mixed"``: i.i.d. uniform on ``[0, lambda_max]``, except a
    ``one_hot_fraction`` share of draws that put ``lambda_max`` on one zone.
    ``kind="uniform"`` never draws one-hot; ``kind="zero"`` is a point mass.
    """
    if kind == "zero":
        return np.zeros(n_zones)
    if kind not in ("mixed", "uniform"):
        raise ValueError(f"unknown multiplier distribution {kind!r}")
    if kind == "mixed" and rng.random() < one_hot_fraction:
        lam = np.zeros(n_zones)
        lam[rng.integers(n_zones)] = lambda_max
        return lam
    return rng.uniform(0.0, lambda_max, size=n_zones)
