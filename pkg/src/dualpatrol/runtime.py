"""Offline training and online distributed execution.

Execution interleaves two timescales. Within a rollout every agent acts on
its own tile and its frozen multiplier copy while reward bits spread by
gossip; at the rollout boundary each agent folds its gossip sums into its
multipliers. A shadow central multiplier driven by the true rewards is kept
only for reporting.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import comms, gossip
from .config import ExperimentConfig
from .duals import DualConfig, Multipliers, central_update, distributed_update, norm_bound
from .env import FloorPlan, JointState, observe_tile, reward, sample_free_position, step
from .policy import (
    Adam,
    EpisodeTrace,
    PolicyParams,
    init_params,
    oracle_greedy_policy,
    policy_gradient_step,
    sample_action,
    sample_lambda_for_training,
)
from .rng import stream

BIN = 0.25


class BoundViolation(AssertionError):
    """A multiplier trajectory left its almost-sure bound."""


# -- agents -----------------------------------------------------------------

class PolicyAgent:
    """Decision side of one agent under a learned policy.

    It sees its own tile and its own multipliers, nothing else.
    """

    def __init__(self, params: PolicyParams, rng: np.random.Generator):
        self.params = params
        self.rng = rng
        self.lam: np.ndarray | None = None

    def begin_rollout(self, lam: np.ndarray):
        self.lam = np.array(lam, dtype=float)
        self.lam.setflags(write=False)

    def act(self, tile: int) -> int:
        return sample_action(self.params, tile, self.lam, self.rng)


class OracleAgent:
    """Greedy assignment computed from the agent's own multipliers.

    The matching is solved over fixed anchor points known before execution
    (the spawn layout), never over live positions of other agents.
    """

    def __init__(self, index: int, anchors: np.ndarray, plan: FloorPlan):
        self.index = index
        self.anchors = np.asarray(anchors, dtype=float)
        self.plan = plan
        self.lam: np.ndarray | None = None
        self.target = 0

    def begin_rollout(self, lam: np.ndarray):
        self.lam = np.array(lam, dtype=float)
        self.lam.setflags(write=False)
        self.target = int(oracle_greedy_policy(self.lam, self.anchors, self.plan)[self.index])

    def act(self, tile: int) -> int:
        return self.target


# -- metrics -----------------------------------------------------------------

def histogram_shape(plan: FloorPlan, bin_size: float = BIN) -> tuple[int, int]:
    x0, y0, x1, y1 = plan.bounds
    return math.ceil((x1 - x0) / bin_size - 1e-9), math.ceil((y1 - y0) / bin_size - 1e-9)


def collect_occupancy(trajectory, plan: FloorPlan, bin_size: float = BIN) -> np.ndarray:
    """Per-agent visit counts on a ``bin_size`` grid, shape ``(N, nx, ny)``.

    ``trajectory`` is ``(T, N, 2)`` (or ``(T, 2)`` for one agent).
    """
    traj = np.asarray(trajectory, dtype=float)
    if traj.ndim == 2:
        traj = traj[:, None, :]
    nx, ny = histogram_shape(plan, bin_size)
    x0, y0 = plan.bounds[0], plan.bounds[1]
    ix = np.clip(np.floor((traj[..., 0] - x0) / bin_size).astype(int), 0, nx - 1)
    iy = np.clip(np.floor((traj[..., 1] - y0) / bin_size).astype(int), 0, ny - 1)
    out = np.zeros((traj.shape[1], nx, ny), dtype=np.int64)
    for n in range(traj.shape[1]):
        np.add.at(out[n], (ix[:, n], iy[:, n]), 1)
    return out


def running_average(rewards: np.ndarray) -> np.ndarray:
    r = np.asarray(rewards, dtype=float)
    return np.cumsum(r, axis=0) / np.arange(1, len(r) + 1)[:, None]


@dataclass
class RunMetrics:
    seed: int
    thresholds: np.ndarray
    rewards: np.ndarray  # (T, M) int8, r(S_t)
    positions: np.ndarray  # (T, N, 2), S_t
    comm_counts: np.ndarray  # (N, N) steps with an active link
    neighborhood: np.ndarray  # (T, N)
    lam: np.ndarray  # (K + 1, N, M)
    lam_central: np.ndarray  # (K + 1, M)
    occupancy: np.ndarray  # (N, nx, ny)
    wire_bits: int = 0

    @property
    def horizon(self) -> int:
        return len(self.rewards)

    @property
    def running_avg(self) -> np.ndarray:
        return running_average(self.rewards)

    @property
    def comm_frequency(self) -> np.ndarray:
        return self.comm_counts / self.horizon

    @property
    def final_average(self) -> np.ndarray:
        return self.rewards.mean(axis=0, dtype=float)

    @property
    def margins(self) -> np.ndarray:
        return self.final_average - self.thresholds

    @property
    def min_margin(self) -> float:
        return float(self.margins.min())


# -- execution ---------------------------------------------------------------

def _agents(cfg: ExperimentConfig, plan: FloorPlan, seed: int, params, oracle: bool):
    if oracle:
        anchors = cfg.spawn_points(plan)
        return [OracleAgent(n, anchors, plan) for n in range(cfg.n_agents)]
    if params is None or len(params) != cfg.n_agents:
        raise ValueError("execution needs one parameter set per agent (or the oracle)")
    return [PolicyAgent(p, stream(seed, "policy", n)) for n, p in enumerate(params)]


def execute_online(cfg: ExperimentConfig, params: Sequence[PolicyParams] | None = None, seed: int = 0,
                   oracle: bool | None = None, wire: bool = False) -> RunMetrics:
    """Distributed execution for ``cfg.horizon`` steps from the spawn layout."""
    oracle = cfg.oracle if oracle is None else oracle
    plan = cfg.plan()
    dual = cfg.duals()
    n_agents, n_zones, t0 = cfg.n_agents, cfg.n_zones, cfg.rollout
    n_rollouts = cfg.horizon // t0
    model = cfg.graph_model(plan, seed)
    agents = _agents(cfg, plan, seed, params, oracle)
    wire_log = gossip.WireLog(n_agents, keep_events=False) if wire else None
    bound = norm_bound(dual)

    state = JointState(cfg.spawn_points(plan), 0)
    lam = [Multipliers(np.full(n_zones, cfg.lambda0)) for _ in range(n_agents)]
    lam_c = Multipliers(np.full(n_zones, cfg.lambda0))
    rewards = np.zeros((cfg.horizon, n_zones), dtype=np.int8)
    positions = np.zeros((cfg.horizon, n_agents, 2))
    neighborhood = np.zeros((cfg.horizon, n_agents), dtype=np.int16)
    comm = np.zeros((n_agents, n_agents), dtype=np.int64)
    lam_hist = np.zeros((n_rollouts + 1, n_agents, n_zones))
    lam_c_hist = np.zeros((n_rollouts + 1, n_zones))
    lam_hist[0] = [l.values for l in lam]
    lam_c_hist[0] = lam_c.values

    for k in range(n_rollouts):
        start = k * t0
        buffers = [gossip.RewardBuffer.empty(n, start, t0, n_zones) for n in range(n_agents)]
        for n, agent in enumerate(agents):
            agent.begin_rollout(lam[n].values)
        for i in range(t0):
            t = start + i
            pos = state.positions
            sample = comms.sample(model, t, pos)
            for u, v in sample.active_edges:
                comm[u, v] += 1
                comm[v, u] += 1
                neighborhood[t, u] += 1
                neighborhood[t, v] += 1
            if i > 0:
                buffers = gossip.exchange(buffers, sample, wire_log)
            buffers = [gossip.observe_local(b, t, pos[n], plan) for n, b in enumerate(buffers)]
            rewards[t] = reward(pos, plan)
            positions[t] = pos
            actions = [agent.act(observe_tile(pos[n], plan)) for n, agent in enumerate(agents)]
            state = step(state, actions, plan, cfg.speed)
        lam = [distributed_update(lam[n], gossip.finalize(b), dual, k) for n, b in enumerate(buffers)]
        lam_c = central_update(lam_c, rewards[start:start + t0], dual)
        lam_hist[k + 1] = [l.values for l in lam]
        lam_c_hist[k + 1] = lam_c.values
        if cfg.lambda0 == 0:
            worst = max(float(np.linalg.norm(lam_hist[k + 1], axis=1).max()), float(np.linalg.norm(lam_c.values)))
            if worst > bound:
                raise BoundViolation(f"multiplier norm {worst} exceeds {bound} at rollout {k + 1}")

    return RunMetrics(
        seed=seed,
        thresholds=cfg.c,
        rewards=rewards,
        positions=positions,
        comm_counts=comm,
        neighborhood=neighborhood,
        lam=lam_hist,
        lam_central=lam_c_hist,
        occupancy=collect_occupancy(positions, plan),
        wire_bits=wire_log.total_bits if wire_log else 0,
    )


def _run_one(args):
    cfg, params, seed, oracle = args
    return execute_online(cfg, params, seed, oracle)


def run_seeds(cfg: ExperimentConfig, params=None, seeds: Sequence[int] | None = None,
              oracle: bool | None = None) -> list[RunMetrics]:
    """Independent runs per seed, merged in seed-list order."""
    seeds = list(cfg.seeds if seeds is None else seeds)
    jobs = [(cfg, params, s, oracle) for s in seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            return list(pool.map(_run_one, jobs))
    return [_run_one(j) for j in jobs]


def sweep_disc(cfg: ExperimentConfig, discs: Sequence[float], params=None, seeds=None,
               oracle: bool | None = None) -> list[tuple[float, float, float]]:
    """``(disc, min margin, max margin)`` across seeds for each disc size."""
    rows = []
    if cfg.model != "proximity":
        raise ValueError("the disc sweep needs the proximity graph model")
    for d in discs:
        runs = run_seeds(cfg.with_overrides(disc=float(d)), params, seeds, oracle)
        margins = [r.min_margin for r in runs]
        rows.append((float(d), min(margins), max(margins)))
    return rows


# -- training ----------------------------------------------------------------

@dataclass
class TrainingLog:
    entries: list[dict] = field(default_factory=list)

    def record(self, **kw):
        self.entries.append(kw)


def rollout_episode(plan: FloorPlan, params: Sequence[PolicyParams], learner: int, lam: np.ndarray,
                    c: np.ndarray, length: int, speed: float, rng: np.random.Generator) -> EpisodeTrace:
    """One training episode; every agent acts under its own parameters."""
    n_agents = len(params)
    start = np.array([sample_free_position(rng, plan) for _ in range(n_agents)])
    state = JointState(start, 0)
    tiles = np.zeros(length, dtype=np.int64)
    actions = np.zeros(length, dtype=np.int64)
    rewards = np.zeros((length, plan.n_zones), dtype=np.int8)
    for t in range(length):
        obs = [observe_tile(p, plan) for p in state.positions]
        acts = [sample_action(params[n], obs[n], lam, rng) for n in range(n_agents)]
        tiles[t], actions[t] = obs[learner], acts[learner]
        state = step(state, acts, plan, speed)
        rewards[t] = reward(state, plan)
    return EpisodeTrace(learner, tiles, actions, rewards, np.asarray(lam, dtype=float), np.asarray(c, dtype=float),
                        params[learner].fingerprint())


def _train_learner(cfg: ExperimentConfig, plan: FloorPlan, params: list[PolicyParams], learner: int,
                   episodes: int, rng: np.random.Generator, log: TrainingLog, phase: str) -> list[PolicyParams]:
    opt = Adam() if cfg.optimizer == "adam" else None
    params = list(params)
    done = 0
    while done < episodes:
        size = min(cfg.batch, episodes - done)
        traces, buckets = [], []
        for _ in range(size):
            lam = sample_lambda_for_training(rng, cfg.n_zones, cfg.lambda_max, cfg.one_hot_fraction,
                                             cfg.lambda_distribution)
            buckets.append("one_hot" if np.count_nonzero(lam) == 1 else "dense")
            traces.append(rollout_episode(plan, params, learner, lam, cfg.c, cfg.length, cfg.speed, rng))
        params[learner] = policy_gradient_step(params[learner], traces, cfg.learning_rate, opt)
        done += size
        returns = [float(tr.weighted().sum()) for tr in traces]
        by_bucket = {b: float(np.mean([r for r, bb in zip(returns, buckets) if bb == b]))
                     for b in sorted(set(buckets))}
        log.record(phase=phase, learner=learner, episodes=done, mean_return=float(np.mean(returns)),
                   bucket_returns=by_bucket,
                   mean_reward=[float(v) for v in np.mean([tr.rewards.mean(axis=0) for tr in traces], axis=0)])
    return params


def train_offline(cfg: ExperimentConfig, seed: int | None = None) -> tuple[list[PolicyParams], TrainingLog]:
    """Solo pre-training, copy to every agent, then round-robin retraining."""
    seed = cfg.seed if seed is None else seed
    plan = cfg.plan()
    log = TrainingLog()
    base = init_params(plan.n_tiles, cfg.n_zones, cfg.hidden, stream(seed, "init"), cfg.lambda_max,
                       cfg.weight_cap, cfg.output_scale)
    rng = stream(seed, "env")
    solo = _train_learner(cfg, plan, [base], 0, cfg.episodes, rng, log, "solo")[0]
    params = [solo.copy() for _ in range(cfg.n_agents)]
    if cfg.n_agents > 1:
        per_turn = cfg.round_episodes if cfg.round_episodes is not None else cfg.episodes // cfg.n_agents
        for r in range(cfg.rounds):
            for n in range(cfg.n_agents):
                params = _train_learner(cfg, plan, params, n, per_turn, rng, log, f"round{r}")
    return params, log
