"""Experiment configuration: a versioned TOML schema with strict keys."""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ._toml import loads
from .comms import BernoulliModel, FootprintGraph, GraphModel, ProximityModel
from .duals import DualConfig
from .env import ConfigurationError, FloorPlan, load_plan

SCHEMA_VERSION = 1
BUILTIN_CONFIGS = ("floorplan", "smoke")

# section -> {toml key: attribute}
SCHEMA: dict[str, tuple[str, ...]] = {
    "env": ("geometry", "n_agents", "speed", "spawn"),
    "duals": ("alpha", "eta", "rollout", "thresholds", "lambda0"),
    "graph": ("model", "disc", "p", "footprint"),
    "policy": ("hidden", "lambda_max", "weight_cap", "output_scale"),
    "training": ("episodes", "episode_length", "batch", "learning_rate", "optimizer", "rounds",
                 "round_episodes", "lambda_distribution", "one_hot_fraction", "seed"),
    "execution": ("horizon", "seeds", "oracle", "workers"),
    "output": ("dir",),
    "checks": ("allow_threshold_override", "lipschitz", "eps_beta", "trials", "rollouts", "slack"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    # env
    geometry: str = "floorplan"
    n_agents: int = 5
    speed: float = 0.5
    spawn: tuple | None = None
    # duals
    alpha: float = 0.01
    eta: float = 0.5
    rollout: int = 100
    thresholds: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    lambda0: float = 0.0
    # graph
    model: str = "proximity"
    disc: float = 5.0
    p: float = 1.0
    footprint: str | tuple = "complete"
    # policy
    hidden: int = 256
    lambda_max: float = 10.0
    weight_cap: float = 10.0
    output_scale: float = 0.01
    # training
    episodes: int = 2000
    episode_length: int | None = None
    batch: int = 8
    learning_rate: float = 0.01
    optimizer: str = "sgd"
    rounds: int = 2
    round_episodes: int | None = None
    lambda_distribution: str = "mixed"
    one_hot_fraction: float = 0.1
    seed: int = 0
    # execution
    horizon: int = 40000
    seeds: tuple = (0, 1, 2, 3, 4)
    oracle: bool = False
    workers: int = 1
    # output
    dir: str = "runs"
    # checks
    allow_threshold_override: bool = False
    lipschitz: float = 1.0
    eps_beta: float = 0.01
    trials: int = 100_000
    rollouts: int = 200
    slack: float = 0.05
    # where relative paths are resolved
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        for name in ("thresholds", "seeds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.spawn is not None:
            object.__setattr__(self, "spawn", tuple(tuple(float(v) for v in p) for p in self.spawn))
        if not isinstance(self.footprint, str):
            object.__setattr__(self, "footprint", tuple(tuple(int(v) for v in e) for e in self.footprint))
        self.validate()

    # -- validation ---------------------------------------------------------

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigurationError(msg)

        need(self.n_agents >= 1, "env.n_agents must be >= 1")
        need(self.speed > 0, "env.speed must be positive")
        need(0 < self.alpha < 1, "duals.alpha must lie in (0, 1)")
        need(self.eta > 0, "duals.eta must be positive")
        need(self.rollout >= 1, "duals.rollout must be >= 1")
        need(self.lambda0 >= 0, "duals.lambda0 must be nonnegative")
        c = np.asarray(self.thresholds, dtype=float)
        need(c.ndim == 1 and len(c) >= 1, "duals.thresholds must be a nonempty list")
        need((c >= 0).all() and float(c.max()) < 1, "duals.thresholds must lie in [0, 1)")
        if c.sum() > self.n_agents - 1:
            msg = f"sum of thresholds {c.sum():.3g} exceeds N - 1 = {self.n_agents - 1}"
            if not self.allow_threshold_override:
                raise ConfigurationError(msg + " (set checks.allow_threshold_override to proceed)")
            warnings.warn(msg, stacklevel=2)
        need(self.model in ("proximity", "bernoulli"), f"graph.model must be 'proximity' or 'bernoulli', got {self.model!r}")
        need(self.disc > 0, "graph.disc must be positive")
        need(0 < self.p <= 1, "graph.p must lie in (0, 1]")
        if isinstance(self.footprint, str):
            need(self.footprint in ("complete", "path"), "graph.footprint must be 'complete', 'path' or an edge list")
        need(self.hidden >= 1, "policy.hidden must be >= 1")
        need(self.lambda_max > 0, "policy.lambda_max must be positive")
        need(self.weight_cap > 0, "policy.weight_cap must be positive")
        need(self.episodes >= 0, "training.episodes must be >= 0")
        need(self.batch >= 1, "training.batch must be >= 1")
        need(self.learning_rate > 0, "training.learning_rate must be positive")
        need(self.optimizer in ("sgd", "adam"), "training.optimizer must be 'sgd' or 'adam'")
        need(self.rounds >= 0, "training.rounds must be >= 0")
        need(self.lambda_distribution in ("mixed", "uniform", "zero"), "training.lambda_distribution is unknown")
        need(0 <= self.one_hot_fraction <= 1, "training.one_hot_fraction must lie in [0, 1]")
        need(self.horizon >= 1, "execution.horizon must be >= 1")
        need(self.horizon % self.rollout == 0,
             f"execution.horizon ({self.horizon}) must be a multiple of duals.rollout ({self.rollout})")
        need(len(self.seeds) >= 1, "execution.seeds must be nonempty")
        need(self.workers >= 1, "execution.workers must be >= 1")
        need(self.trials >= 1 and self.rollouts >= 1, "checks.trials and checks.rollouts must be >= 1")
        if self.spawn is not None:
            need(len(self.spawn) >= self.n_agents, "env.spawn needs one point per agent")

    # -- derived objects ---------------------------------------------------

    @property
    def n_zones(self) -> int:
        return len(self.thresholds)

    @property
    def c(self) -> np.ndarray:
        return np.asarray(self.thresholds, dtype=float)

    @property
    def length(self) -> int:
        return self.episode_length or self.rollout

    def duals(self) -> DualConfig:
        return DualConfig(self.alpha, self.eta, self.rollout, self.thresholds)

    def geometry_source(self):
        from .env import BUILTIN_PLANS

        if self.geometry in BUILTIN_PLANS or self.geometry == "default":
            return self.geometry
        path = Path(self.geometry)
        return path if path.is_absolute() else Path(self.base_dir) / path

    def plan(self) -> FloorPlan:
        try:
            plan = _cached_plan(str(self.geometry_source()))
        except FileNotFoundError as exc:
            raise ConfigurationError(str(exc)) from None
        if plan.n_zones != self.n_zones:
            raise ConfigurationError(f"geometry has {plan.n_zones} zones but {self.n_zones} thresholds are given")
        return plan

    def spawn_points(self, plan: FloorPlan) -> np.ndarray:
        if self.spawn is not None:
            pts = np.asarray(self.spawn[: self.n_agents], dtype=float)
        elif plan.spawn is not None and len(plan.spawn) >= self.n_agents:
            pts = plan.spawn[: self.n_agents].copy()
        else:
            # cycle through zone centers when the plan has too few spawn points
            pts = plan.zone_centers[np.arange(self.n_agents) % plan.n_zones].copy()
        for p in pts:
            plan.check_position(p)
        return pts

    def footprint_graph(self) -> FootprintGraph:
        if self.footprint == "complete":
            return FootprintGraph.complete(self.n_agents)
        if self.footprint == "path":
            return FootprintGraph.path(self.n_agents)
        return FootprintGraph.from_edges(self.n_agents, self.footprint)

    def graph_model(self, plan: FloorPlan, seed: int) -> GraphModel:
        if self.model == "proximity":
            return ProximityModel(plan, self.n_agents, self.disc)
        return BernoulliModel(self.footprint_graph(), self.p, seed=seed)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        flat = asdict(self)
        flat.pop("base_dir")
        out: dict = {"version": SCHEMA_VERSION}
        for section, keys in SCHEMA.items():
            sec = {}
            for k in keys:
                v = flat[k]
                if v is None:
                    continue
                sec[k] = [list(x) for x in v] if k in ("spawn", "footprint") and not isinstance(v, str) else (
                    list(v) if isinstance(v, tuple) else v)
            out[section] = sec
        return out

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def with_overrides(self, **kwargs) -> "ExperimentConfig":
        return replace(self, **kwargs)


_PLAN_CACHE: dict[str, FloorPlan] = {}


def _cached_plan(source: str) -> FloorPlan:
    if source not in _PLAN_CACHE:
        _PLAN_CACHE[source] = load_plan(source)
    return _PLAN_CACHE[source]


def config_from_dict(data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
    data = dict(data)
    version = data.pop("version", None)
    if version != SCHEMA_VERSION:
        raise ConfigurationError(f"config version must be {SCHEMA_VERSION}, got {version!r}")
    kwargs = {}
    for section, body in data.items():
        if section not in SCHEMA:
            raise ConfigurationError(f"unknown config section [{section}]")
        if not isinstance(body, dict):
            raise ConfigurationError(f"[{section}] must be a table")
        for key, value in body.items():
            if key not in SCHEMA[section]:
                raise ConfigurationError(f"unknown key {section}.{key}")
            kwargs[key] = value
    for k, v in kwargs.items():
        default = getattr(ExperimentConfig, k, None)
        if isinstance(default, bool) and not isinstance(v, bool):
            raise ConfigurationError(f"{k} must be a boolean")
        if isinstance(default, (int, float)) and not isinstance(default, bool) and isinstance(v, bool):
            raise ConfigurationError(f"{k} must be a number")
        if isinstance(default, float) and isinstance(v, (int, float)) and math.isfinite(v):
            kwargs[k] = float(v)
    try:
        return ExperimentConfig(**kwargs, base_dir=str(base_dir))
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


def load_config(source: str | Path) -> ExperimentConfig:
    """Parse a TOML config file, or a builtin name (``floorplan``, ``smoke``)."""
    text_source = str(source)
    if text_source in BUILTIN_CONFIGS:
        text = resources.files("dualpatrol.data").joinpath(f"{text_source}.toml").read_text()
        return config_from_dict(_parse(text, text_source), ".")
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    return config_from_dict(_parse(path.read_text(), str(path)), path.parent)


def _parse(text: str, where: str) -> dict:
    try:
        return loads(text)
    except Exception as exc:  # tomllib and tomli raise different classes
        raise ConfigurationError(f"cannot parse {where}: {exc}") from None
