"""Numerical checks of the dissemination and multiplier bounds.

Negative-binomial convention used throughout: ``BN(J, p)`` counts the
Bernoulli(p) *trials* needed to collect ``J`` successes, so its support
starts at ``J`` and its mean is ``J / p``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .comms import FootprintGraph, diameter, eccentric_pair
from .duals import DualConfig, Multipliers, _contract, average_bound, norm_bound
from .gossip import spread
from .rng import stream

Z_DEFAULT = 3.0


# -- negative binomial ------------------------------------------------------

def _check_nb(successes: int, p: float):
    if int(successes) != successes or successes < 1:
        raise ValueError(f"successes must be a positive integer, got {successes}")
    if not 0 < p <= 1:
        raise ValueError(f"p must lie in (0, 1], got {p}")


def nbinom_pmf(successes: int, p: float, trials: int) -> float:
    _check_nb(successes, p)
    if trials < successes:
        return 0.0
    return math.comb(trials - 1, successes - 1) * p**successes * (1 - p) ** (trials - successes)


def nbinom_cdf(successes: int, p: float, trials: int) -> float:
    """P(at most ``trials`` Bernoulli(p) trials are needed for ``successes`` successes)."""
    _check_nb(successes, p)
    if trials < 0:
        raise ValueError("trials must be nonnegative")
    if trials < successes:
        return 0.0
    if p == 1.0:
        return 1.0
    # pmf(k + 1) = pmf(k) * k / (k - J + 1) * (1 - p), starting from pmf(J) = p^J
    term = p**successes
    total = term
    for k in range(successes, trials):
        term *= k / (k - successes + 1) * (1 - p)
        total += term
    return min(total, 1.0)


def nbinom_cdf_table(successes: int, p: float, horizon: int) -> np.ndarray:
    """``[nbinom_cdf(J, p, i) for i in range(horizon)]`` in one pass."""
    _check_nb(successes, p)
    out = np.zeros(horizon)
    term, total = 0.0, 0.0
    for i in range(horizon):
        if i == successes:
            term = p**successes
            total = term
        elif i > successes:
            term *= (i - 1) / (i - successes) * (1 - p)
            total += term
        out[i] = min(total, 1.0)
    return out


def nbinom_sf(successes: int, p: float, trials: int) -> float:
    """``P(BN > trials)``: fewer than ``successes`` successes in ``trials`` trials.

    Summed directly over the binomial terms, so small tails keep full
    relative precision (``1 - cdf`` would cancel).
    """
    _check_nb(successes, p)
    if trials < successes:
        return 1.0
    if p == 1.0:
        return 0.0
    lp, lq = math.log(p), math.log1p(-p)
    terms = [math.exp(math.lgamma(trials + 1) - math.lgamma(s + 1) - math.lgamma(trials - s + 1) + s * lp
                      + (trials - s) * lq) for s in range(successes)]
    return math.fsum(terms)


def nbinom_tail_mean(successes: int, p: float, tol: float = 1e-17, max_terms: int = 10_000_000) -> float:
    """``sum_{i >= 0} P(BN > i)``, which equals the mean ``J / p``."""
    _check_nb(successes, p)
    tails = []
    for i in range(max_terms):
        tail = nbinom_sf(successes, p, i)
        tails.append(tail)
        if i > successes / p and tail < tol:
            break
    return math.fsum(tails)


# -- reports ----------------------------------------------------------------

@dataclass(frozen=True)
class Check:
    """One inequality ``statistic <= bound + z * stderr``."""

    name: str
    statistic: float
    bound: float
    stderr: float = 0.0
    z: float = Z_DEFAULT

    @property
    def passes(self) -> bool:
        return self.statistic <= self.bound + self.z * self.stderr


@dataclass
class BoundReport:
    claim: str
    bound: float
    empirical: float
    samples: int
    stderr: float
    checks: list[Check] = field(default_factory=list)
    soft: bool = False  # failures are reported as inconclusive
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        if all(c.passes for c in self.checks):
            return "holds"
        return "inconclusive" if self.soft else "violated"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BoundReport":
        d = dict(d)
        d.pop("verdict", None)
        d["checks"] = [Check(**c) for c in d.get("checks", [])]
        return cls(**d)


def _headline(claim, bound, values, soft=False, details=None, z=Z_DEFAULT) -> BoundReport:
    v = np.asarray(values, dtype=float).ravel()
    mean = float(v.mean())
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return BoundReport(claim, float(bound), mean, len(v), se,
                       [Check(claim, mean, float(bound), se, z)], soft, details or {})


# -- dissemination ----------------------------------------------------------

def _pack_rows(horizon: int) -> int:
    return (horizon + 7) // 8


def _is_tree(g: FootprintGraph) -> bool:
    return len(g.edges) == g.n_nodes - 1


def simulate_dissemination(footprint: FootprintGraph, p: float, trials: int, horizon: int, seed: int = 0,
                           source: int | None = None, target: int | None = None,
                           chunk: int = 25_000) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo of one rollout in which only ``source`` ever observes bits.

    Row ``tau`` is planted at ``source`` at time ``tau``; exchanges follow the
    gossip schedule (exchange at ``t`` with the time-``t`` edge draw, then the
    local row ``t``). Returns per trial the arrival delay of row 0 at
    ``target`` (``horizon`` when it never arrives) and the number of rows
    still missing at ``target`` after the last step.
    """
    if source is None or target is None:
        source, target = eccentric_pair(footprint)
    edges = footprint.edge_array
    n_bytes = _pack_rows(horizon)
    rng = stream(seed, "montecarlo", footprint.n_nodes, len(edges), int(round(p * 1e6)))
    arrival = np.empty(trials, dtype=np.int64)
    missing = np.empty(trials, dtype=np.int64)
    for lo in range(0, trials, chunk):
        r = min(chunk, trials - lo)
        bits = np.zeros((r, footprint.n_nodes, n_bytes), dtype=np.uint8)
        first = np.full(r, horizon, dtype=np.int64)
        for t in range(horizon):
            if t > 0:
                active = rng.random((r, len(edges))) < p
                bits = spread(bits, edges, active)
            bits[:, source, t >> 3] |= np.uint8(0x80 >> (t & 7))
            got = (bits[:, target, 0] & 0x80) != 0
            first[(first == horizon) & got] = t
        arrival[lo:lo + r] = first
        known = np.unpackbits(bits[:, target, :], axis=1)[:, :horizon].sum(axis=1)
        missing[lo:lo + r] = horizon - known
    return arrival, missing


def verify_dissemination(footprint: FootprintGraph, p: float, trials: int = 100_000, horizon: int = 100,
                         seed: int = 0, z: float = Z_DEFAULT) -> BoundReport:
    """Delivery of planted bits to the node farthest from the source.

    Headline check: the expected number of rows a far node is still missing
    at rollout end is at most ``d_G / p``. Secondary checks compare the
    arrival delay of a single bit with ``BN(d_G, p)``: exactly when the
    footprint is a tree (one route), one-sidedly (at least as fast) otherwise.
    """
    dg = diameter(footprint)
    source, target = eccentric_pair(footprint)
    arrival, missing = simulate_dissemination(footprint, p, trials, horizon, seed, source, target)
    report = _headline("expected undelivered rows <= d_G/p", dg / p, missing, z=z)
    cdf = nbinom_cdf_table(dg, p, horizon)
    emp = np.array([(arrival <= i).mean() for i in range(horizon)])
    se = np.sqrt(np.maximum(cdf * (1 - cdf), 1.0 / trials) / trials)
    # Bonferroni-style widening for the pointwise comparison across the horizon
    z_band = z + math.sqrt(2 * math.log(max(horizon, 2)))
    exact_law = _is_tree(footprint)
    if exact_law:
        dev = float(np.max(np.abs(emp - cdf) / se))
        report.checks.append(Check("arrival CDF matches BN(d_G, p) pointwise (normalized)", dev, z_band))
        mean_arrival = arrival.astype(float)
        report.checks.append(Check("mean arrival delay ~ d_G/p", float(abs(mean_arrival.mean() - dg / p)),
                                   0.0, float(mean_arrival.std(ddof=1) / math.sqrt(trials)), z))
    else:
        dev = float(np.max((cdf - emp) / se))
        report.checks.append(Check("arrival CDF dominates BN(d_G, p) (normalized)", dev, z_band))
    expected_missing = float(np.sum(1.0 - cdf[:horizon]))
    if exact_law:
        report.checks.append(Check("undelivered rows match the exact law", abs(report.empirical - expected_missing),
                                   0.0, report.stderr, z))
    report.details = {
        "diameter": dg,
        "p": p,
        "source": source,
        "target": target,
        "horizon": horizon,
        "exact_law": exact_law,
        "expected_undelivered_exact": expected_missing,
        "arrival_cdf": emp.tolist(),
        "bound_cdf": cdf.tolist(),
        "never_arrived": int((arrival >= horizon).sum()),
    }
    return report


# -- multiplier error ------------------------------------------------------

def synthetic_occupancy(rng: np.random.Generator, n_agents: int, n_zones: int, steps: int,
                        dwell: float = 10.0) -> np.ndarray:
    """Zone held by each agent (``-1`` for none), switching with prob ``1/dwell``."""
    z = np.empty((steps, n_agents), dtype=np.int64)
    cur = rng.integers(-1, n_zones, size=n_agents)
    switch = rng.random((steps, n_agents)) < 1.0 / dwell
    draws = rng.integers(-1, n_zones, size=(steps, n_agents))
    for t in range(steps):
        cur = np.where(switch[t], draws[t], cur)
        z[t] = cur
    return z


def paired_dual_errors(cfg: DualConfig, footprint: FootprintGraph, p: float, seeds: Sequence[int],
                       n_rollouts: int, perfect: bool = False, dwell: float = 10.0):
    """Run central and gossip-driven multipliers side by side.

    Rewards come from synthetic occupancy traces (the bound holds for any
    reward sequence). Returns ``(errors, norms)``: per seed and rollout the
    worst agent's sup-norm gap to the central multipliers, and the norm of
    the central multipliers.
    """
    n, m, t0 = footprint.n_nodes, cfg.n_zones, cfg.rollout
    edges = footprint.edge_array
    s = len(seeds)
    occ = np.stack([synthetic_occupancy(stream(sd, "occupancy"), n, m, n_rollouts * t0, dwell) for sd in seeds])
    graph_rngs = [stream(sd, "graph", n, len(edges)) for sd in seeds]
    eye = np.vstack([np.eye(m, dtype=bool), np.zeros((1, m), dtype=bool)])  # row -1 -> no zone
    local = eye[occ]  # (S, T, N, M)
    truth = local.any(axis=2)
    central = [Multipliers.zeros(m) for _ in seeds]
    dist = [[Multipliers.zeros(m) for _ in range(n)] for _ in seeds]
    errors = np.zeros((s, n_rollouts))
    norms = np.zeros((s, n_rollouts))
    for k in range(n_rollouts):
        base = k * t0
        flat = np.zeros((s, n, t0 * m), dtype=bool)
        bits = flat.reshape(s, n, t0, m)
        for i in range(t0):
            if i > 0 and not perfect:
                if p >= 1.0:
                    flat = spread(flat, edges)
                else:
                    active = np.stack([g.random(len(edges)) < p for g in graph_rngs])
                    flat = spread(flat, edges, active)
                bits = flat.reshape(s, n, t0, m)
            bits[:, :, i, :] = local[:, base + i]
        for j in range(s):
            true_sums = truth[j, base:base + t0].sum(axis=0, dtype=np.int64)
            central[j] = _contract(central[j], t0 * cfg.c - true_sums, cfg)
            gap = 0.0
            for a in range(n):
                est = true_sums if perfect else bits[j, a].sum(axis=0, dtype=np.int64)
                dist[j][a] = _contract(dist[j][a], t0 * cfg.c - est, cfg)
                gap = max(gap, float(np.max(np.abs(dist[j][a].values - central[j].values))))
            errors[j, k] = gap
            norms[j, k] = float(np.linalg.norm(central[j].values))
    return errors, norms


def multiplier_error_bound(cfg: DualConfig, d_g: int, p: float) -> float:
    return cfg.eta * d_g / (cfg.alpha * cfg.rollout * p)


def verify_multiplier_error(cfg: DualConfig, footprint: FootprintGraph, p: float, seeds: Sequence[int],
                            n_rollouts: int = 200, perfect: bool = False, dwell: float = 10.0) -> BoundReport:
    """Mean over rollouts and seeds of ``max_n ||lam^n_k - lam_k||_inf``."""
    dg = diameter(footprint)
    errors, norms = paired_dual_errors(cfg, footprint, p, seeds, n_rollouts, perfect, dwell)
    per_seed = errors.mean(axis=1)
    report = _headline("mean multiplier gap <= eta d_G / (alpha T0 p)", multiplier_error_bound(cfg, dg, p), per_seed)
    report.samples = int(errors.size)
    report.checks.append(Check("central multiplier norm <= eta sqrt(M)/alpha", float(norms.max()),
                               norm_bound(cfg), 0.0, 0.0))
    report.details = {"diameter": dg, "p": p, "max_error": float(errors.max()), "perfect": perfect,
                      "seeds": list(map(int, seeds)), "rollouts": n_rollouts}
    return report


# -- deterministic bounds ----------------------------------------------------

def check_norm_bound(trajectory, cfg: DualConfig) -> BoundReport:
    """Every multiplier vector in ``trajectory`` (..., M) obeys the a.s. norm bound."""
    lam = np.asarray(trajectory, dtype=float).reshape(-1, cfg.n_zones)
    norms = np.linalg.norm(lam, axis=1)
    bound = norm_bound(cfg)
    return BoundReport("||lam_k|| <= eta sqrt(M)/alpha", bound, float(norms.max()), len(norms), 0.0,
                       [Check("max norm", float(norms.max()), bound, 0.0, 0.0)])


def check_average_bound(trajectory, cfg: DualConfig, slack: float = 0.05, min_rollouts: int | None = None) -> BoundReport:
    """Time-averaged multipliers ``(1/K) sum_k lam_k`` at the last rollout.

    ``trajectory`` is ``(K + 1, ..., M)`` including ``lam_0``. With fewer than
    ``min_rollouts`` (default ``1/alpha``) updates a miss is inconclusive.
    """
    lam = np.asarray(trajectory, dtype=float)
    k = lam.shape[0] - 1
    if k < 1:
        raise ValueError("need at least one update")
    avg = lam[1:].mean(axis=0).reshape(-1, cfg.n_zones)
    bound = average_bound(cfg) * (1 + slack)
    if min_rollouts is None:
        min_rollouts = math.ceil(1 / cfg.alpha)
    worst = float(avg.max())
    return BoundReport("(1/K) sum_k lam_k <= eta sqrt(M/alpha) (with slack)", bound, worst, k, 0.0,
                       [Check("max averaged component", worst, bound, 0.0, 0.0)], soft=k < min_rollouts,
                       details={"average": avg.tolist(), "slack": slack})


class TheoremMargin(NamedTuple):
    delta: float
    alpha_min: float
    margin: float
    delta_positive: bool
    alpha_sufficient: bool


def theorem_margin(cfg: DualConfig, d_g: int, p: float, lipschitz: float = 1.0, eps_beta: float = 0.01) -> TheoremMargin:
    """Slack ``delta``, the smallest admissible ``alpha`` and the feasibility error.

    ``lipschitz`` and ``eps_beta`` are user-supplied constants; nothing here
    estimates them.
    """
    m = cfg.n_zones
    delta = (1.0 - float(np.max(cfg.c))) - m * eps_beta
    if delta > 0:
        alpha_min = cfg.eta * d_g * m * lipschitz / (p * cfg.rollout * delta)
    else:
        alpha_min = math.inf
    margin = math.sqrt(cfg.alpha * m)
    return TheoremMargin(delta, alpha_min, margin, delta > 0, cfg.alpha >= alpha_min)
