"""Deterministic output files and the manifest that ``replay`` checks."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .runtime import RunMetrics

FMT = "%.12g"


def _zone_header(n_zones: int) -> list[str]:
    return [f"zone{m}" for m in range(n_zones)]


def _write_table(path: Path, header: Sequence[str], rows: np.ndarray, fmt=FMT, delimiter=","):
    with open(path, "w", newline="\n") as fh:
        if header:
            fh.write(delimiter.join(header) + "\n")
        np.savetxt(fh, rows, fmt=fmt, delimiter=delimiter)


def write_envelopes(out: Path, runs: Sequence[RunMetrics]):
    """``averages.csv`` (mean over seeds), ``minimums.csv`` and ``maximums.csv``."""
    avg = np.stack([r.running_avg for r in runs])
    t = np.arange(avg.shape[1])[:, None]
    header = ["timestep", *_zone_header(avg.shape[2])]
    for name, env in (("averages", avg.mean(axis=0)), ("minimums", avg.min(axis=0)), ("maximums", avg.max(axis=0))):
        _write_table(out / f"{name}.csv", header, np.hstack([t, env]), fmt=["%d"] + [FMT] * avg.shape[2])


def write_gossip(out: Path, runs: Sequence[RunMetrics]):
    """Pairwise link frequency (mean over seeds) and the first seed's neighborhood sizes."""
    freq = np.mean([r.comm_frequency for r in runs], axis=0)
    _write_table(out / "gossip_matrix.dat", [], freq, delimiter=" ")
    nb = runs[0].neighborhood
    rows = np.hstack([np.arange(len(nb))[:, None], nb])
    _write_table(out / "gossip_trajectories.dat", [], rows, fmt="%d", delimiter=" ")


def write_multipliers(out: Path, runs: Sequence[RunMetrics]):
    """Rows ``(seed, k, agent, lam...)``; agent ``-1`` is the central reference."""
    m = runs[0].lam.shape[2]
    blocks = []
    for r in runs:
        k_count, n_agents, _ = r.lam.shape
        for k in range(k_count):
            blocks.append(np.hstack([[[r.seed, k, -1]], r.lam_central[k][None]]))
            ids = np.column_stack([np.full(n_agents, r.seed), np.full(n_agents, k), np.arange(n_agents)])
            blocks.append(np.hstack([ids, r.lam[k]]))
    _write_table(out / "multipliers.csv", ["seed", "k", "agent", *[f"lam{j}" for j in range(m)]], np.vstack(blocks),
                 fmt=["%d", "%d", "%d"] + [FMT] * m)


def write_occupancy(out: Path, runs: Sequence[RunMetrics]):
    """One ``ny x nx`` count grid per seed and agent (row 0 is the lowest y bin)."""
    for r in runs:
        for n, grid in enumerate(r.occupancy):
            _write_table(out / f"occupancy_s{r.seed}_a{n}.dat", [], grid.T, fmt="%d", delimiter=" ")


def write_margins(out: Path, runs: Sequence[RunMetrics]):
    m = len(runs[0].thresholds)
    rows = np.array([[r.seed, *r.margins, r.min_margin] for r in runs])
    _write_table(out / "margins.csv", ["seed", *_zone_header(m), "min_margin"], rows, fmt=["%d"] + [FMT] * (m + 1))


def write_margin_radius(out: Path, rows: Sequence[tuple[float, float, float]]):
    _write_table(out / "margin_radius.csv", ["disc", "min_margin", "max_margin"], np.array(rows, dtype=float))


def write_json(path: Path, data):
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_run(out: Path, runs: Sequence[RunMetrics], summary: dict):
    out.mkdir(parents=True, exist_ok=True)
    write_envelopes(out, runs)
    write_gossip(out, runs)
    write_multipliers(out, runs)
    write_occupancy(out, runs)
    write_margins(out, runs)
    write_json(out / "summary.json", summary)


def sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def hash_outputs(out: Path) -> dict[str, str]:
    return {p.name: sha256(p) for p in sorted(out.iterdir()) if p.is_file() and p.name != "manifest.json"}


def write_manifest(out: Path, invocation: dict):
    write_json(out / "manifest.json", {**invocation, "files": hash_outputs(out)})


def read_manifest(out: Path) -> dict:
    return json.loads((Path(out) / "manifest.json").read_text())
