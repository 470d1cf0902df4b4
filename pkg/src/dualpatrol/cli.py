"""Command-line entry point: ``dualpatrol {train,run,verify,sweep-disc,replay}``.

Exit codes: 0 success, 2 configuration error, 3 numeric failure,
4 check violation (a bound reported as violated, or a replay mismatch).
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import analysis, artifacts
from .comms import FootprintGraph, diameter
from .config import ExperimentConfig, config_from_dict, load_config
from .env import ConfigurationError
from .policy import load_checkpoint, save_checkpoint
from .runtime import BoundViolation, run_seeds, sweep_disc, train_offline

OUT_ENV = "DUALPATROL_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4


class CheckFailed(Exception):
    pass


def _parse_seeds(text: str) -> tuple[int, ...]:
    """``"5"`` means seeds 0..4; ``"3,7,11"`` is an explicit list."""
    text = text.strip()
    if "," in text:
        return tuple(int(s) for s in text.split(",") if s.strip())
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("seed count must be >= 1")
    return tuple(range(n))


def _parse_floats(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualpatrol", description="Patrolling simulator with gossip-driven constraint multipliers.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, run_like=True):
        p.add_argument("--config", default="floorplan", help="TOML file or builtin name (floorplan, smoke)")
        p.add_argument("--seeds", type=_parse_seeds, help="seed count N (0..N-1) or comma-separated list")
        p.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<command> or the config's output.dir)")
        if run_like:
            p.add_argument("--horizon", type=int, help="execution horizon in timesteps")
            p.add_argument("--oracle", action="store_true", help="use the greedy oracle instead of trained policies")
            p.add_argument("--checkpoints", help="directory holding agent<n>.json checkpoints")

    p = sub.add_parser("train", help="offline training; writes per-agent checkpoints")
    common(p, run_like=False)
    p.add_argument("--episodes", type=int, help="solo training episodes")

    p = sub.add_parser("run", help="distributed execution; writes metric files")
    common(p)

    p = sub.add_parser("verify", help="numerical bound checks; writes report.json")
    common(p, run_like=False)
    p.add_argument("--trials", type=int, help="Monte Carlo trials per dissemination check")
    p.add_argument("--rollouts", type=int, help="rollouts per multiplier-gap run")

    p = sub.add_parser("sweep-disc", help="margins across communication disc sizes")
    common(p)
    p.add_argument("--disc-list", type=_parse_floats, default=[1, 2, 3, 4, 5, 6], help="comma-separated disc sizes")

    p = sub.add_parser("replay", help="re-derive an output directory and compare file hashes")
    p.add_argument("directory")
    return parser


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out:
        return Path(args.out)
    root = os.environ.get(OUT_ENV)
    if root:
        return Path(root) / args.command
    return Path(cfg.dir) if Path(cfg.dir).is_absolute() else Path(cfg.base_dir) / cfg.dir


def _effective_config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "seeds", None):
        over["seeds"] = args.seeds
    if getattr(args, "horizon", None):
        over["horizon"] = args.horizon
    if getattr(args, "oracle", False):
        over["oracle"] = True
    if getattr(args, "episodes", None) is not None:
        over["episodes"] = args.episodes
    if getattr(args, "trials", None):
        over["trials"] = args.trials
    if getattr(args, "rollouts", None):
        over["rollouts"] = args.rollouts
    cfg = cfg.with_overrides(**over) if over else cfg
    # resolve the geometry now so that a missing file is a config error
    cfg.plan()
    src = cfg.geometry_source()
    if isinstance(src, Path):
        cfg = cfg.with_overrides(geometry=str(src.resolve()))
    return cfg


def _load_params(args, cfg: ExperimentConfig):
    if cfg.oracle:
        return None
    ckpt = Path(args.checkpoints) if getattr(args, "checkpoints", None) else None
    if ckpt is None:
        raise ConfigurationError("trained execution needs --checkpoints (or pass --oracle)")
    params = []
    for n in range(cfg.n_agents):
        path = ckpt / f"agent{n}.json"
        if not path.exists():
            raise ConfigurationError(f"checkpoint not found: {path}")
        params.append(load_checkpoint(path))
    return params


def _record(command: str, cfg: ExperimentConfig, **extra) -> dict:
    return {"command": command, "config": cfg.to_dict(), **extra}


# -- subcommands ---------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    params, log = train_offline(cfg)
    out.mkdir(parents=True, exist_ok=True)
    for n, p in enumerate(params):
        save_checkpoint(p, out / f"agent{n}.json", cfg.config_hash())
    artifacts.write_json(out / "training_log.json", log.entries)
    return _record("train", cfg)


def _run_summary(cfg, runs) -> dict:
    dual = cfg.duals()
    reports = []
    for r in runs:
        reports.append(analysis.check_norm_bound(np.concatenate([r.lam.reshape(-1, cfg.n_zones), r.lam_central]), dual).to_dict())
        reports.append(analysis.check_average_bound(r.lam_central, dual, cfg.slack).to_dict())
    margin = analysis.theorem_margin(dual, 1, 1.0, cfg.lipschitz, cfg.eps_beta).margin
    return {
        "seeds": [r.seed for r in runs],
        "final_average": [r.final_average.tolist() for r in runs],
        "min_margin": [r.min_margin for r in runs],
        "feasibility_error": margin,
        "within_error": bool(all(r.min_margin >= -margin for r in runs)),
        "nonnegative_margin": bool(all(r.min_margin >= 0 for r in runs)),
        "reports": reports,
    }


def cmd_run(cfg: ExperimentConfig, out: Path, params, checkpoints: str | None) -> dict:
    runs = run_seeds(cfg, params)
    artifacts.write_run(out, runs, _run_summary(cfg, runs))
    return _record("run", cfg, checkpoints=checkpoints)


def cmd_sweep(cfg: ExperimentConfig, out: Path, params, discs, checkpoints: str | None) -> dict:
    rows = sweep_disc(cfg, discs, params)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_margin_radius(out, rows)
    return _record("sweep-disc", cfg, checkpoints=checkpoints, disc_list=list(map(float, discs)))


def verification_reports(cfg: ExperimentConfig) -> dict:
    dual = cfg.duals()
    reports = []
    tail = analysis.nbinom_tail_mean(2, 0.5)
    reports.append(analysis.BoundReport("BN(2, 0.5) tail-sum mean equals 4", 4.0, tail, 1, 0.0,
                                        [analysis.Check("|tail mean - 4|", abs(tail - 4.0), 1e-9, 0.0, 0.0)]))
    for dg in (1, 2, 3):
        for p in (0.3, 0.5, 0.8):
            r = analysis.verify_dissemination(FootprintGraph.path(dg + 1), p, cfg.trials, dual.rollout)
            r.details.pop("arrival_cdf")
            r.details.pop("bound_cdf")
            reports.append(r)
    seeds = list(range(20))
    for g, p in ((FootprintGraph.path(3), 0.5), (FootprintGraph.complete(3), 1.0)):
        reports.append(analysis.verify_multiplier_error(dual, g, p, seeds, cfg.rollouts))
    exact = analysis.verify_multiplier_error(dual, FootprintGraph.path(3), 0.5, seeds[:3], 20, perfect=True)
    exact.claim = "perfect estimates reproduce the central multipliers"
    exact.bound = 0.0
    exact.checks.append(analysis.Check("max gap", exact.details["max_error"], 0.0, 0.0, 0.0))
    reports.append(exact)
    if cfg.model == "proximity":
        dg, p = 1, 1.0
    else:
        dg, p = diameter(cfg.footprint_graph()), cfg.p
    tm = analysis.theorem_margin(dual, dg, p, cfg.lipschitz, cfg.eps_beta)
    return {
        "reports": [r.to_dict() for r in reports],
        "feasibility": {**tm._asdict(), "d_G": dg, "p": p, "lipschitz": cfg.lipschitz, "eps_beta": cfg.eps_beta},
        "violated": [r.claim for r in reports if r.verdict == "violated"],
    }


def cmd_verify(cfg: ExperimentConfig, out: Path) -> dict:
    result = verification_reports(cfg)
    out.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(out / "report.json", result)
    for r in result["reports"]:
        print(f"{r['verdict']:>12}  {r['claim']}  (empirical {r['empirical']:.6g}, bound {r['bound']:.6g})")
    if result["violated"]:
        raise CheckFailed("violated: " + "; ".join(result["violated"]))
    return _record("verify", cfg)


def execute(record: dict, out: Path):
    """Re-run a recorded invocation into ``out``."""
    cfg = config_from_dict(record["config"])
    command = record["command"]
    ckpt = record.get("checkpoints")
    params = None
    if command in ("run", "sweep-disc") and not cfg.oracle:
        params = _load_params(argparse.Namespace(checkpoints=ckpt), cfg)
    if command == "train":
        cmd_train(cfg, out)
    elif command == "run":
        cmd_run(cfg, out, params, ckpt)
    elif command == "sweep-disc":
        cmd_sweep(cfg, out, params, record["disc_list"], ckpt)
    elif command == "verify":
        cmd_verify(cfg, out)
    else:
        raise ConfigurationError(f"cannot replay command {command!r}")


def _mismatches(expected: dict, got: dict) -> list[str]:
    return sorted(k for k in set(expected) | set(got) if expected.get(k) != got.get(k))


def cmd_replay(directory: Path) -> int:
    """Both the files on disk and a fresh re-run must match the manifest."""
    manifest = artifacts.read_manifest(directory)
    expected = manifest["files"]
    on_disk = _mismatches(expected, artifacts.hash_outputs(directory))
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        execute(manifest, tmp)
        rerun = _mismatches(expected, artifacts.hash_outputs(tmp))
    if on_disk or rerun:
        if on_disk:
            print("files differ from manifest: " + ", ".join(on_disk), file=sys.stderr)
        if rerun:
            print("re-run differs from manifest: " + ", ".join(rerun), file=sys.stderr)
        return EXIT_CHECK
    print(f"replay ok: {len(expected)} files match")
    return EXIT_OK


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            if args.command == "replay":
                warnings.simplefilter("ignore")
            else:
                warnings.simplefilter("default")
                warnings.showwarning = _show_warning
            if args.command == "replay":
                return cmd_replay(Path(args.directory))
            cfg = _effective_config(args)
            out = _out_dir(args, cfg)
            if args.command == "train":
                record = cmd_train(cfg, out)
            elif args.command == "run":
                record = cmd_run(cfg, out, _load_params(args, cfg), args.checkpoints)
            elif args.command == "sweep-disc":
                record = cmd_sweep(cfg, out, _load_params(args, cfg), args.disc_list, args.checkpoints)
            else:
                record = cmd_verify(cfg, out)
            if record.get("checkpoints"):
                record["checkpoints"] = str(Path(record["checkpoints"]).resolve())
            artifacts.write_manifest(out, record)
    except (ConfigurationError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckFailed, BoundViolation) as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    print(f"wrote {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
