"""``augpolicy`` command line: pretraining runs, probes, searches and exports."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import ValidationError as PydanticValidationError

from .config import flatten, parse_overrides, resolve_config, unflatten, write_resolved_config
from .contrastive import Encoder, linear_probe, pretrain
from .core import AugPolicyError, CheckpointError, ConfigError, logger
from .data import download_cifar10, load_dataset
from .exports import inspect_snapshots, write_cooccurrence, write_independence, write_op_probs, write_rows
from .metrics import MetricsStream
from .policy import PolicyMode, load_snapshot, save_snapshot
from .ppo import BoundedInfoNCEReward, prime_tracker, search_policy
from .reward import EpochLossTracker, reward_curve
from .schemas import ProbeReport, RunConfig
from .validators import InputValidator

# argparse dest -> dotted config key
FLAG_KEYS: Dict[str, str] = {
    "mode": "mode",
    "reward_th": "reward.th",
    "reward_b": "reward.b",
    "k": "contrastive.k",
    "queue_cap": "queue.capacity",
    "queue_p": "queue.base_prob",
    "seed": "seed",
    "dataset": "data.source",
    "data_dir": "data.dir",
    "out": "out",
    "epochs": "contrastive.epochs",
    "warmup": "contrastive.warmup_epochs",
}

RESOLVED_CONFIG = "resolved_config"
METRICS_FILE = "metrics.jsonl"
ENCODER_FILE = "encoder.ckpt"
SNAPSHOT_DIR = "snapshots"
PROBE_FILE = "probe.json"
SWEEP_TH = (1.1, 1.3, 1.5, 1.7, 1.9)
CURVE_B = (1e-5, 0.2, 1e5)

PathLike = Union[str, Path]


def snapshot_path(run_dir: PathLike, epoch: int) -> Path:
    return Path(run_dir) / SNAPSHOT_DIR / f"policy_e{epoch:04d}.ckpt"


def load_run_config(run_dir: PathLike, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    path = Path(run_dir) / RESOLVED_CONFIG
    if not path.is_file():
        raise CheckpointError(
            f"{run_dir} is not a run directory",
            hint="Run 'augpolicy pretrain --out <dir>' first.",
            context={"missing": str(path)},
        )
    return resolve_config(path, overrides)


def _with_overrides(cfg: RunConfig, **flat: Any) -> RunConfig:
    merged = flatten(cfg.model_dump())
    merged.update({key: value for key, value in flat.items()})
    try:
        return RunConfig.model_validate(unflatten(merged))
    except PydanticValidationError as exc:
        raise ConfigError("Derived configuration is invalid", context={"overrides": flat}) from exc


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_pretrain(cfg: RunConfig) -> Path:
    """Run the full pretraining loop and write the run directory."""

    run_dir = Path(cfg.out)
    run_dir.mkdir(parents=True, exist_ok=True)
    for stale in (run_dir / SNAPSHOT_DIR).glob("*.ckpt"):
        stale.unlink()
    write_resolved_config(cfg, run_dir / RESOLVED_CONFIG)
    logger.info("config.resolved", extra={"context": {"run_dir": str(run_dir), "mode": cfg.mode, "seed": cfg.seed}})

    train = load_dataset(cfg, "train")
    stream = MetricsStream(run_dir / METRICS_FILE)
    result = pretrain(
        train,
        cfg.mode,
        cfg,
        on_record=stream.write,
        on_snapshot=lambda snap: save_snapshot(snap, snapshot_path(run_dir, snap.epoch)),
    )
    result.encoder.save(run_dir / ENCODER_FILE)
    logger.info(
        "cli.pretrain_done",
        extra={"context": {"run_dir": str(run_dir), "searches": result.search_epochs, "checksum": result.encoder.checksum()}},
    )
    return run_dir


def cmd_probe(run_dir: PathLike, cfg: Optional[RunConfig] = None, seeds: Optional[Sequence[int]] = None) -> ProbeReport:
    """Linear-probe a run's encoder over several seeds and write ``probe.json``."""

    run_dir = Path(run_dir)
    checkpoint = run_dir / ENCODER_FILE
    if not checkpoint.is_file():
        raise CheckpointError(
            f"No encoder checkpoint in {run_dir}",
            hint="Probe a directory produced by 'augpolicy pretrain'.",
            context={"missing": str(checkpoint)},
        )
    cfg = cfg or load_run_config(run_dir)
    seeds = list(seeds) if seeds is not None else list(range(cfg.probe.seeds))
    encoder = Encoder.load(checkpoint)
    train, test = load_dataset(cfg, "train"), load_dataset(cfg, "test")
    accuracies = [linear_probe(encoder, train, test, cfg.probe, seed=seed).accuracy for seed in seeds]
    report = ProbeReport(
        run_dir=str(run_dir),
        dataset=cfg.data.source,
        seeds=seeds,
        accuracies=accuracies,
        mean=float(np.mean(accuracies)),
        std=float(np.std(accuracies)),
    )
    (run_dir / PROBE_FILE).write_text(report.model_dump_json(indent=2) + "\n", encoding="utf-8")
    return report


def cmd_search(run_dir: PathLike, mode: Optional[str] = None, cfg: Optional[RunConfig] = None) -> Path:
    """One policy search against a trained encoder; writes ``search_policy.ckpt``."""

    run_dir = Path(run_dir)
    cfg = cfg or load_run_config(run_dir)
    mode = mode or cfg.mode
    if mode == "random":
        raise ConfigError("Policy search needs mode coviews or indepviews", context={"mode": mode})
    checkpoint = run_dir / ENCODER_FILE
    if not checkpoint.is_file():
        raise CheckpointError(f"No encoder checkpoint in {run_dir}", context={"missing": str(checkpoint)})

    encoder = Encoder.load(checkpoint)
    dataset = load_dataset(cfg, "train")
    rng = np.random.default_rng(cfg.seed)
    c = cfg.contrastive
    tracker = EpochLossTracker()
    prime_tracker(encoder, dataset, tracker, rng, batch_size=c.batch_size, temperature=c.temperature,
                  n_tau=cfg.augment.n_tau, augment_cfg=cfg.augment)
    stream = MetricsStream(run_dir / "search_metrics.jsonl")
    snap = search_policy(
        dataset,
        BoundedInfoNCEReward(encoder, tracker, cfg.reward, c.temperature, cfg.augment),
        PolicyMode(mode),
        cfg.ppo,
        cfg.policy,
        rng,
        n_tau=cfg.augment.n_tau,
        epoch=c.epochs,
        on_epoch=lambda stats: stream.write(stats.to_record(c.epochs)),
    )
    return save_snapshot(snap, run_dir / "search_policy.ckpt")


def cmd_inspect(run_dir: PathLike, samples: int = 1000, seed: int = 0) -> Dict[str, Path]:
    """Export operation marginals, co-occurrence counts and independence tests per snapshot."""

    InputValidator.validate_integer(samples, "samples", min_value=1)
    run_dir = Path(run_dir)
    paths = sorted((run_dir / SNAPSHOT_DIR).glob("*.ckpt"))
    if not paths:
        logger.warning("inspect.no_snapshots", extra={"context": {"run_dir": str(run_dir)}})
    stats = inspect_snapshots([load_snapshot(p) for p in paths], samples, seed)
    return {
        "op_probs": write_op_probs(stats, run_dir / "op_probs.csv"),
        "cooccurrence": write_cooccurrence(stats, run_dir / "cooccurrence.csv"),
        "independence": write_independence(stats, run_dir / "independence.csv"),
    }


def cmd_sweep(
    cfg: RunConfig,
    th_values: Sequence[float] = SWEEP_TH,
    b_values: Sequence[float] = (0.2,),
    probe_seeds: int = 1,
) -> Path:
    """Pretrain and probe every (th, b) cell in its own run directory."""

    th_values = InputValidator.validate_number_list(list(th_values), "th")
    b_values = InputValidator.validate_number_list(list(b_values), "b")
    base = Path(cfg.out)
    rows: List[Dict[str, Any]] = []
    for th in th_values:
        for b in b_values:
            cell_dir = base / f"th{th:g}_b{b:g}"
            start = time.perf_counter()
            row: Dict[str, Any] = {"th": th, "b": b, "accuracy": "", "status": "ok"}
            try:
                cell = _with_overrides(cfg, **{"reward.th": th, "reward.b": b, "out": str(cell_dir)})
                cmd_pretrain(cell)
                row["accuracy"] = f"{cmd_probe(cell_dir, cell, seeds=range(probe_seeds)).mean:.6f}"
            except AugPolicyError as exc:
                row["status"] = "error"
                logger.error("sweep.cell_failed", extra={"context": {"th": th, "b": b, "error": exc.message}})
            row["runtime_s"] = f"{time.perf_counter() - start:.2f}"
            rows.append(row)
    return write_rows(base / "sweep.csv", ("th", "b", "accuracy", "runtime_s", "status"), rows)


def cmd_compare(
    cfg: RunConfig,
    modes: Sequence[str] = ("coviews", "indepviews", "random"),
    probe_seeds: Optional[int] = None,
) -> Path:
    """Equal-budget runs for each mode, probed with the same seeds."""

    base = Path(cfg.out)
    seeds = range(probe_seeds if probe_seeds is not None else cfg.probe.seeds)
    rows = []
    for mode in modes:
        run = _with_overrides(cfg, mode=mode, out=str(base / mode))
        cmd_pretrain(run)
        report = cmd_probe(run.out, run, seeds=seeds)
        rows.append({
            "mode": mode,
            "mean": f"{report.mean:.6f}",
            "std": f"{report.std:.6f}",
            "accuracies": " ".join(f"{a:.6f}" for a in report.accuracies),
        })
    return write_rows(base / "compare.csv", ("mode", "mean", "std", "accuracies"), rows)


def cmd_reward_curve(
    out: PathLike,
    th: float = 1.3,
    b_values: Sequence[float] = CURVE_B,
    grid: Optional[Sequence[float]] = None,
) -> Path:
    b_values = InputValidator.validate_number_list(list(b_values), "b")
    points = grid if grid is not None else np.linspace(0.0, 3.0, 61)
    rows = reward_curve(th, b_values, points)
    return write_rows(Path(out) / "reward_curve.csv", ("normalized_loss", "th", "b", "reward"), rows)


def cmd_download(data_dir: PathLike) -> Path:
    return download_cifar10(data_dir)


def cmd_serve(transport: str = "stdio", port: int = 3054) -> None:
    from .tools import create_server

    server = create_server()
    if transport == "stdio":
        server.run(transport="stdio")
    else:
        server.run(transport="http", port=port)


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="Flat key=value config file.")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="Override any config key.")
    parser.add_argument("--mode", choices=("coviews", "indepviews", "random"))
    parser.add_argument("--reward-th", type=float)
    parser.add_argument("--reward-b", type=float)
    parser.add_argument("--k", type=int, help="Policy refresh period in epochs.")
    parser.add_argument("--queue-cap", type=int)
    parser.add_argument("--queue-p", type=float)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--dataset", choices=("synth", "cifar10"))
    parser.add_argument("--data-dir")
    parser.add_argument("--out")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--warmup", type=int)


def config_from_args(args: argparse.Namespace) -> RunConfig:
    """defaults < ``--config`` file < ``--set`` < named flags."""

    overrides: Dict[str, Any] = parse_overrides(args.set)
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = value
    return resolve_config(args.config, overrides)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="augpolicy", description="Adaptive augmentation policy search for contrastive learning.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="Warmup, policy search and contrastive training.")
    _add_run_flags(p)

    p = sub.add_parser("probe", help="Linear evaluation of a run's encoder.")
    p.add_argument("run_dir")
    p.add_argument("--seeds", type=int, help="Number of probe seeds.")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("search", help="One policy search against a trained encoder.")
    p.add_argument("run_dir")
    p.add_argument("--mode", choices=("coviews", "indepviews"))
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("inspect", help="Export policy statistics for every snapshot.")
    p.add_argument("run_dir")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep", help="Threshold/tolerance grid of pretrain + probe runs.")
    _add_run_flags(p)
    p.add_argument("--th", type=float, nargs="+", default=list(SWEEP_TH))
    p.add_argument("--b", type=float, nargs="+", default=[0.2])
    p.add_argument("--probe-seeds", type=int, default=1)

    p = sub.add_parser("compare", help="coviews vs indepviews vs random at equal budget.")
    _add_run_flags(p)
    p.add_argument("--modes", nargs="+", default=["coviews", "indepviews", "random"])
    p.add_argument("--probe-seeds", type=int)

    p = sub.add_parser("reward-curve", help="Tabulate the bounded reward for several tolerances.")
    p.add_argument("--th", type=float, default=1.3)
    p.add_argument("--b", type=float, nargs="+", default=list(CURVE_B))
    p.add_argument("--out", default=".")

    p = sub.add_parser("download", help="Fetch the CIFAR-10 binary archive.")
    p.add_argument("--data-dir", required=True)

    p = sub.add_parser("serve", help="Run the MCP tool server.")
    p.add_argument("--transport", choices=("stdio", "http"), default="stdio")
    p.add_argument("--port", type=int, default=3054)
    return parser


def _run(args: argparse.Namespace) -> Any:
    command = args.command
    if command == "pretrain":
        return cmd_pretrain(config_from_args(args))
    if command == "probe":
        cfg = load_run_config(args.run_dir, parse_overrides(args.set))
        seeds = range(args.seeds) if args.seeds else None
        return cmd_probe(args.run_dir, cfg, seeds=seeds).model_dump()
    if command == "search":
        return cmd_search(args.run_dir, args.mode, load_run_config(args.run_dir, parse_overrides(args.set)))
    if command == "inspect":
        return {name: str(path) for name, path in cmd_inspect(args.run_dir, args.samples, args.seed).items()}
    if command == "sweep":
        return cmd_sweep(config_from_args(args), args.th, args.b, args.probe_seeds)
    if command == "compare":
        return cmd_compare(config_from_args(args), args.modes, args.probe_seeds)
    if command == "reward-curve":
        return cmd_reward_curve(args.out, args.th, args.b)
    if command == "download":
        return cmd_download(args.data_dir)
    if command == "serve":
        return cmd_serve(args.transport, args.port)
    raise ConfigError(f"Unknown command {command!r}")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = _run(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except AugPolicyError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if isinstance(result, dict):
        print(json.dumps(result, indent=2, sort_keys=True))
    elif result is not None:
        print(result)
    return 0


if __name__ == "__main__":
    sys.exit(main())
