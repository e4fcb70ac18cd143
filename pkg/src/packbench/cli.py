"""Command-line entry point: ``packbench {gen,pack,train,eval,sweep,render}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bench import (
    CONFIG_KEYS,
    ConfigError,
    ExperimentConfig,
    episode_for,
    export_plan,
    load_config,
    make_planner,
    plan_document,
    replay_frames,
    rows_to_csv,
    run_episode,
    run_sweep,
    write_frames,
)

log = logging.getLogger("packbench")

BASELINES = ("random", "hm", "packit", "stable_hm")


def _box(text: str) -> tuple[float, float, float]:
    parts = [float(v) for v in text.replace(",", "x").split("x") if v]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("box must look like 400x400x300")
    return tuple(parts)  # type: ignore[return-value]


def _base_config(args) -> ExperimentConfig:
    """Config file (if any), then explicit flags on top."""
    overrides = {
        "planner": getattr(args, "planner", None),
        "seed": getattr(args, "seed", None),
        "difficulty": getattr(args, "difficulty", None),
        "box_mm": getattr(args, "box", None),
        "resolution": getattr(args, "resolution", None),
        "pool_size": getattr(args, "pool_size", None),
        "episodes": getattr(args, "episodes", None),
        "checkpoint": getattr(args, "checkpoint", None),
        "k": getattr(args, "k", None),
        "record_latency": True if getattr(args, "timing", False) else None,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    if getattr(args, "config", None):
        base, _ = load_config(args.config, **overrides)
        return base
    return ExperimentConfig(**overrides)


def _add_common(p: argparse.ArgumentParser, planner: bool = True) -> None:
    p.add_argument("--config", help="flat key = value config file")
    if planner:
        p.add_argument("--planner", help="planner preset")
    p.add_argument("--seed", type=int)
    p.add_argument("--difficulty", choices=("easy", "hard"))
    p.add_argument("--box", type=_box, help="box extents in mm, e.g. 400x400x300")
    p.add_argument("--resolution", type=int, help="cells along the box length")
    p.add_argument("--pool-size", type=int)


def cmd_gen(args) -> int:
    config = _base_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in range(config.seed, config.seed + args.count):
        ep = episode_for(config, seed)
        (out / f"episode_{seed}.json").write_text(ep.manifest_json())
        if args.voxels:
            from .voxio import save

            vdir = out / f"episode_{seed}"
            vdir.mkdir(exist_ok=True)
            for m in ep.objects:
                save(m.grid, vdir / f"{m.id}.pkvx")
    print(f"wrote {args.count} episode manifest(s) to {out}")
    return 0


def cmd_pack(args) -> int:
    config = _base_config(args)
    episode = episode_for(config, config.seed)
    report = run_episode(config, episode, make_planner(config))
    doc = plan_document(report, config, episode)
    print(json.dumps({"config_hash": report.config_hash, "planner": report.planner, **doc["metrics"]}, sort_keys=True))
    if args.export:
        path = export_plan(report, config, episode, args.export)
        log.info("plan written to %s", path)
    if report.termination == "planner_error":
        print(f"planner error: {report.diagnostic}", file=sys.stderr)
        return 1
    return 0


def cmd_train(args) -> int:
    from .hrl.checkpoint import load_checkpoint, save_checkpoint
    from .hrl.train import TOY_SCHEDULE, TrainSchedule, schedule_dict, toy_config, toy_source, train

    fields = {
        "stage": args.stage,
        "epochs": args.epochs,
        "episodes_per_epoch": args.episodes_per_epoch,
        "updates_per_epoch": args.updates_per_epoch,
        "lr": args.lr,
        "discount": args.discount,
        "input_resolution": args.input_resolution,
        "k": args.k,
    }
    fields = {k: v for k, v in fields.items() if v is not None}
    schedule = replace(TOY_SCHEDULE, **fields) if args.task == "toy" else TrainSchedule(**fields)
    if args.task == "toy":
        config = toy_config()
        source = toy_source(args.seed)
    else:
        config = _base_config(args)
        source = lambda n: episode_for(config, config.seed + 1_000_000 + n)  # noqa: E731
    worker = manager = None
    if args.init:
        nets, _ = load_checkpoint(args.init)
        worker, manager = nets.get("worker"), nets.get("manager")

    def progress(row: dict) -> None:
        log.info("epoch %d  J=%.4f  loss_w=%.5f  eps=%.3f", row["epoch"], row["mean_J"], row["loss_worker"], row["epsilon"])

    result = train(source, schedule, config, seed=args.seed, worker=worker, manager=manager, progress=progress)
    meta = {"schedule": schedule_dict(schedule), "config_hash": config.config_hash(), "config": config.to_dict(), "task": args.task, "seed": args.seed}
    save_checkpoint(args.checkpoint, {"worker": result.worker, "manager": result.manager}, meta)
    log_path = Path(args.log) if args.log else Path(str(args.checkpoint) + ".log.csv")
    log_path.write_text(result.log_csv())
    print(f"checkpoint {args.checkpoint}  log {log_path}")
    return 0


def cmd_eval(args) -> int:
    config = _base_config(args)
    if args.task == "toy":
        from .hrl.train import toy_config, toy_episode

        config = toy_config(checkpoint=config.checkpoint, seed=config.seed, episodes=config.episodes, k=config.k)
        episodes = lambda s: toy_episode(s)  # noqa: E731
    else:
        episodes = lambda s: episode_for(config, s)  # noqa: E731
    planners = list(BASELINES) + ["bbox_learned", "learned_hm", "learned"]
    rows = []
    seeds = config.episode_seeds()
    for name in planners:
        cfg = replace(config, planner=name)
        try:
            planner = make_planner(cfg)
        except (ConfigError, ValueError) as exc:
            log.warning("skipping %s: %s", name, exc)
            continue
        reports = [run_episode(cfg, episodes(s), planner) for s in seeds]
        n = len(reports)
        rows.append(
            {
                "config_hash": cfg.config_hash(),
                "label": "eval",
                "planner": name,
                "difficulty": cfg.difficulty if args.task != "toy" else "toy",
                "episodes": n,
                "failures": sum(r.termination == "planner_error" for r in reports),
                "C": sum(r.metrics.C for r in reports) / n,
                "P": sum(r.metrics.P for r in reports) / n,
                "S": sum(r.metrics.S for r in reports) / n,
                "packed_count": sum(r.metrics.packed_count for r in reports) / n,
                "latency_s": sum(r.metrics.latency_per_object for r in reports) / n if cfg.record_latency else float("nan"),
            }
        )
    _emit(rows_to_csv(rows), args.out)
    return 0


def cmd_sweep(args) -> int:
    overrides = {"record_latency": True} if args.timing else {}
    base, configs = load_config(args.config, **overrides)
    rows = run_sweep(configs, base=base)
    _emit(rows_to_csv(rows), args.out)
    return 0


def cmd_render(args) -> int:
    doc = json.loads(Path(args.plan).read_text())
    paths = write_frames(replay_frames(doc), args.out)
    print(f"wrote {len(paths)} frame(s) to {args.out}")
    return 0


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="packbench", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate episode manifests")
    _add_common(p, planner=False)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--voxels", action="store_true", help="also write PKVX voxel files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pack", help="pack one episode")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int)
    p.add_argument("--export", help="directory for plan.json and PGM frames")
    p.add_argument("--timing", action="store_true", help="include planning latency in outputs")
    p.set_defaults(func=cmd_pack)

    p = sub.add_parser("train", help="train the scorers")
    _add_common(p, planner=False)
    p.add_argument("--task", choices=("toy", "synthetic"), default="toy")
    p.add_argument("--stage", choices=("worker_pretrain", "joint"), default="worker_pretrain")
    p.add_argument("--epochs", type=int)
    p.add_argument("--episodes-per-epoch", type=int)
    p.add_argument("--updates-per-epoch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--discount", type=float)
    p.add_argument("--input-resolution", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--init", help="checkpoint to continue from")
    p.add_argument("--checkpoint", required=True, help="output checkpoint path")
    p.add_argument("--log", help="training log CSV (default: <checkpoint>.log.csv)")
    p.set_defaults(func=cmd_train, seed=0)

    p = sub.add_parser("eval", help="compare a checkpoint against the baselines")
    _add_common(p, planner=False)
    p.add_argument("--task", choices=("toy", "synthetic"), default="synthetic")
    p.add_argument("--checkpoint")
    p.add_argument("--k", type=int)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--timing", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="run a config-file driven sweep")
    p.add_argument("config")
    p.add_argument("--timing", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("render", help="plan JSON to PGM frames")
    p.add_argument("plan")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        parser.exit(2, f"packbench: config error: {exc}\n")
    return 0  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "CONFIG_KEYS"]
