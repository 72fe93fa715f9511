"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .config import PRESETS, Config, load_config
from .errors import CheckpointError, ConfigurationError, InputError, TrajherError
from .numerics import SeededRng
from .trainer import EpochMetrics, Trainer, evaluate, score_episode

log = logging.getLogger("trajher")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
ABLATION_ARMS = ("final", "her-both", "her-standard")


class UsageError(TrajherError):
    pass


def resolve_seed(cli_seed: int | None, cfg: Config) -> int:
    if cli_seed is not None:
        return cli_seed
    env_seed = os.environ.get("TRAJHER_SEED")
    if env_seed:
        try:
            return int(env_seed)
        except ValueError:
            raise UsageError(f"TRAJHER_SEED must be an integer, got {env_seed!r}") from None
    return cfg.train.seed


def build_config(path: str | None, preset: str | None, seed: int | None) -> Config:
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file not found: {p}")
        cfg = load_config(p)
    else:
        cfg = Config()
    if preset:
        cfg = cfg.with_preset(preset)
    return cfg.with_overrides({"train.seed": resolve_seed(seed, cfg)})


# -- train ------------------------------------------------------------------

def cmd_train(args) -> int:
    out = Path(args.out)
    if args.resume:
        trainer = checkpoint.load_trainer(args.resume)
        cfg = trainer.config
        if args.config or args.preset:
            wanted = build_config(args.config, args.preset, args.seed or trainer.seed)
            if wanted.digest() != cfg.digest():
                raise CheckpointError(
                    f"config digest mismatch: checkpoint {cfg.digest()[:12]} vs requested {wanted.digest()[:12]}")
    else:
        cfg = build_config(args.config, args.preset, args.seed)
        trainer = Trainer(cfg)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    metrics_path = out / "metrics.csv"
    events_path = out / "events.log"

    fresh = not args.resume or not metrics_path.exists()
    metrics_fh = open(metrics_path, "w" if fresh else "a", newline="")
    events_fh = open(events_path, "w" if fresh else "a")
    writer = csv.writer(metrics_fh, lineterminator="\n")
    if fresh:
        metrics_fh.write(f"# config_digest={cfg.digest()} seed={trainer.seed}\n")
        if args.preset:
            deltas = " ".join(f"{k}={v}" for k, v in PRESETS[args.preset].items())
            metrics_fh.write(f"# preset={args.preset} overrides: {deltas}\n")
        writer.writerow(EpochMetrics.columns())
        metrics_fh.flush()
        (out / "config.txt").write_text(cfg.dump())

    every = max(1, args.checkpoint_every)

    def on_metrics(m: EpochMetrics) -> None:
        writer.writerow(m.row())
        metrics_fh.flush()
        if m.epoch % every == 0:
            checkpoint.save(trainer, ckpt_dir / f"epoch_{m.epoch:04d}.ckpt", include_buffer=False)

    def on_event(ev) -> None:
        events_fh.write(ev.line() + "\n")
        events_fh.flush()

    trainer.on_metrics = on_metrics
    trainer.on_event = on_event
    try:
        start = trainer.epoch
        while trainer.stage != "done":
            if args.epochs is not None and trainer.epoch - start >= args.epochs:
                break
            trainer.step_curriculum()
            # resume point is written after events so stage transitions persist
            checkpoint.save(trainer, out / "resume.ckpt")
        if trainer.stage == "done":
            checkpoint.save(trainer, out / "final.ckpt", include_buffer=False)
    finally:
        metrics_fh.close()
        events_fh.close()
    print(f"trained {trainer.epoch} epochs, {trainer.env_steps} env steps, stage={trainer.stage}, "
          f"status={trainer.status}; outputs in {out}")
    return EXIT_OK


# -- eval -------------------------------------------------------------------

def cmd_eval(args) -> int:
    trainer = checkpoint.load_trainer(args.checkpoint)
    cfg = trainer.config
    seed = resolve_seed(args.seed, cfg)
    rng = SeededRng(seed)
    from .env import CubeCarryEnv

    env = CubeCarryEnv(cfg.env, cfg.dr, rng)
    env.dr_enabled = args.dr
    report = evaluate(trainer.agent, env, args.episodes, args.stuck_recovery, rng,
                      cfg.her, cfg.train.d_xy, cfg.train.d_z)
    log_path = Path(args.log) if args.log else Path(args.checkpoint).with_suffix(".rollouts.jsonl")
    with open(log_path, "w") as fh:
        for i, r in enumerate(report.rollouts):
            for rec in r.records(i):
                fh.write(json.dumps(rec) + "\n")
    print(f"episodes: {args.episodes}")
    print(f"success rate: {report.success_rate:.3f}")
    print(f"score: {report.score_mean:.3f} +- {report.score_std:.3f}")
    print(f"rollout log: {log_path}")
    return EXIT_OK


# -- score ------------------------------------------------------------------

def read_rollout_log(path: Path) -> list[tuple[int, list[dict], int]]:
    """Group a rollout log into episodes: (episode id, records, first line)."""
    episodes: list[tuple[int, list[dict], int]] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}:{lineno}: malformed or truncated record ({exc.msg})") from None
            if not isinstance(rec, dict) or not {"step", "achieved_goal", "active_goal"} <= rec.keys():
                raise InputError(f"{path}:{lineno}: record lacks step/achieved_goal/active_goal")
            ep = rec.get("episode", 0)
            if not episodes or episodes[-1][0] != ep:
                episodes.append((ep, [], lineno))
            episodes[-1][1].append(rec)
    if not episodes:
        raise InputError(f"{path}: rollout log is empty")
    return episodes


def cmd_score(args) -> int:
    path = Path(args.log)
    if not path.is_file():
        raise UsageError(f"rollout log not found: {path}")
    scores = []
    for ep, records, first_line in read_rollout_log(path):
        try:
            s = score_episode(records, args.d_xy, args.d_z)
        except InputError as exc:
            raise InputError(f"{path}: episode {ep} starting at line {first_line}: {exc}") from None
        scores.append(s)
        print(f"episode {ep}: score {s:.6f}")
    mean = float(np.mean(scores))
    std = float(np.std(scores, ddof=1)) if len(scores) > 1 else 0.0
    print(f"mean score: {mean:.6f} +- {std:.6f} over {len(scores)} episodes")
    return EXIT_OK


# -- ablation ---------------------------------------------------------------

def first_reach(steps: list[int], values: list[float], threshold: float) -> float:
    for s, v in zip(steps, values):
        if v >= threshold:
            return float(s)
    return math.inf


def summarize_ablation(rows: list[dict]) -> dict[str, dict]:
    """Per-arm median success curve and threshold crossings."""
    summary = {}
    for arm in dict.fromkeys(r["arm"] for r in rows):
        arm_rows = [r for r in rows if r["arm"] == arm]
        epochs = sorted({r["epoch"] for r in arm_rows})
        steps, medians = [], []
        for e in epochs:
            vals = [r["eval_success"] for r in arm_rows if r["epoch"] == e]
            steps.append(next(r["env_steps"] for r in arm_rows if r["epoch"] == e))
            medians.append(float(np.median(vals)))
        summary[arm] = {
            "steps": steps,
            "median": medians,
            "final_median": medians[-1] if medians else float("nan"),
            "reach_50": first_reach(steps, medians, 0.5),
            "reach_80": first_reach(steps, medians, 0.8),
        }
    return summary


def run_ablation(base: Config, arms, seeds: list[int], budget: int, out: Path) -> list[dict]:
    out.mkdir(parents=True, exist_ok=True)
    per_epoch = (base.train.cycles_per_epoch * base.train.rollouts_per_cycle
                 + base.train.eval_episodes) * base.env.episode_length
    n_epochs = max(1, budget // per_epoch)
    rows: list[dict] = []
    for arm in arms:
        (out / f"config_{arm}.txt").write_text(base.with_preset(arm).dump())
    path = out / "ablation.csv"
    cols = ["arm", "seed", "epoch", "env_steps", "eval_success", "train_success"]
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, cols, lineterminator="\n")
        writer.writeheader()
        for arm in arms:
            for seed in seeds:
                trainer = Trainer(base.with_preset(arm), seed=seed)
                for _ in range(n_epochs):
                    m = trainer.run_epoch()
                    row = {"arm": arm, "seed": seed, "epoch": m.epoch, "env_steps": m.env_steps,
                           "eval_success": m.eval_success, "train_success": m.train_success}
                    rows.append(row)
                    writer.writerow(row)
                    fh.flush()
    return rows


def cmd_ablation(args) -> int:
    base = build_config(args.config, None, args.seed)
    arms = args.arms.split(",") if args.arms else list(ABLATION_ARMS)
    for arm in arms:
        if arm not in PRESETS:
            raise UsageError(f"unknown arm {arm!r}")
    seeds = [base.train.seed + i for i in range(args.seeds)]
    out = Path(args.out)
    rows = run_ablation(base, arms, seeds, args.budget, out)
    summary = summarize_ablation(rows)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["arm", "final_median_success", "median_reach_50_steps", "median_reach_80_steps"])
        for arm, s in summary.items():
            w.writerow([arm, s["final_median"], s["reach_50"], s["reach_80"]])
    ranked = sorted(summary.items(), key=lambda kv: -kv[1]["final_median"])
    print("arm ordering at budget end (median eval success):")
    for arm, s in ranked:
        print(f"  {arm:14s} {s['final_median']:.3f}  reach50={s['reach_50']:.0f} reach80={s['reach_80']:.0f}")
    return EXIT_OK


def cmd_dump_config(args) -> int:
    cfg = build_config(args.config, args.preset, None)
    sys.stdout.write(cfg.dump())
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trajher", description=__doc__.splitlines()[0])
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the two-stage curriculum")
    p.add_argument("config", nargs="?", help="key=value config file (defaults when omitted)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--resume", help="resume from a resume.ckpt written by a previous run")
    p.add_argument("--epochs", type=int, help="stop after this many epochs in this invocation")
    p.add_argument("--checkpoint-every", type=int, default=1, help="epochs between per-epoch checkpoints")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint with the exploiting policy")
    p.add_argument("checkpoint")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--stuck-recovery", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--dr", action="store_true", help="evaluate in the randomised env")
    p.add_argument("--log", help="rollout log path (default next to the checkpoint)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("score", help="score a rollout log")
    p.add_argument("log")
    p.add_argument("--d-xy", type=float, default=0.39)
    p.add_argument("--d-z", type=float, default=0.27)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("ablation", help="compare HER variants over seeds")
    p.add_argument("config", nargs="?")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--seed", type=int, help="first seed (later seeds count up)")
    p.add_argument("--out", required=True)
    p.add_argument("--budget", type=int, default=2_000_000, help="env steps per run")
    p.add_argument("--arms", help=f"comma list, default {','.join(ABLATION_ARMS)}")
    p.set_defaults(func=cmd_ablation)

    p = sub.add_parser("dump-config", help="print the resolved configuration")
    p.add_argument("config", nargs="?")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.set_defaults(func=cmd_dump_config)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrajherError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        print("interrupted; the last completed epoch checkpoint is intact", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
