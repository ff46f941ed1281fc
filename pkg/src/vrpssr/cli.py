"""Command-line entry point: ``vrpssr {generate,train,eval,verify,rollout}``.

Exit codes: 0 success, 1 a verification check failed, 2 usage error.
Outputs go under ``--out`` or, if omitted, under ``$VRPSSR_OUT`` (default
``runs/``).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import signal
import sys
from pathlib import Path

import numpy as np

from . import verify
from .agent import (
    EpisodeRecord,
    QPolicy,
    ResumeMismatchError,
    TrainLog,
    Trainer,
    load_policy_params,
)
from .baselines import POLICIES, run_episode
from .config import RunConfig, resolve
from .env import reset, step, trace_record
from .instance_gen import (
    InstanceError,
    dumps_instance,
    load_instance,
    sample_instance,
)
from .observation import render_frame, write_pgm
from .qnetwork import CheckpointError
from .replay import PrioritizedReplay

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2

log = logging.getLogger("vrpssr")


class UsageError(Exception):
    pass


def _out_dir(args, default_name: str) -> Path:
    if args.out:
        out = Path(args.out)
    else:
        out = Path(os.environ.get("VRPSSR_OUT", "runs")) / default_name
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", default="small", help="paper or small (default: small)")
    p.add_argument("--config", help="JSON run config file")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.FIELD=VALUE",
                   help="override a config field, e.g. training.episodes=100")
    p.add_argument("--seed", type=int, help="run seed")
    p.add_argument("--out", help="output directory")


def _resolve(args) -> RunConfig:
    try:
        return resolve(args.preset, args.config, args.set, args.seed)
    except (ValueError, TypeError, OSError) as e:
        raise UsageError(str(e)) from e


def cmd_generate(args) -> int:
    run = _resolve(args)
    out = _out_dir(args, f"instances-{run.preset}")
    base = run.seed
    entries = []
    for k in range(args.count):
        seed = base + k
        inst = sample_instance(run.instance, seed)
        name = f"instance_{seed:08d}.json"
        (out / name).write_text(dumps_instance(inst))
        entries.append({"file": name, "seed": seed, "customers": inst.num_customers})
    manifest = {"preset": run.preset, "count": args.count, "instances": entries,
                "config": run.instance.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    print(f"wrote {args.count} instance(s) and manifest.json to {out}")
    return EXIT_OK


def _estimate_memory(run: RunConfig) -> dict:
    from .agent import architecture_for
    from .qnetwork import init_params

    arch = architecture_for(run.instance, run.training.frame_stack, run.training.conv_stride)
    n_params = init_params(0, arch).num_parameters()
    replay = PrioritizedReplay.estimate_nbytes(
        run.training.memory_capacity, (arch.in_planes, arch.height, arch.width)
    )
    # online, target, RMSprop accumulator: float32 each
    nets = 3 * 4 * n_params
    return {"parameters": n_params, "replay_bytes": replay, "network_bytes": nets,
            "total_bytes": replay + nets}


def _write_curve(log_: TrainLog, path: Path, window: int) -> None:
    returns = log_.returns()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "return", "trailing_mean"])
        for i, r in enumerate(returns):
            w.writerow([i, f"{r:g}", f"{returns[max(0, i - window + 1): i + 1].mean():.4f}"])


def cmd_train(args) -> int:
    run = _resolve(args)
    out = _out_dir(args, f"train-{run.preset}-seed{run.seed}")
    if args.dry_run:
        print(run.dumps(), end="")
        mem = _estimate_memory(run)
        print(f"estimated memory: {mem['total_bytes'] / 2**30:.2f} GiB "
              f"(replay {mem['replay_bytes'] / 2**30:.2f} GiB, {mem['parameters']} parameters)")
        return EXIT_OK

    ckpt = out / "latest.ckpt"
    log_path = out / "train_log.jsonl"
    if args.resume:
        if not ckpt.exists():
            raise UsageError(f"no checkpoint to resume from at {ckpt}")
        previous = TrainLog.read_jsonl(log_path).records if log_path.exists() else []
        try:
            trainer = Trainer.load(ckpt, run.instance, run.training, log_records=previous)
        except (CheckpointError, ResumeMismatchError) as e:
            raise UsageError(str(e)) from e
        print(f"resumed at episode {trainer.episode}, step {trainer.total_steps}")
    else:
        trainer = Trainer(run.instance, run.training)
    (out / "config.json").write_text(run.dumps())

    window = args.window
    fh = open(log_path, "w")
    for rec in trainer.log.records:
        fh.write(rec.to_json() + "\n")
    fh.flush()

    def save():
        trainer.save(ckpt, include_replay=args.checkpoint_replay)

    def on_episode(t: Trainer, rec: EpisodeRecord) -> None:
        fh.write(rec.to_json() + "\n")
        if args.checkpoint_every and t.episode % args.checkpoint_every == 0:
            fh.flush()
            save()
        if args.print_every and t.episode % args.print_every == 0:
            print(f"episode {rec.episode + 1}: return {rec.episode_return:g}, "
                  f"trailing-{window} mean {t.log.trailing_mean(window):.2f}, "
                  f"eps {rec.epsilon:.3f}, steps {t.total_steps}", flush=True)

    interrupted = False
    previous_handler = signal.getsignal(signal.SIGTERM)
    signal.signal(signal.SIGTERM, lambda *_: (_ for _ in ()).throw(KeyboardInterrupt()))
    try:
        trainer.train(episodes=run.training.episodes, max_steps=args.max_steps, on_episode=on_episode)
    except KeyboardInterrupt:
        interrupted = True
    finally:
        signal.signal(signal.SIGTERM, previous_handler)
        fh.close()
        save()
    _write_curve(trainer.log, out / "training_curve.csv", window)
    state = "interrupted" if interrupted else "finished"
    print(f"{state} after {trainer.episode} episodes; trailing-{window} mean return "
          f"{trainer.log.trailing_mean(window):.2f}; outputs in {out}")
    return EXIT_OK


def _load_checkpoint(path):
    try:
        return load_policy_params(path)
    except (CheckpointError, KeyError) as e:
        raise UsageError(f"{path}: unreadable checkpoint ({e})") from e


def _eval_instances(args, run: RunConfig):
    if args.instances:
        src = Path(args.instances)
        if src.is_dir():
            manifest = json.loads((src / "manifest.json").read_text())
            return [load_instance(src / e["file"]) for e in manifest["instances"]]
        return [load_instance(src)]
    return [sample_instance(run.instance, args.instance_seed + k) for k in range(args.count)]


def cmd_eval(args) -> int:
    run = _resolve(args)
    policies = {}
    for name in args.policy:
        if name not in POLICIES:
            raise UsageError(f"unknown policy {name!r}; choose from {sorted(POLICIES)}")
        policies[name] = POLICIES[name]
    for path in args.checkpoint:
        if not Path(path).exists():
            raise UsageError(f"missing checkpoint {path}")
        params, meta = _load_checkpoint(path)
        policies[f"checkpoint:{Path(path).name}"] = QPolicy(
            params, eps=args.eps, frame_stack=meta["training"].get("frame_stack", 1)
        )
    if not policies:
        raise UsageError("give at least one --policy or --checkpoint")
    try:
        instances = _eval_instances(args, run)
    except (OSError, InstanceError) as e:
        raise UsageError(str(e)) from e
    out = _out_dir(args, f"eval-{run.preset}-seed{run.seed}")

    rows = []
    with open(out / "eval_episodes.jsonl", "w") as fh:
        for name, policy in policies.items():
            rng = np.random.Generator(np.random.PCG64(run.seed))
            records = []
            total_steps = 0
            for inst in instances:
                for _ in range(args.episodes_per_instance):
                    if hasattr(policy, "reset"):
                        policy.reset(reset(inst, observe=False)[0])
                    res = run_episode(inst, policy, rng)
                    total_steps += res.steps
                    rec = EpisodeRecord(
                        episode=len(records), instance_seed=inst.seed,
                        episode_return=res.episode_return, served=res.served,
                        total_customers=res.total_customers, steps=res.steps,
                        epsilon=args.eps if name.startswith("checkpoint:") else float("nan"),
                        total_steps=total_steps, updates=0, wall_time=0.0,
                    )
                    records.append(rec)
                    line = json.loads(rec.to_json())
                    line["policy"] = name
                    fh.write(json.dumps(line) + "\n")
            returns = np.array([r.episode_return for r in records])
            served = np.array([r.served for r in records])
            rows.append({
                "policy": name, "episodes": len(records),
                "mean_return": returns.mean(), "std_return": returns.std(),
                "mean_served": served.mean(), "std_served": served.std(),
                "mean_customers": float(np.mean([r.total_customers for r in records])),
            })
    with open(out / "eval_report.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow(r)
    for r in rows:
        print(f"{r['policy']}: mean return {r['mean_return']:.2f} +- {r['std_return']:.2f}, "
              f"served {r['mean_served']:.2f} of {r['mean_customers']:.2f} ({r['episodes']} episodes)")
    print(f"report in {out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    results = verify.run_all(quick=args.quick)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_CHECK_FAILED if failed else EXIT_OK


def cmd_rollout(args) -> int:
    run = _resolve(args)
    if args.instance:
        try:
            inst = load_instance(args.instance)
        except (OSError, InstanceError) as e:
            raise UsageError(str(e)) from e
    else:
        inst = sample_instance(run.instance, args.instance_seed)
    if args.checkpoint:
        if not Path(args.checkpoint).exists():
            raise UsageError(f"missing checkpoint {args.checkpoint}")
        params, meta = _load_checkpoint(args.checkpoint)
        policy = QPolicy(params, eps=0.0, frame_stack=meta["training"].get("frame_stack", 1))
    elif args.policy in POLICIES:
        policy = POLICIES[args.policy]
    else:
        raise UsageError("give --checkpoint or --policy random|greedy")
    out = _out_dir(args, f"rollout-{inst.seed}")
    rng = np.random.Generator(np.random.PCG64(run.seed))

    state, _ = reset(inst, observe=False)
    if hasattr(policy, "reset"):
        policy.reset(state)
    write_pgm(out / "frame_0000.pgm", render_frame(state))
    k = 0
    with open(out / "trace.jsonl", "w") as fh:
        while not state.terminal:
            action = policy(state, rng)
            res = step(state, action, observe=False)
            k += 1
            fh.write(json.dumps(trace_record(state, action, res)) + "\n")
            write_pgm(out / f"frame_{k:04d}.pgm", render_frame(state))
    print(f"episode return {state.episode_return:g} in {k} steps; {k + 1} frames in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrpssr",
        description="Grid-world vehicle routing: instances, training, evaluation, checks, rollouts.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="sample instances to files")
    _add_config_args(p)
    p.add_argument("--count", type=int, default=10)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train the D3QN agent")
    _add_config_args(p)
    p.add_argument("--resume", action="store_true", help="continue from OUT/latest.ckpt")
    p.add_argument("--dry-run", action="store_true", help="print resolved config and memory estimate")
    p.add_argument("--checkpoint-every", type=int, default=500, help="episodes between checkpoints")
    p.add_argument("--checkpoint-replay", action="store_true",
                   help="include the replay buffer in checkpoints (exact resume)")
    p.add_argument("--window", type=int, default=5000, help="trailing window for mean return")
    p.add_argument("--print-every", type=int, default=100)
    p.add_argument("--max-steps", type=int, help="stop after this many environment steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate policies or checkpoints")
    _add_config_args(p)
    p.add_argument("--policy", action="append", default=[], help="random or greedy (repeatable)")
    p.add_argument("--checkpoint", action="append", default=[], help="training checkpoint (repeatable)")
    p.add_argument("--instances", help="instance file or directory with manifest.json")
    p.add_argument("--count", type=int, default=100, help="instances to sample if --instances absent")
    p.add_argument("--instance-seed", type=int, default=0)
    p.add_argument("--episodes-per-instance", type=int, default=1)
    p.add_argument("--eps", type=float, default=0.05, help="evaluation epsilon for checkpoints")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("verify", help="run the oracle self-check suite")
    p.add_argument("--quick", action="store_true", help="fewer cases per check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("rollout", help="play one episode, write trace and PGM frames")
    _add_config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--policy", default=None)
    p.add_argument("--instance", help="instance file")
    p.add_argument("--instance-seed", type=int, default=0)
    p.set_defaults(func=cmd_rollout)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"vrpssr {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
