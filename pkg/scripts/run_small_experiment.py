"""Train the small preset and compare the final episodes with random and greedy play.

    python scripts/run_small_experiment.py --out runs/small --seed 0
"""
import argparse
import json
import time
from pathlib import Path

import numpy as np

from vrpssr.agent import Trainer
from vrpssr.baselines import greedy_policy, random_policy, run_episode
from vrpssr.config import resolve
from vrpssr.instance_gen import sample_instance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/small-experiment")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--episodes", type=int, default=2000)
    ap.add_argument("--window", type=int, default=200)
    ap.add_argument("--set", action="append", default=[], help="config override, e.g. training.huber=1.0")
    args = ap.parse_args()

    run = resolve("small", overrides=args.set, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(run.dumps())

    trainer = Trainer(run.instance, run.training)
    t0 = time.perf_counter()

    def progress(t, rec):
        if t.episode % 250 == 0:
            print(f"episode {t.episode}: trailing-{args.window} {t.log.trailing_mean(args.window):.2f}, "
                  f"eps {rec.epsilon:.3f}, {time.perf_counter() - t0:.0f}s", flush=True)

    trainer.train(episodes=args.episodes, on_episode=progress)
    trainer.log.write_jsonl(out / "train_log.jsonl")
    trainer.save(out / "final.ckpt")

    tail = trainer.log.records[-args.window:]
    rng = np.random.default_rng(args.seed + 100)
    rand, greedy = [], []
    for r in tail:
        inst = sample_instance(run.instance, r.instance_seed)
        rand.append(run_episode(inst, random_policy, rng).episode_return)
        greedy.append(run_episode(inst, greedy_policy, rng).episode_return)
    summary = {
        "agent": float(np.mean([r.episode_return for r in tail])),
        "random": float(np.mean(rand)),
        "greedy": float(np.mean(greedy)),
        "seconds": time.perf_counter() - t0,
    }
    summary["agent_over_random"] = summary["agent"] / summary["random"]
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()
