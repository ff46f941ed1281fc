"""Random and greedy baselines on sampled instances, with the offline bound where it is computable.

    python scripts/run_baselines.py --preset small --count 200
"""
import argparse

import numpy as np

from vrpssr.baselines import greedy_policy, random_policy, run_episode
from vrpssr.config import resolve
from vrpssr.instance_gen import sample_instance
from vrpssr.oracle import OracleSizeError, offline_optimal


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="small")
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--instance-seed", type=int, default=0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    run = resolve(args.preset)
    rng = np.random.default_rng(args.seed)
    rows = {"random": [], "greedy": []}
    bounds = []
    for k in range(args.count):
        inst = sample_instance(run.instance, args.instance_seed + k)
        rows["random"].append(run_episode(inst, random_policy, rng).episode_return)
        rows["greedy"].append(run_episode(inst, greedy_policy, rng).episode_return)
        try:
            bounds.append((k, offline_optimal(inst, max_horizon=max(40, run.instance.horizon))))
        except OracleSizeError:
            pass
    for name, r in rows.items():
        print(f"{name:>7}: mean {np.mean(r):7.2f}  std {np.std(r):6.2f}")
    if bounds:
        idx = [k for k, _ in bounds]
        b = np.array([v for _, v in bounds])
        print(f"offline bound on {len(bounds)} instances: mean {b.mean():.2f}; "
              f"greedy on the same {np.mean(np.array(rows['greedy'])[idx]):.2f}")


if __name__ == "__main__":
    main()
