"""Long training run on the full-scale ``paper`` preset (about 5M environment steps).

Thin wrapper over ``vrpssr train`` with periodic checkpoints that include the
replay buffer, so an interrupted run can be resumed exactly.  At full capacity
the replay snapshot is several GiB; pass ``--no-replay`` to save space
at the cost of an inexact resume:

    python scripts/run_full_scale.py --out runs/full
    python scripts/run_full_scale.py --out runs/full --resume
"""
import argparse
import sys

from vrpssr.cli import main as cli_main


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/full")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--resume", action="store_true")
    ap.add_argument("--checkpoint-every", type=int, default=250)
    ap.add_argument("--no-replay", action="store_true", help="leave the replay buffer out of checkpoints")
    args = ap.parse_args()
    argv = ["train", "--preset", "paper", "--seed", str(args.seed), "--out", args.out,
            "--checkpoint-every", str(args.checkpoint_every),
            "--window", "5000", "--print-every", "100"]
    if not args.no_replay:
        argv.append("--checkpoint-replay")
    if args.resume:
        argv.append("--resume")
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
