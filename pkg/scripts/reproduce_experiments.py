#!/usr/bin/env python3
"""Run the full desk-scale experiment suite through the CLI.

For each attacker kind and seed: train on the 100-device topology, then
evaluate the frozen policy over 500 episodes (success rate and the
time-to-end CDF).  Afterwards run the gate-on/gate-off ablation across both
topology sizes.  Outputs land under --out in one directory per run:

    <out>/<kind>/seed<k>/policy.ckpt, learning_curve.csv, summary.csv, cdf.csv
    <out>/ablation/compare.csv

With --quick everything shrinks to a few minutes for a smoke pass; results
are then indicative only.
"""

import argparse
import csv
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from satgate.cli import main as satgate  # noqa: E402

KINDS = ("naive", "stealthy", "aggressive")


def run(argv):
    code = satgate([str(a) for a in argv])
    if code != 0:
        sys.exit(f"satgate {' '.join(str(a) for a in argv)} exited {code}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out/experiments")
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 4, 7])
    ap.add_argument("--quick", action="store_true",
                    help="tiny episode counts for a smoke pass")
    ap.add_argument("--skip-ablation", action="store_true")
    args = ap.parse_args()

    out = Path(args.out)
    eval_episodes = 20 if args.quick else 500

    for kind in KINDS:
        cfg = REPO / "configs" / f"{kind}.cfg"
        if args.quick:
            # same attacker, minute-scale sizes
            small = cfg.read_text() + (
                "\nenv.n_devices = 20\nenv.mean_degree = 3.0\n"
                "env.initial_compromised = 2\nenv.episode_cap = 100\n"
                "run.episodes = 20\nrun.eval_episodes = 20\n")
            out.mkdir(parents=True, exist_ok=True)
            cfg = out / f"quick_{kind}.cfg"
            cfg.write_text(small)
        for seed in args.seeds:
            run_dir = out / kind / f"seed{seed}"
            base = ["--config", cfg, "--seed", seed, "--out", run_dir]
            run(base + ["train"])
            run(base + ["eval", "--checkpoint", run_dir / "policy.ckpt",
                        "--episodes", eval_episodes])

    print("\n== evaluation summary ==")
    for kind in KINDS:
        for seed in args.seeds:
            with open(out / kind / f"seed{seed}" / "summary.csv") as fh:
                row = list(csv.DictReader(fh))[0]
            print(f"{kind:10s} seed {seed}: success {row['success_rate']} "
                  f"goal {row['goal_rate']} mean reward {row['mean_reward']}")

    if not args.skip_ablation:
        abl_cfg = REPO / "configs" / "ablation.cfg"
        abl_cmd = ["--out", out / "ablation", "ablate"]
        if args.quick:
            small = abl_cfg.read_text() + (
                "\nenv.mean_degree = 3.0\nenv.initial_compromised = 2\n"
                "env.episode_cap = 100\nrun.topo_sizes = 20\n")
            abl_cfg = out / "quick_ablation.cfg"
            abl_cfg.write_text(small)
            abl_cmd += ["--episodes", "20", "--eval-episodes", "20"]
        run(["--config", abl_cfg] + abl_cmd)
        print(f"\nablation table: {out / 'ablation' / 'compare.csv'}")


if __name__ == "__main__":
    main()
