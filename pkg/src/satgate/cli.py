"""Command line entry points.

    satgate train   --config cfg [--seed N] [--out DIR]
    satgate eval    --config cfg --checkpoint policy.ckpt [--episodes N] [--jobs N]
    satgate ablate  --config cfg [--episodes N] [--eval-episodes N]
    satgate gen-topo --devices N --degree F [--seed N] [--file PATH]
    satgate policy inspect --checkpoint policy.ckpt

Exit codes: 0 success, 1 config or input error, 2 runtime abort.
All CSV outputs use fixed precision and carry no timestamps, so identical
invocations produce identical bytes.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import states
from .config import (ConfigError, EnvConfig, ExperimentConfig, dump_config,
                     load_config)
from .loop import evaluate, normalize_curve, train
from .ppo import CheckpointError, action_probs, load_checkpoint, save_checkpoint, value_estimate
from .topology import TopologyError, generate_topology


def _load(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out_dir = args.out
    if args.jobs is not None:
        cfg.run.jobs = args.jobs
    cfg.validate()
    return cfg


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_steps(path: Path, rows) -> None:
    with open(path, "w") as fh:
        fh.write("episode\tt\tstate\taction\trejected\tfeedback\tpost_violated\tterminal\n")
        for episode, record in rows:
            fh.write(f"{episode}\t{record.tsv()}\n")


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    result = train(cfg)
    hyper = dataclasses.asdict(cfg.ppo)
    save_checkpoint(out / "policy.ckpt", result.params, hyper)
    norm = normalize_curve(result.curve)
    with open(out / "learning_curve.csv", "w") as fh:
        fh.write("episode,raw_reward,normalized_reward\n")
        for i, (raw, nn) in enumerate(zip(result.curve, norm)):
            fh.write(f"{i},{raw:.6f},{nn:.6f}\n")
    (out / "config_resolved.cfg").write_text(dump_config(cfg))
    (out / "constraints.txt").write_text(result.cs.dump())
    if cfg.run.step_log:
        _write_steps(out / "steps.tsv", result.step_rows)
    print(f"trained {cfg.run.episodes} episodes "
          f"(outcomes: {result.outcomes.count('attack_end')} end, "
          f"{result.outcomes.count('attack_goal')} goal, "
          f"{result.outcomes.count('truncated')} truncated)")
    print(f"wrote {out / 'policy.ckpt'} and {out / 'learning_curve.csv'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _outdir(cfg)
    params, _ = load_checkpoint(args.checkpoint)
    n = args.episodes if args.episodes is not None else cfg.run.eval_episodes
    metrics = evaluate(params, cfg, n, jobs=cfg.run.jobs)
    with open(out / "summary.csv", "w") as fh:
        fh.write("episodes,success_rate,goal_rate,truncation_rate,mean_reward\n")
        fh.write(f"{metrics.episodes},{metrics.success_rate:.4f},"
                 f"{metrics.goal_rate:.4f},{metrics.truncation_rate:.4f},"
                 f"{metrics.mean_reward:.6f}\n")
    with open(out / "cdf.csv", "w") as fh:
        fh.write("t,fraction\n")
        for t, frac in metrics.cdf():
            fh.write(f"{t},{frac:.4f}\n")
    print(f"evaluated {n} episodes: success {metrics.success_rate:.4f}, "
          f"goal {metrics.goal_rate:.4f}, mean reward {metrics.mean_reward:.2f}")
    return 0


def cmd_ablate(args) -> int:
    """Train and evaluate both gate arms over attacker kinds and topologies."""
    cfg = _load(args)
    out = _outdir(cfg)
    episodes = args.episodes if args.episodes is not None else cfg.run.episodes
    eval_n = args.eval_episodes if args.eval_episodes is not None else cfg.run.eval_episodes
    incentive = cfg.reward.attack_end_incentive
    rows = []
    for kind in ("naive", "stealthy", "aggressive"):
        for devices in cfg.run.topo_sizes:
            for presat in (True, False):
                sub = cfg.copy()
                sub.attacker.kind = kind
                sub.env.n_devices = devices
                sub.run.episodes = episodes
                sub.run.disable_pre_sat = not presat
                result = train(sub)
                metrics = evaluate(result.params, sub, eval_n, jobs=cfg.run.jobs)
                rows.append((kind, devices, "on" if presat else "off",
                             metrics.mean_reward, metrics.mean_reward / incentive,
                             metrics.success_rate))
                print(f"{kind} devices={devices} presat={'on' if presat else 'off'}: "
                      f"mean reward {metrics.mean_reward:.2f}, "
                      f"success {metrics.success_rate:.4f}")
    with open(out / "compare.csv", "w") as fh:
        fh.write("attacker,devices,presat,mean_reward,mean_reward_norm,success_rate\n")
        for kind, devices, arm, mr, mrn, sr in rows:
            fh.write(f"{kind},{devices},{arm},{mr:.6f},{mrn:.6f},{sr:.4f}\n")
    print(f"wrote {out / 'compare.csv'}")
    return 0


def cmd_gen_topo(args) -> int:
    cfg = EnvConfig(n_devices=args.devices, mean_degree=args.degree)
    try:
        cfg.validate()
    except ConfigError as exc:
        raise ConfigError(str(exc).replace("env.", "--")) from None
    topo = generate_topology(cfg, args.seed if args.seed is not None else 0)
    path = Path(args.file) if args.file else Path(args.out or "out") / "topology.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    topo.save(path)
    print(f"devices {topo.n_devices}, edges {topo.m}, detectors {topo.m}, "
          f"total cost {topo.total_cost:.2f}")
    print(f"wrote {path}")
    return 0


def cmd_policy_inspect(args) -> int:
    params, hyper = load_checkpoint(args.checkpoint)
    print(f"checkpoint {args.checkpoint}")
    print(f"hyperparameters: {hyper}")
    print("state | value | action probabilities")
    for s in range(states.N_STATES):
        feats = states.state_features(s)
        probs = action_probs(params, feats)
        value = value_estimate(params, feats)
        dist = " ".join(f"{p:.3f}" for p in probs)
        print(f"{s:5d} | {value:8.3f} | {dist}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="satgate",
                                     description="satisfiability-gated defense agent")
    parser.add_argument("--config", help="experiment config file")
    parser.add_argument("--seed", type=int, help="override run.seed")
    parser.add_argument("--out", help="override run.out_dir")
    parser.add_argument("--jobs", type=int, help="override run.jobs (evaluation shards)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy and write checkpoint + curve")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="compare gate-on vs gate-off arms")
    p.add_argument("--episodes", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gen-topo", help="generate and save a topology")
    p.add_argument("--devices", type=int, required=True)
    p.add_argument("--degree", type=float, required=True)
    p.add_argument("--file", help="output path (default <out>/topology.txt)")
    p.set_defaults(func=cmd_gen_topo)

    p = sub.add_parser("policy", help="policy utilities")
    psub = p.add_subparsers(dest="policy_command", required=True)
    pi = psub.add_parser("inspect", help="print per-state action distributions")
    pi.add_argument("--checkpoint", required=True)
    pi.set_defaults(func=cmd_policy_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TopologyError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, FloatingPointError, ValueError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
