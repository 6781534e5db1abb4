"""Command-line entry point: ``semapower <subcommand> [--config FILE] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .approximator import NetworkSpec, gradcheck
from .baselines import bo_configure, hu_policy, oracle_episode, write_oracle_csv
from .config import ConfigError, RunConfig, load_config
from .env import CoverageEnv, ScenarioConfig, semantic_objective
from .harness import SweepSpec, run_sweep
from .images import load_image
from .marl import TrainingConfig, Trainer, load_trained_agents, write_metrics_csv
from .semantics import psnr, quantize, ssim
from .validation import greedy_policy

log = logging.getLogger("semapower")


def _common(p: argparse.ArgumentParser, out: bool = True):
    p.add_argument("--config", help="flat key=value configuration file")
    p.add_argument("--seed", type=int, help="override the master seed")
    if out:
        p.add_argument("--out", default=".", help="output directory (default: current directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semapower", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train SAMA-D3QL (or BO) and write a checkpoint plus metrics CSV")
    _common(p)
    p.add_argument("--method", choices=("SAMA", "BO"), default="SAMA")
    p.add_argument("--resume", help="checkpoint directory to continue from")

    p = sub.add_parser("eval", help="run test episodes for a trained checkpoint or the HU heuristic")
    _common(p)
    p.add_argument("--method", choices=("SAMA", "BO", "HU"), default="SAMA")
    p.add_argument("--checkpoint", help="checkpoint directory (SAMA/BO)")
    p.add_argument("--episodes", type=int, help="number of test episodes (default: test_episodes)")

    p = sub.add_parser("sweep", help="run a parameter sweep and write results.csv")
    _common(p)
    p.add_argument("--workers", type=int, help="parallel worker processes")

    p = sub.add_parser("oracle", help="exhaustive per-slot optimum over one episode")
    _common(p)

    p = sub.add_parser("quality-table", help="print the quality model built from the configured image")
    _common(p, out=False)

    p = sub.add_parser("gradcheck", help="finite-difference check of the network gradient")
    _common(p, out=False)
    p.add_argument("--cases", type=int, default=100)
    p.add_argument("--tolerance", type=float, default=1e-4)

    p = sub.add_parser("accept", help="run the acceptance criteria and write accept.csv")
    _common(p)
    p.add_argument("--only", help="comma-separated criterion numbers")
    return parser


def _load(args) -> RunConfig:
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = RunConfig(ScenarioConfig(), TrainingConfig(), {})
    if args.seed is not None:
        cfg.scenario = cfg.scenario.replace(seed=args.seed)
    return cfg


def _out(args) -> Path:
    d = Path(args.out)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_train(args) -> int:
    cfg = _load(args)
    scenario = bo_configure(cfg.scenario) if args.method == "BO" else cfg.scenario
    trainer = Trainer(scenario, cfg.training)
    if args.resume:
        trainer.load_checkpoint(args.resume)
    remaining = max(0, cfg.training.train_episodes - trainer.episodes_done)
    train_records = trainer.train(remaining)
    out = _out(args)
    trainer.save_checkpoint(out / "checkpoint")
    test_records = trainer.test()
    write_metrics_csv([r.row() for r in train_records + test_records], out / "metrics.csv")
    obj = np.mean([r.objective for r in test_records]) if test_records else float("nan")
    print(f"trained {trainer.episodes_done - len(test_records)} episodes; test objective {obj:.6f}")
    print(f"checkpoint: {out / 'checkpoint'}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    scenario = bo_configure(cfg.scenario) if args.method == "BO" else cfg.scenario
    env = CoverageEnv(scenario)
    if args.method == "HU":
        policy = hu_policy
    else:
        if not args.checkpoint:
            raise ConfigError("--checkpoint is required for SAMA/BO evaluation")
        agents = load_trained_agents(args.checkpoint)
        expected = NetworkSpec(env.obs_width, env.num_actions)
        if len(agents) != env.num_agents or agents[0].spec.input_width != expected.input_width \
                or agents[0].spec.n_actions != expected.n_actions:
            raise ConfigError("checkpoint does not match the configured scenario/method")
        policy = greedy_policy(agents)
    episodes = args.episodes or cfg.training.test_episodes
    out = _out(args)
    n = env.num_agents
    objectives = []
    with open(out / "trace.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "t", *(f"a{i}" for i in range(n)), *(f"rate{i}" for i in range(n)), "reward"])
        for ep in range(episodes):
            obs = env.reset(seed=ep)
            trace, done = [], False
            while not done:
                res = env.step(policy(obs, env))
                trace.append(res)
                w.writerow([ep, res.t, *res.actions, *(repr(float(r)) for r in res.rates), repr(res.reward)])
                obs, done = res.observations, res.done
            objectives.append(semantic_objective(trace))
    print(f"{args.method}: mean semantic objective {np.mean(objectives):.6f} over {episodes} episodes")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load(args)
    spec = SweepSpec.from_mapping(cfg.sweep)
    if args.seed is not None:
        spec = SweepSpec(spec.variable, spec.values, (args.seed,), spec.methods, spec.images)
    workers = args.workers or cfg.sweep.get("workers") or 1
    out = _out(args)
    rows = run_sweep(spec, cfg.scenario, cfg.training, out / "results.csv", workers=workers)
    failed = sum(r.error is not None for r in rows)
    print(f"{len(rows)} rows written to {out / 'results.csv'} ({failed} failed)")
    return 0


def cmd_oracle(args) -> int:
    cfg = _load(args)
    env = CoverageEnv(cfg.scenario)
    rows = oracle_episode(env)
    out = _out(args)
    write_oracle_csv(rows, env.num_agents, out / "oracle.csv")
    print(f"oracle mean per-slot objective {np.mean([r[2] for r in rows]):.6f}; written to {out / 'oracle.csv'}")
    return 0


def cmd_quality_table(args) -> int:
    cfg = _load(args)
    sc = cfg.scenario
    env = CoverageEnv(sc)
    img = load_image(sc.image)
    print(f"image {sc.image}  reward metric {sc.reward_metric}  psnr cap {sc.psnr_cap} dB")
    print(f"{'bits':>4} {'threshold':>10} {'psnr_dB':>8} {'ssim':>7} {'q_psnr':>7} {'q_reward':>8}")
    for b in range(1, 9):
        qi = quantize(img, b)
        print(f"{b:>4} {sc.thresholds[b - 1]:>10.4g} {psnr(qi, img):>8.3f} {ssim(qi, img):>7.4f} "
              f"{env.eval_model.qualities[b - 1]:>7.4f} {env.reward_model.qualities[b - 1]:>8.4f}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _load(args)
    env = CoverageEnv(cfg.scenario)
    spec = NetworkSpec(env.obs_width, env.num_actions, cfg.training.lstm_units, cfg.training.dense)
    res = gradcheck(spec, cases=args.cases, history=cfg.scenario.history, seed=args.seed or 0)
    for group, err in res.per_group.items():
        print(f"  {group:8s} worst block error {err:.3e}")
    print(f"max relative error {res.max_rel_error:.3e} over {args.cases} cases (all blocks pooled per case)")
    if res.max_rel_error > args.tolerance:
        print(f"FAILED: exceeds tolerance {args.tolerance:g}", file=sys.stderr)
        return 1
    return 0


def cmd_accept(args) -> int:
    from .validation import run_acceptance

    only = {int(x) for x in args.only.split(",")} if args.only else None
    report = run_acceptance(only, echo=print)
    out = _out(args)
    report.write_csv(out / "accept.csv")
    (out / "accept.txt").write_text(report.text() + "\n")
    print(report.text().splitlines()[-1])
    return 0 if report.passed else 1


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "oracle": cmd_oracle,
            "quality-table": cmd_quality_table, "gradcheck": cmd_gradcheck, "accept": cmd_accept}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FileNotFoundError, ConfigError, ValueError, KeyError) as exc:
        print(f"semapower {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
