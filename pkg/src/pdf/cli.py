"""Command-line entry points.

Subcommands:
  pdf train-bc        clone the frozen policy from scripted demonstrations
  pdf run             run one variant over all (seed, task) cells
  pdf sweep-budget    pdf_full across a list of max view budgets
  pdf compare-voting  the configured variant under both voting modes

Exit codes: 0 success, 2 configuration error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from typing import List, Optional

from . import runner
from .config import load_config
from .env import ShiftSpec
from .policy import PolicySnapshot
from .types import BaselineSpec, ConfigError, NumericError, PdfError

_VOTE_ALIASES = {"dim": "dim_wise", "dim_wise": "dim_wise",
                 "action": "action_wise", "action_wise": "action_wise"}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=None, help="experiment config file")
    p.add_argument("--snapshot", default="snapshot.pdfw",
                   help="frozen policy weight file (from train-bc)")
    p.add_argument("--out", default=None, help="metrics output path")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    p.add_argument("--vote", choices=sorted(_VOTE_ALIASES), default=None,
                   help="voting mode: dim(_wise) or action(_wise)")
    p.add_argument("--lambda", dest="perturb_scale", type=float, default=None,
                   help="perturbation scale on the head output")
    p.add_argument("--lambda-kl", dest="kl_weight", type=float, default=None,
                   help="weight of the success-gated KL anchor")
    p.add_argument("--baseline", default=None,
                   help="feedback baseline: fixed:<value> or mean:<window>")
    p.add_argument("--lr", type=float, default=None, help="adaptation step size")
    p.add_argument("--batch", type=int, default=None, help="records per grad step")
    p.add_argument("--steps-per-episode", type=int, default=None,
                   help="grad steps after each episode")
    p.add_argument("--n-max", type=int, default=None, help="max views per step")
    p.add_argument("--episodes", type=int, default=None,
                   help="adaptation episodes per (seed, task)")
    p.add_argument("--eval-rollouts", type=int, default=None)
    p.add_argument("--seeds", default=None,
                   help="comma-separated experiment seeds, e.g. 0,1,2")
    p.add_argument("--tasks", type=int, default=None, help="number of task layouts")
    p.add_argument("--shift", default=None,
                   help="env shift, e.g. none, pose_shift(2), distractor(3)")


def _apply_overrides(config, args) -> "runner.ExperimentConfig":
    hp = config.hp
    if args.perturb_scale is not None:
        hp = replace(hp, perturb_scale=args.perturb_scale)
    if args.kl_weight is not None:
        hp = replace(hp, kl_weight=args.kl_weight)
    if args.baseline is not None:
        hp = replace(hp, baseline=BaselineSpec.parse(args.baseline))
    if args.lr is not None:
        hp = replace(hp, learning_rate=args.lr)
    if args.batch is not None:
        hp = replace(hp, batch_size=args.batch)
    if args.steps_per_episode is not None:
        hp = replace(hp, grad_steps_per_episode=args.steps_per_episode)
    if args.n_max is not None:
        hp = replace(hp, n_max=args.n_max)
    config = replace(config, hp=hp)

    env = config.env
    if args.shift is not None:
        env = replace(env, shift=ShiftSpec.parse(args.shift))
        config = replace(config, env=env)
    if args.vote is not None:
        config = replace(config, vote_mode=_VOTE_ALIASES[args.vote])
    if args.episodes is not None:
        config = replace(config, episodes=args.episodes)
    if args.eval_rollouts is not None:
        config = replace(config, eval_rollouts=args.eval_rollouts)
    if args.seeds is not None:
        try:
            seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip() != "")
        except ValueError:
            raise ConfigError(f"cannot parse --seeds {args.seeds!r}")
        config = replace(config, seeds=seeds)
    if args.tasks is not None:
        config = replace(config, n_tasks=args.tasks)
    return config


def _load_snapshot(path: str) -> PolicySnapshot:
    try:
        return PolicySnapshot.load(path)
    except FileNotFoundError:
        raise ConfigError(
            f"snapshot file {path!r} not found; run `pdf train-bc` first")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pdf",
        description="Test-time adaptation experiments: frozen policy, "
                    "uncertainty-budgeted voting, delayed-feedback head.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train-bc", help="behavior-clone the frozen policy")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--out", default="snapshot.pdfw")
    p_train.add_argument("--epochs", type=int, default=None)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--tasks", type=int, default=None)

    p_run = sub.add_parser("run", help="run one experiment variant")
    p_run.add_argument("--variant", choices=runner.VARIANTS, default=None)
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep-budget", help="pdf_full across max budgets")
    p_sweep.add_argument("--budgets", default="0,1,2,3,4",
                         help="comma-separated max view budgets")
    _add_common(p_sweep)

    p_cmp = sub.add_parser("compare-voting",
                           help="configured variant under both voting modes")
    _add_common(p_cmp)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "train-bc":
            model = config.model
            if args.epochs is not None:
                model = replace(model, bc_epochs=args.epochs)
            if args.seed is not None:
                model = replace(model, bc_seed=args.seed)
            config = replace(config, model=model)
            if args.tasks is not None:
                config = replace(config, n_tasks=args.tasks)
            snapshot = runner.train_bc_for(config)
            snapshot.save(args.out)
            fit = policy_fit_line(config, snapshot)
            print(f"wrote {args.out}  ({fit})")
            return 0

        config = _apply_overrides(config, args)
        snapshot = _load_snapshot(args.snapshot)
        if args.command == "run":
            if args.variant is not None:
                config = replace(config, variant=args.variant)
            rows = runner.run_variant(config, snapshot)
            default_out = f"metrics_{config.variant}.{args.format}"
        elif args.command == "sweep-budget":
            try:
                budgets = [int(b) for b in args.budgets.split(",") if b.strip() != ""]
            except ValueError:
                raise ConfigError(f"cannot parse --budgets {args.budgets!r}")
            rows = runner.budget_sweep(config, snapshot, budgets)
            default_out = f"metrics_budget_sweep.{args.format}"
        else:
            rows = runner.compare_voting(config, snapshot)
            default_out = f"metrics_voting.{args.format}"

        out = args.out or default_out
        runner.emit_metrics(rows, out, args.format)
        _print_summary(rows)
        print(f"wrote {out}  ({len(rows)} rows)")
        return 0
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, PdfError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


def policy_fit_line(config, snapshot) -> str:
    from .policy import bc_greedy_fit
    fit = bc_greedy_fit(snapshot, runner.demos_for(config))
    return f"greedy fit {fit:.3f} on {config.n_tasks} tasks"


def _print_summary(rows) -> None:
    by_variant = {}
    for r in rows:
        by_variant.setdefault(r.variant, []).append(r.success_rate)
    for name in sorted(by_variant):
        vals = by_variant[name]
        mean = sum(vals) / len(vals)
        if len(vals) > 1:
            var = sum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
            sem = (var / len(vals)) ** 0.5
        else:
            sem = 0.0
        print(f"{name}: success {mean:.3f} +- {sem:.3f} (n={len(vals)})")


if __name__ == "__main__":
    sys.exit(main())
