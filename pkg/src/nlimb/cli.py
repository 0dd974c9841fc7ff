"""Command-line interface.

Subcommands: train-joint, train-fixed, random-search, bayesopt, eval,
oracle, report. Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .baselines import TrainSettings, bayesopt_search, random_search, train_fixed_design
from .checkpoint import CheckpointError
from .config import ConfigError, ExperimentConfig
from .design import GmmState
from .envs import lqr_design_oracle
from .harness import (
    RunLog,
    TrainState,
    load_checkpoint,
    reacher_grid_oracle,
    run_joint_training,
    save_checkpoint,
)
from .rl import PpoOptimState, evaluate_design


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a key = value config file")
    p.add_argument("--seed", type=int, help="random seed (overrides config)")
    p.add_argument("--out", help="output directory (overrides config)")
    p.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="config override, repeatable",
    )


def _load_config(args) -> ExperimentConfig:
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.out is not None:
        overrides.append(f"out={args.out}")
    if args.config:
        return ExperimentConfig.from_file(args.config, overrides)
    return ExperimentConfig.defaults(overrides)


def _settings(config: ExperimentConfig) -> TrainSettings:
    sched = config.schedule()
    return TrainSettings(
        n_parallel=sched.num_designs,
        horizon=sched.horizon,
        hidden=tuple(config["policy.hidden"]),
        log_std_init=float(config["policy.log_std_init"]),
        eval_episodes=int(config["eval.episodes"]),
    )


def _parse_design(text: str | None, config: ExperimentConfig) -> np.ndarray:
    if text is None:
        from .envs import ENV_REGISTRY

        return ENV_REGISTRY[config.env_name].default_design.copy()
    return np.array([float(v) for v in text.split(",")])


def _save_policy(out_dir: str, config, policy, design: np.ndarray) -> str:
    """Store a fixed-design policy as a checkpoint with a degenerate GMM."""
    space = config.design_space()
    gmm = GmmState(
        design[None, :].copy(),
        np.log(1e-6 * (space.upper - space.lower) ** 2)[None, :].copy(),
        np.array([True]),
    )
    state = TrainState(
        policy=policy, optim=PpoOptimState.for_policy(policy), gmm=gmm,
        rng=np.random.default_rng(int(config["seed"])),
        finalized=True, omega=design.copy(),
    )
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "final.bin")
    save_checkpoint(path, state, space, RunLog(space.names, 1))
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nlimb",
        description="Joint optimization of physical design and control, plus baselines.",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("train-joint", help="run the joint design/control loop")
    _add_common(p)
    p.add_argument("--resume", help="resume from a checkpoint file")

    p = sub.add_parser("train-fixed", help="PPO on one fixed design")
    _add_common(p)
    p.add_argument("--design", help="comma-separated design vector (default: env default)")
    p.add_argument("--budget", type=int, help="timestep budget (default: schedule total)")

    p = sub.add_parser("random-search", help="uniform design search at 3x budget")
    _add_common(p)
    p.add_argument("--per-candidate-budget", type=int)
    p.add_argument("--total-budget", type=int)

    p = sub.add_parser("bayesopt", help="GP/EI search over designs")
    _add_common(p)
    p.add_argument("--per-candidate-budget", type=int)
    p.add_argument("--total-budget", type=int)

    p = sub.add_parser("eval", help="evaluate a checkpointed policy on a design")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--design", help="comma-separated design (default: checkpoint's design)")
    p.add_argument("--episodes", type=int)

    p = sub.add_parser("oracle", help="analytic/grid design oracles")
    _add_common(p)
    p.add_argument("--grid-points", type=int, default=None)
    p.add_argument("--budget", type=int, help="per-design budget (reacher oracle)")

    p = sub.add_parser("report", help="render figures and summary CSVs for a run")
    p.add_argument("--run", required=True, help="run directory with train_log.csv")
    p.add_argument("--out", help="report output directory (default: RUN/report)")

    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _dispatch(args)
    except (ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _dispatch(args) -> int:
    if args.command == "report":
        from .report import generate_report

        for path in generate_report(args.run, args.out):
            print(path)
        return 0

    config = _load_config(args)
    out_dir = str(config["out"])

    if args.command == "train-joint":
        result = run_joint_training(config, out_dir=out_dir, resume_from=args.resume)
        design = ",".join(f"{v:.6g}" for v in result.omega)
        print(f"final design: {design}")
        print(f"final return (mean over {config['eval.episodes']} episodes): "
              f"{result.final_return:.6g}")
        print(f"logs: {out_dir}")
        return 0

    if args.command == "train-fixed":
        design = _parse_design(args.design, config)
        budget = args.budget or int(config["schedule.total_timesteps"])
        policy, ret = train_fixed_design(
            design, config.env_factory(), config.ppo(), budget,
            seed=int(config["seed"]), settings=_settings(config),
        )
        path = _save_policy(out_dir, config, policy, design)
        print(f"design: {','.join(f'{v:.6g}' for v in design)}")
        print(f"mean return over {config['eval.episodes']} episodes: {ret:.6g}")
        print(f"checkpoint: {path}")
        return 0

    if args.command in ("random-search", "bayesopt"):
        sched_total = int(config["schedule.total_timesteps"])
        per = args.per_candidate_budget or sched_total
        if args.command == "random-search":
            total = args.total_budget or 3 * sched_total
            best_design, best_ret, policy, ledger = random_search(
                config.design_space(), config.env_factory(), config.ppo(),
                per, total, seed=int(config["seed"]), settings=_settings(config),
            )
        else:
            total = args.total_budget or sched_total
            if args.per_candidate_budget is None:
                per = max(total // 10, 1)
            best_design, best_ret, policy, ledger = bayesopt_search(
                config.design_space(), config.env_factory(), config.ppo(),
                per, total, seed=int(config["seed"]), settings=_settings(config),
            )
        path = _save_policy(out_dir, config, policy, np.asarray(best_design))
        print(f"best design: {','.join(f'{v:.6g}' for v in best_design)}")
        print(f"best return: {best_ret:.6g}")
        print(f"training timesteps: {ledger.total_consumed} / {ledger.allowed} "
              f"(+{ledger.eval_timesteps} evaluation)")
        print(f"checkpoint: {path}")
        return 0

    if args.command == "eval":
        state, space, _ = load_checkpoint(args.checkpoint)
        if args.design is not None:
            design = np.array([float(v) for v in args.design.split(",")])
        elif state.omega is not None:
            design = state.omega
        else:
            design = _parse_design(None, config)
        episodes = args.episodes or int(config["eval.episodes"])
        ret = evaluate_design(
            state.policy, config.env_factory(), design, episodes,
            np.random.default_rng(int(config["seed"])),
        )
        print(f"design: {','.join(f'{v:.6g}' for v in design)}")
        print(f"mean return over {episodes} episodes: {ret:.6g}")
        return 0

    if args.command == "oracle":
        if config.env_name == "lqr":
            grid = args.grid_points or 201
            best, table = lqr_design_oracle(grid, weights=config.reward_weights())
        elif config.env_name == "reacher":
            grid = args.grid_points or 3
            best, table = reacher_grid_oracle(
                grid, per_design_budget=args.budget or 65_536,
                seed=int(config["seed"]), ppo=config.ppo(),
            )
        else:
            raise ConfigError(f"no oracle for env {config.env_name!r}")
        names = config.design_space().names
        print(f"best design: {','.join(f'{v:.6g}' for v in best)}")
        print(f"best return: {table[:, -1].max():.6g}")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            path = os.path.join(args.out, f"{config.env_name}_oracle.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(",".join(names) + ",optimal_return\n")
                for row in table:
                    fh.write(",".join(repr(float(v)) for v in row) + "\n")
            print(f"table: {path}")
        return 0

    raise ConfigError(f"unknown command {args.command!r}")


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
