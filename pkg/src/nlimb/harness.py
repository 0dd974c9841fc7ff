"""Joint training loop: warm-up, distribution updates, pruning, mode-fixing
finalization, instrumentation, and lossless checkpointing.

The loop runs on one control thread and merges all per-design work in
design-index order, so a fixed seed gives bit-identical runs. The worker-pool
size from NLIMB_WORKERS is accepted as a batching hint; results never depend
on it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ckpt
from .config import ExperimentConfig, TrainSchedule
from .design import (
    DesignSample,
    DesignSpace,
    GmmState,
    gmm_mode,
    init_gmm,
    prune_components,
    sample_design,
    update_distribution,
)
from .numerics import AdamState, MlpParams, MlpSpec
from .rl import (
    PolicyState,
    PpoOptimState,
    collect_rollouts,
    compute_gae,
    evaluate_designs_with_steps,
    make_policy,
    ppo_update,
)


@dataclass
class HistogramRecord:
    timesteps: int
    designs: np.ndarray  # (samples, dim)
    returns: np.ndarray  # (samples,)


@dataclass
class RunLog:
    """Per-iteration records plus design-sample histogram dumps."""

    design_names: tuple[str, ...]
    num_components: int
    records: list[dict] = field(default_factory=list)
    histograms: list[HistogramRecord] = field(default_factory=list)

    def iteration_header(self) -> list[str]:
        cols = [
            "iteration", "timesteps", "eval_timesteps",
            "mean_return", "min_return", "max_return", "active_components",
        ]
        for k in range(self.num_components):
            cols.append(f"comp{k}_active")
            for name in self.design_names:
                cols.append(f"comp{k}_mean_{name}")
            for name in self.design_names:
                cols.append(f"comp{k}_logvar_{name}")
        return cols

    def iteration_csv(self) -> str:
        header = self.iteration_header()
        lines = [",".join(header)]
        for rec in self.records:
            lines.append(",".join(_fmt(rec[c]) for c in header))
        return "\n".join(lines) + "\n"

    def histogram_csv(self) -> str:
        cols = ["timesteps", "sample_index"] + [f"design_{n}" for n in self.design_names]
        cols.append("return")
        lines = [",".join(cols)]
        for h in self.histograms:
            for i in range(len(h.returns)):
                row = [str(h.timesteps), str(i)]
                row += [_fmt(v) for v in h.designs[i]]
                row.append(_fmt(h.returns[i]))
                lines.append(",".join(row))
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "train_log.csv"), "w", encoding="utf-8") as fh:
            fh.write(self.iteration_csv())
        with open(os.path.join(out_dir, "histograms.csv"), "w", encoding="utf-8") as fh:
            fh.write(self.histogram_csv())


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


@dataclass
class TrainState:
    """Everything needed to resume training mid-run."""

    policy: PolicyState
    optim: PpoOptimState
    gmm: GmmState
    rng: np.random.Generator
    iteration: int = 0
    timesteps: int = 0
    eval_timesteps: int = 0
    finalized: bool = False
    omega: np.ndarray | None = None


def dump_histogram(
    policy: PolicyState,
    gmm: GmmState,
    space: DesignSpace,
    env_factory,
    sample_count: int,
    rng: np.random.Generator,
    timesteps: int,
) -> tuple[HistogramRecord, int]:
    """Sample designs from the current distribution, evaluate one
    deterministic-action episode each; returns (record, eval timesteps)."""
    samples = [sample_design(gmm, space, rng) for _ in range(sample_count)]
    designs = [s.clamped for s in samples]
    returns, steps = evaluate_designs_with_steps(policy, env_factory, designs, 1, rng)
    return HistogramRecord(timesteps, np.stack(designs), returns), steps


def save_checkpoint(path: str, state: TrainState, space: DesignSpace, run_log: RunLog) -> None:
    policy = state.policy
    meta = {
        "iteration": state.iteration,
        "timesteps": state.timesteps,
        "eval_timesteps": state.eval_timesteps,
        "finalized": state.finalized,
        "omega": None if state.omega is None else [float(v) for v in state.omega],
        "actor_sizes": list(policy.actor.spec.layer_sizes),
        "critic_sizes": list(policy.critic.spec.layer_sizes),
        "design": [[n, float(lo), float(hi)] for n, lo, hi in space.parameters],
        "gmm_active": [int(v) for v in state.gmm.active],
        "gmm_shape": list(state.gmm.means.shape),
        "adam": {
            side: {
                "step": a.step, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps,
            }
            for side, a in (("actor", state.optim.actor), ("critic", state.optim.critic))
        },
        "rng_state": _jsonable(state.rng.bit_generator.state),
        "log_records": run_log.records,
        "hist_timesteps": [h.timesteps for h in run_log.histograms],
        "hist_sizes": [len(h.returns) for h in run_log.histograms],
    }
    sections = {
        "meta": ckpt.pack_meta(meta),
        "actor": ckpt.pack_array(policy.actor.to_flat()),
        "log_std": ckpt.pack_array(policy.log_std),
        "critic": ckpt.pack_array(policy.critic.to_flat()),
        "gmm_means": ckpt.pack_array(state.gmm.means),
        "gmm_log_vars": ckpt.pack_array(state.gmm.log_vars),
        "adam_actor_m": ckpt.pack_array(state.optim.actor.m),
        "adam_actor_v": ckpt.pack_array(state.optim.actor.v),
        "adam_critic_m": ckpt.pack_array(state.optim.critic.m),
        "adam_critic_v": ckpt.pack_array(state.optim.critic.v),
        "hist_designs": ckpt.pack_array(
            np.concatenate([h.designs.ravel() for h in run_log.histograms])
            if run_log.histograms else np.zeros(0)
        ),
        "hist_returns": ckpt.pack_array(
            np.concatenate([h.returns for h in run_log.histograms])
            if run_log.histograms else np.zeros(0)
        ),
    }
    ckpt.write_container(path, sections)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def load_checkpoint(path: str):
    """Returns (TrainState, DesignSpace, RunLog)."""
    sections = ckpt.read_container(path)
    try:
        meta = ckpt.unpack_meta(sections["meta"])
        space = DesignSpace(tuple((n, lo, hi) for n, lo, hi in meta["design"]))
        actor_spec = MlpSpec(tuple(meta["actor_sizes"]))
        critic_spec = MlpSpec(tuple(meta["critic_sizes"]))
        actor = _params_from_flat(actor_spec, ckpt.unpack_array(sections["actor"]))
        critic = _params_from_flat(critic_spec, ckpt.unpack_array(sections["critic"]))
        log_std = ckpt.unpack_array(sections["log_std"])
        policy = PolicyState(actor, log_std, critic, space)
        gmm = GmmState(
            ckpt.unpack_array(sections["gmm_means"], tuple(meta["gmm_shape"])),
            ckpt.unpack_array(sections["gmm_log_vars"], tuple(meta["gmm_shape"])),
            np.array(meta["gmm_active"], dtype=bool),
        )
        optim = PpoOptimState(
            _adam_from(meta["adam"]["actor"], sections["adam_actor_m"], sections["adam_actor_v"]),
            _adam_from(meta["adam"]["critic"], sections["adam_critic_m"], sections["adam_critic_v"]),
        )
        rng = np.random.default_rng()
        rng.bit_generator.state = meta["rng_state"]
        run_log = RunLog(space.names, gmm.num_components, records=meta["log_records"])
        dim = space.dim
        designs = ckpt.unpack_array(sections["hist_designs"])
        returns = ckpt.unpack_array(sections["hist_returns"])
        pos = 0
        for ts, size in zip(meta["hist_timesteps"], meta["hist_sizes"]):
            run_log.histograms.append(
                HistogramRecord(
                    ts,
                    designs[pos * dim : (pos + size) * dim].reshape(size, dim),
                    returns[pos : pos + size],
                )
            )
            pos += size
        state = TrainState(
            policy=policy, optim=optim, gmm=gmm, rng=rng,
            iteration=meta["iteration"], timesteps=meta["timesteps"],
            eval_timesteps=meta["eval_timesteps"], finalized=meta["finalized"],
            omega=None if meta["omega"] is None else np.array(meta["omega"]),
        )
        return state, space, run_log
    except (KeyError, ValueError, IndexError) as exc:
        raise ckpt.CheckpointError(f"{path}: invalid checkpoint contents: {exc}") from exc


def _params_from_flat(spec: MlpSpec, flat: np.ndarray) -> MlpParams:
    template = MlpParams(spec, [], [])
    return template.from_flat(flat)


def _adam_from(meta: dict, m_raw: bytes, v_raw: bytes) -> AdamState:
    return AdamState(
        m=ckpt.unpack_array(m_raw), v=ckpt.unpack_array(v_raw),
        step=meta["step"], beta1=meta["beta1"], beta2=meta["beta2"], eps=meta["eps"],
    )


@dataclass
class JointResult:
    omega: np.ndarray
    policy: PolicyState
    run_log: RunLog
    final_return: float
    state: TrainState


def run_joint_training(
    config: ExperimentConfig,
    out_dir: str | None = None,
    resume_from: str | None = None,
) -> JointResult:
    """Execute the full joint loop and return the final design, policy, and
    logs. If out_dir is given, CSV logs and the final checkpoint land there.
    """
    env_factory = config.env_factory()
    space = config.design_space()
    schedule = config.schedule()
    ppo = config.ppo()
    probe = env_factory()

    if resume_from is not None:
        state, ck_space, run_log = load_checkpoint(resume_from)
        if ck_space.parameters != space.parameters:
            raise ckpt.CheckpointError("checkpoint design space does not match config")
    else:
        rng = np.random.default_rng(int(config["seed"]))
        gmm = init_gmm(space, int(config["gmm.components"]), rng)
        policy = make_policy(
            probe.state_dim, probe.action_dim, space,
            hidden=tuple(config["policy.hidden"]), rng=rng,
            log_std_init=float(config["policy.log_std_init"]),
        )
        state = TrainState(policy, PpoOptimState.for_policy(policy), gmm, rng)
        run_log = RunLog(space.names, gmm.num_components)

    n = schedule.num_designs
    horizon = schedule.horizon
    gamma_for_returns = ppo.gamma if config["gmm.return_mode"] == "discounted" else 1.0
    hist_interval = int(config["log.histogram_interval"])
    hist_samples = int(config["log.histogram_samples"])
    ckpt_interval = int(config["checkpoint.interval"])

    while state.timesteps < schedule.total_timesteps:
        if not state.finalized and state.timesteps >= schedule.total_timesteps - schedule.finalize_budget:
            state.omega = gmm_mode(state.gmm, space)
            state.finalized = True

        if state.finalized:
            samples = [
                DesignSample(state.omega.copy(), state.omega.copy(), int(state.gmm.active_ids[0]))
                for _ in range(n)
            ]
        else:
            samples = [sample_design(state.gmm, space, state.rng) for _ in range(n)]

        batch = collect_rollouts(state.policy, samples, env_factory, horizon, state.rng)
        compute_gae(batch, ppo.gamma, ppo.gae_lambda)
        state.policy = ppo_update(state.policy, batch, ppo, state.optim, state.rng)

        per_design = batch.episode_returns(gamma_for_returns)
        returns = [float(np.mean(r)) if r else 0.0 for r in per_design]

        before = state.timesteps
        state.timesteps += n * horizon
        state.iteration += 1

        past_warmup = state.timesteps > schedule.warmup_timesteps
        if past_warmup and not state.finalized:
            state.gmm = update_distribution(
                state.gmm, space, samples, returns,
                lr=float(config["gmm.lr"]), baseline=str(config["gmm.baseline"]),
            )
            crossed_prune = before // schedule.prune_interval < state.timesteps // schedule.prune_interval
            if crossed_prune and state.gmm.active_ids.size > 1:
                state.gmm = prune_components(
                    state.gmm, space, _counting_evaluator(state, env_factory),
                    samples_per_component=int(config["gmm.samples_per_component"]),
                    rng=state.rng,
                )

        rec = {
            "iteration": state.iteration,
            "timesteps": state.timesteps,
            "eval_timesteps": state.eval_timesteps,
            "mean_return": float(np.mean(returns)),
            "min_return": float(np.min(returns)),
            "max_return": float(np.max(returns)),
            "active_components": int(state.gmm.active_ids.size),
        }
        for k in range(state.gmm.num_components):
            rec[f"comp{k}_active"] = int(state.gmm.active[k])
            for j, name in enumerate(space.names):
                rec[f"comp{k}_mean_{name}"] = float(state.gmm.means[k, j])
            for j, name in enumerate(space.names):
                rec[f"comp{k}_logvar_{name}"] = float(state.gmm.log_vars[k, j])
        run_log.records.append(rec)

        if hist_interval > 0 and before // hist_interval < state.timesteps // hist_interval:
            record, steps = dump_histogram(
                state.policy, state.gmm, space, env_factory,
                hist_samples, state.rng, state.timesteps,
            )
            state.eval_timesteps += steps
            run_log.histograms.append(record)
            if out_dir is not None:
                run_log.write(out_dir)

        if out_dir is not None and ckpt_interval > 0 and state.iteration % ckpt_interval == 0:
            os.makedirs(out_dir, exist_ok=True)
            save_checkpoint(
                os.path.join(out_dir, f"checkpoint_{state.iteration:06d}.bin"),
                state, space, run_log,
            )

    if state.omega is None:
        state.omega = gmm_mode(state.gmm, space)
        state.finalized = True

    final_returns, steps = evaluate_designs_with_steps(
        state.policy, env_factory, [state.omega], int(config["eval.episodes"]), state.rng
    )
    state.eval_timesteps += steps

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        run_log.write(out_dir)
        save_checkpoint(os.path.join(out_dir, "final.bin"), state, space, run_log)

    return JointResult(state.omega, state.policy, run_log, float(final_returns[0]), state)


def _counting_evaluator(state: TrainState, env_factory):
    def evaluator(sample: DesignSample) -> float:
        returns, steps = evaluate_designs_with_steps(
            state.policy, env_factory, [sample.clamped], 1, state.rng
        )
        state.eval_timesteps += steps
        return float(returns[0])

    return evaluator


def reacher_grid_oracle(
    grid_points: int = 3,
    per_design_budget: int = 65_536,
    seed: int = 0,
    ppo=None,
    settings=None,
):
    """Short fixed-design training runs on a (link1, link2) grid; returns
    (best design, table of (l1, l2, return)). Slow: trains one policy per
    grid point."""
    from .baselines import TrainSettings, train_fixed_design
    from .envs import REACHER_SPACE, make_env_factory
    from .rl import PpoConfig

    ppo = ppo or PpoConfig()
    settings = settings or TrainSettings(eval_episodes=20)
    env_factory = make_env_factory("reacher")
    space = REACHER_SPACE
    l1s = np.linspace(space.lower[0], space.upper[0], grid_points)
    l2s = np.linspace(space.lower[1], space.upper[1], grid_points)
    rows, best = [], None
    for l1 in l1s:
        for l2 in l2s:
            _, ret = train_fixed_design(
                np.array([l1, l2]), env_factory, ppo, per_design_budget,
                seed=seed, settings=settings,
            )
            rows.append((l1, l2, ret))
            if best is None or ret > best[2]:
                best = (l1, l2, ret)
    return np.array([best[0], best[1]]), np.array(rows)
