"""Design-conditioned actor-critic, rollout collection, GAE, and the
clipped-surrogate policy update.

The actor and critic both consume the environment state concatenated with
the design vector (affinely normalized to [-1, 1] per design-space bounds).
A single state-independent log-std vector parameterizes action noise and is
trained together with the actor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import DesignSample, DesignSpace
from .numerics import (
    AdamState,
    MlpParams,
    MlpSpec,
    NumericError,
    ShapeError,
    adam_step,
    gaussian_log_prob,
    init_mlp,
    mlp_backward,
    mlp_forward,
)


@dataclass
class PolicyState:
    """Actor/critic parameters plus the design normalization they expect."""

    actor: MlpParams
    log_std: np.ndarray
    critic: MlpParams
    design_space: DesignSpace

    @property
    def action_dim(self) -> int:
        return self.actor.spec.out_dim

    @property
    def state_dim(self) -> int:
        return self.actor.spec.in_dim - self.design_space.dim

    def copy(self) -> "PolicyState":
        return PolicyState(
            self.actor.copy(), self.log_std.copy(), self.critic.copy(), self.design_space
        )

    def net_input(self, states: np.ndarray, designs: np.ndarray) -> np.ndarray:
        return np.concatenate(
            [np.atleast_2d(states), np.atleast_2d(self.design_space.normalize(designs))],
            axis=-1,
        )


@dataclass(frozen=True)
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    epochs: int = 4
    minibatch_size: int = 256
    policy_lr: float = 3e-4
    value_lr: float = 1e-3
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    max_grad_norm: float = 0.5

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError("clip must be in (0,1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0,1)")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0,1]")
        if self.epochs < 1 or self.minibatch_size < 1:
            raise ValueError("epochs and minibatch_size must be positive")


@dataclass
class RolloutBatch:
    """(n_designs, horizon, ...) arrays of one collection phase.

    advantages/targets are filled by compute_gae. bootstrap_values holds
    V(s_horizon) per design row for truncated episodes.
    """

    states: np.ndarray
    designs: np.ndarray  # clamped design per transition
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    episode_ids: np.ndarray
    bootstrap_values: np.ndarray
    advantages: np.ndarray | None = None
    targets: np.ndarray | None = None

    @property
    def num_designs(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1]

    def episode_returns(self, gamma: float = 1.0) -> list[list[float]]:
        """Per-episode reward sums per design row (discounted if gamma < 1);
        the trailing partial episode counts as an episode."""
        out = []
        for i in range(self.num_designs):
            rows, total, disc = [], 0.0, 1.0
            for t in range(self.horizon):
                total += disc * self.rewards[i, t]
                disc *= gamma
                if self.dones[i, t]:
                    rows.append(total)
                    total, disc = 0.0, 1.0
            if self.horizon and not self.dones[i, -1]:
                rows.append(total)
            out.append(rows)
        return out


def make_policy(
    state_dim: int,
    action_dim: int,
    design_space: DesignSpace,
    hidden: tuple[int, ...] = (128, 128, 128),
    rng: np.random.Generator | None = None,
    log_std_init: float = 0.0,
) -> PolicyState:
    rng = rng if rng is not None else np.random.default_rng()
    in_dim = state_dim + design_space.dim
    actor = init_mlp(MlpSpec((in_dim, *hidden, action_dim)), rng, final_scale=0.01)
    critic = init_mlp(MlpSpec((in_dim, *hidden, 1)), rng)
    return PolicyState(actor, np.full(action_dim, log_std_init), critic, design_space)


def policy_act(policy: PolicyState, state, design, rng: np.random.Generator):
    """Sample one action; returns (action, log_prob, value)."""
    a, lp, v = policy_act_batch(
        policy, np.asarray(state)[None, :], np.asarray(design)[None, :], rng
    )
    return a[0], float(lp[0]), float(v[0])


def policy_act_batch(policy: PolicyState, states, designs, rng: np.random.Generator):
    x = policy.net_input(states, designs)
    mean, _ = mlp_forward(policy.actor, x)
    std = np.exp(policy.log_std)
    actions = mean + std * rng.standard_normal(mean.shape)
    log_probs = gaussian_log_prob(mean, policy.log_std, actions)
    values, _ = mlp_forward(policy.critic, x)
    return actions, log_probs, values[:, 0]


def policy_mean_actions(policy: PolicyState, states, designs) -> np.ndarray:
    x = policy.net_input(states, designs)
    mean, _ = mlp_forward(policy.actor, x)
    return mean


def collect_rollouts(
    policy: PolicyState,
    designs: list[DesignSample],
    env_factory,
    horizon: int,
    rng: np.random.Generator,
) -> RolloutBatch:
    """Run each design for exactly `horizon` timesteps under a fixed policy
    snapshot, resetting episodes as they terminate. Results are merged in
    design-index order, so the batch is deterministic for a given rng state.
    """
    n = len(designs)
    if horizon == 0 or n == 0:
        empty = lambda *shape: np.zeros(shape)
        probe = env_factory()
        sd, ad = probe.state_dim, probe.action_dim
        return RolloutBatch(
            empty(n, 0, sd), empty(n, 0, policy.design_space.dim), empty(n, 0, ad),
            empty(n, 0), empty(n, 0), empty(n, 0), np.zeros((n, 0), dtype=bool),
            np.zeros((n, 0), dtype=np.int64), empty(n),
        )
    envs = [env_factory() for _ in range(n)]
    design_mat = np.stack([d.clamped for d in designs])
    states = np.stack([env.reset(d.clamped, rng) for env, d in zip(envs, designs)])
    sd, ad = envs[0].state_dim, envs[0].action_dim
    st = np.zeros((n, horizon, sd))
    ac = np.zeros((n, horizon, ad))
    rw = np.zeros((n, horizon))
    vl = np.zeros((n, horizon))
    lp = np.zeros((n, horizon))
    dn = np.zeros((n, horizon), dtype=bool)
    ep = np.zeros((n, horizon), dtype=np.int64)
    episode = np.zeros(n, dtype=np.int64)
    for t in range(horizon):
        actions, log_probs, values = policy_act_batch(policy, states, design_mat, rng)
        st[:, t] = states
        ac[:, t] = actions
        vl[:, t] = values
        lp[:, t] = log_probs
        ep[:, t] = episode
        for i, env in enumerate(envs):
            try:
                next_state, reward, done = env.step(actions[i])
            except Exception as exc:
                exc.add_note(f"design index {i}, design {designs[i].clamped}")
                raise
            rw[i, t] = reward
            dn[i, t] = done
            if done:
                episode[i] += 1
                next_state = env.reset(designs[i].clamped, rng)
            states[i] = next_state
    x = policy.net_input(states, design_mat)
    bootstrap, _ = mlp_forward(policy.critic, x)
    designs_tiled = np.repeat(design_mat[:, None, :], horizon, axis=1)
    return RolloutBatch(st, designs_tiled, ac, rw, vl, lp, dn, ep, bootstrap[:, 0])


def compute_gae(batch: RolloutBatch, gamma: float, lam: float) -> RolloutBatch:
    """Fill advantages (normalized per batch) and value targets in place.

    delta_t = r_t + gamma*V(s_{t+1})*(1-done_t) - V(s_t), with V(s_horizon)
    taken from the stored bootstrap values; done boundaries cut the recursion.
    """
    n, horizon = batch.rewards.shape
    adv = np.zeros((n, horizon))
    last = np.zeros(n)
    next_values = batch.bootstrap_values.copy()
    for t in range(horizon - 1, -1, -1):
        not_done = 1.0 - batch.dones[:, t]
        delta = batch.rewards[:, t] + gamma * next_values * not_done - batch.values[:, t]
        last = delta + gamma * lam * not_done * last
        adv[:, t] = last
        next_values = batch.values[:, t]
    batch.targets = adv + batch.values
    if adv.size:
        batch.advantages = (adv - adv.mean()) / (adv.std() + 1e-8)
    else:
        batch.advantages = adv
    return batch


def _global_norm_clip(grad: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass
class PpoOptimState:
    """Adam accumulators for the actor (weights + log_std) and critic."""

    actor: AdamState
    critic: AdamState

    @classmethod
    def for_policy(cls, policy: PolicyState) -> "PpoOptimState":
        return cls(
            AdamState.zeros(policy.actor.spec.num_params + policy.action_dim),
            AdamState.zeros(policy.critic.spec.num_params),
        )


def ppo_update(
    policy: PolicyState,
    batch: RolloutBatch,
    config: PpoConfig,
    optim: PpoOptimState,
    rng: np.random.Generator,
) -> PolicyState:
    """Epochs of shuffled-minibatch ascent on the clipped surrogate minus
    value_coef * value loss plus entropy_coef * entropy. Returns the updated
    policy; optimizer state updates in place.
    """
    if batch.advantages is None or batch.targets is None:
        raise ShapeError("compute_gae must run before ppo_update")
    n_samples = batch.num_designs * batch.horizon
    if n_samples == 0:
        return policy
    sd = batch.states.shape[-1]
    ad = batch.actions.shape[-1]
    states = batch.states.reshape(n_samples, sd)
    designs = batch.designs.reshape(n_samples, -1)
    actions = batch.actions.reshape(n_samples, ad)
    old_log_probs = batch.log_probs.reshape(n_samples)
    advantages = batch.advantages.reshape(n_samples)
    targets = batch.targets.reshape(n_samples)

    policy = policy.copy()
    inputs = policy.net_input(states, designs)
    mb = min(config.minibatch_size, n_samples)
    for _ in range(config.epochs):
        perm = rng.permutation(n_samples)
        for start in range(0, n_samples, mb):
            idx = perm[start : start + mb]
            x = inputs[idx]
            a = actions[idx]
            adv = advantages[idx]
            m = idx.size

            mean, cache = mlp_forward(policy.actor, x)
            log_probs = gaussian_log_prob(mean, policy.log_std, a)
            ratio = np.exp(log_probs - old_log_probs[idx])
            unclipped = ratio * adv
            clipped = np.clip(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv
            surrogate = np.minimum(unclipped, clipped)
            if not np.all(np.isfinite(surrogate)):
                raise NumericError(
                    "non-finite surrogate; ratio range "
                    f"[{np.nanmin(ratio)}, {np.nanmax(ratio)}]"
                )
            # gradient flows through the ratio only where the unclipped term
            # is selected (the clip is flat elsewhere)
            active = unclipped <= clipped
            d_logp = -(active * ratio * adv) / m  # d(loss)/d(log_prob)
            inv_var = np.exp(-2.0 * policy.log_std)
            diff = a - mean
            d_mean = d_logp[:, None] * diff * inv_var
            d_log_std = (d_logp[:, None] * (diff**2 * inv_var - 1.0)).sum(axis=0)
            d_log_std -= config.entropy_coef  # d(-c*H)/d(log_std) = -c per dim
            actor_grad, _ = mlp_backward(policy.actor, cache, d_mean)
            full_grad = _global_norm_clip(
                np.concatenate([actor_grad, d_log_std]), config.max_grad_norm
            )
            flat = np.concatenate([policy.actor.to_flat(), policy.log_std])
            flat, _ = adam_step(optim.actor, flat, full_grad, config.policy_lr)
            policy.actor = policy.actor.from_flat(flat[: policy.actor.spec.num_params])
            policy.log_std = flat[policy.actor.spec.num_params :]

            values, vcache = mlp_forward(policy.critic, x)
            v_err = values[:, 0] - targets[idx]
            d_v = (config.value_coef * v_err / m)[:, None]
            critic_grad, _ = mlp_backward(policy.critic, vcache, d_v)
            critic_grad = _global_norm_clip(critic_grad, config.max_grad_norm)
            cflat, _ = adam_step(
                optim.critic, policy.critic.to_flat(), critic_grad, config.value_lr
            )
            policy.critic = policy.critic.from_flat(cflat)
    return policy


def evaluate_designs(
    policy: PolicyState,
    env_factory,
    designs: list[np.ndarray],
    episodes: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Mean undiscounted return per design with deterministic (mean) actions.

    Steps all designs' environments in lockstep per episode round, so one
    batched forward pass serves every live environment.
    """
    returns, _ = evaluate_designs_with_steps(policy, env_factory, designs, episodes, rng)
    return returns


def evaluate_designs_with_steps(
    policy: PolicyState,
    env_factory,
    designs: list[np.ndarray],
    episodes: int,
    rng: np.random.Generator,
):
    """As evaluate_designs, also returning total environment timesteps used."""
    n = len(designs)
    totals = np.zeros(n)
    steps = 0
    design_mat = np.stack(designs)
    for _ in range(episodes):
        envs = [env_factory() for _ in range(n)]
        states = np.stack([env.reset(d, rng) for env, d in zip(envs, designs)])
        alive = np.ones(n, dtype=bool)
        while np.any(alive):
            live = np.flatnonzero(alive)
            actions = policy_mean_actions(policy, states[live], design_mat[live])
            steps += live.size
            for j, i in enumerate(live):
                next_state, reward, done = envs[i].step(actions[j])
                totals[i] += reward
                states[i] = next_state
                if done:
                    alive[i] = False
    return totals / episodes, steps


def evaluate_design(
    policy: PolicyState,
    env_factory,
    design,
    episodes: int,
    rng: np.random.Generator,
) -> float:
    design_vec = design.clamped if isinstance(design, DesignSample) else np.asarray(design)
    return float(evaluate_designs(policy, env_factory, [design_vec], episodes, rng)[0])
