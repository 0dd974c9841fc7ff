import numpy as np
import pytest

from nlimb.design import DesignSample, DesignSpace
from nlimb.envs import DesignedLqr, make_env_factory
from nlimb.numerics import finite_diff_grad, gaussian_log_prob, mlp_forward
from nlimb.rl import (
    PolicyState,
    PpoConfig,
    PpoOptimState,
    RolloutBatch,
    collect_rollouts,
    compute_gae,
    evaluate_design,
    make_policy,
    policy_act,
    ppo_update,
)

SPACE = DesignedLqr.design_space


def lqr_samples(n, rng):
    lo, hi = SPACE.lower, SPACE.upper
    out = []
    for _ in range(n):
        d = rng.uniform(lo, hi)
        out.append(DesignSample(d.copy(), d.copy(), 0))
    return out


@pytest.fixture
def policy():
    return make_policy(2, 1, SPACE, hidden=(16, 16), rng=np.random.default_rng(0))


class TestPolicyAct:
    def test_near_zero_std_returns_actor_mean(self, policy):
        policy.log_std[:] = np.log(1e-9)
        state = np.array([0.3, -0.1])
        design = np.array([1.0, 0.5])
        action, _, _ = policy_act(policy, state, design, np.random.default_rng(0))
        x = policy.net_input(state[None], design[None])
        mean, _ = mlp_forward(policy.actor, x)
        assert action == pytest.approx(mean[0], abs=1e-7)

    def test_zero_weight_actor_outputs_bias(self, policy):
        for w in policy.actor.weights:
            w[:] = 0.0
        policy.actor.biases[-1][:] = 0.37
        policy.log_std[:] = np.log(1e-9)
        action, _, _ = policy_act(
            policy, np.zeros(2), np.array([1.0, 0.5]), np.random.default_rng(0)
        )
        assert action[0] == pytest.approx(0.37, abs=1e-7)

    def test_log_prob_recomputable(self, policy):
        rng = np.random.default_rng(3)
        state = rng.standard_normal(2)
        design = np.array([0.7, 0.2])
        action, log_prob, _ = policy_act(policy, state, design, rng)
        x = policy.net_input(state[None], design[None])
        mean, _ = mlp_forward(policy.actor, x)
        assert log_prob == pytest.approx(
            float(gaussian_log_prob(mean[0], policy.log_std, action)), rel=1e-12
        )


class TestCollectRollouts:
    def test_zero_horizon_empty_batch(self, policy):
        rng = np.random.default_rng(0)
        batch = collect_rollouts(
            policy, lqr_samples(3, rng), make_env_factory("lqr"), 0, rng
        )
        assert batch.states.shape == (3, 0, 2)

    def test_batch_size_is_designs_times_horizon(self, policy):
        rng = np.random.default_rng(1)
        batch = collect_rollouts(
            policy, lqr_samples(4, rng), make_env_factory("lqr"), 50, rng
        )
        assert batch.rewards.shape == (4, 50)
        assert batch.designs.shape == (4, 50, 2)

    def test_same_seed_bit_identical(self, policy):
        out = []
        for _ in range(2):
            rng = np.random.default_rng(9)
            batch = collect_rollouts(
                policy, lqr_samples(2, rng), make_env_factory("lqr"), 64, rng
            )
            out.append(batch)
        assert np.array_equal(out[0].states, out[1].states)
        assert np.array_equal(out[0].actions, out[1].actions)
        assert np.array_equal(out[0].rewards, out[1].rewards)

    def test_episode_resets_within_horizon(self, policy):
        rng = np.random.default_rng(2)
        # LQR episodes are 200 steps; horizon 450 forces two resets
        batch = collect_rollouts(
            policy, lqr_samples(1, rng), make_env_factory("lqr"), 450, rng
        )
        assert batch.dones[0].sum() == 2
        assert batch.episode_ids[0, -1] == 2

    def test_stored_log_probs_reproducible(self, policy):
        rng = np.random.default_rng(4)
        batch = collect_rollouts(
            policy, lqr_samples(2, rng), make_env_factory("lqr"), 32, rng
        )
        x = policy.net_input(batch.states.reshape(-1, 2), batch.designs.reshape(-1, 2))
        mean, _ = mlp_forward(policy.actor, x)
        lp = gaussian_log_prob(mean, policy.log_std, batch.actions.reshape(-1, 1))
        assert lp == pytest.approx(batch.log_probs.reshape(-1), rel=1e-12)


def hand_batch(rewards, values, dones, bootstrap):
    n_steps = len(rewards)
    return RolloutBatch(
        states=np.zeros((1, n_steps, 1)),
        designs=np.zeros((1, n_steps, 1)),
        actions=np.zeros((1, n_steps, 1)),
        rewards=np.array([rewards], float),
        values=np.array([values], float),
        log_probs=np.zeros((1, n_steps)),
        dones=np.array([dones], bool),
        episode_ids=np.zeros((1, n_steps), dtype=np.int64),
        bootstrap_values=np.array([bootstrap], float),
    )


class TestComputeGae:
    def raw_advantages(self, batch, gamma, lam):
        compute_gae(batch, gamma, lam)
        return batch.targets - batch.values

    def test_gamma_zero_reduces_to_reward_minus_value(self):
        batch = hand_batch([1.0, 2.0, 3.0], [0.5, 0.5, 0.5], [False] * 3, 0.0)
        adv = self.raw_advantages(batch, 0.0, 0.95)
        assert adv[0] == pytest.approx([0.5, 1.5, 2.5])

    def test_lambda_zero_is_one_step_td(self):
        r, v = [1.0, 0.0, 2.0], [0.3, 0.6, 0.1]
        batch = hand_batch(r, v, [False] * 3, 0.8)
        gamma = 0.9
        adv = self.raw_advantages(batch, gamma, 0.0)
        expect = [
            r[0] + gamma * v[1] - v[0],
            r[1] + gamma * v[2] - v[1],
            r[2] + gamma * 0.8 - v[2],
        ]
        assert adv[0] == pytest.approx(expect)

    def test_three_step_hand_unrolled(self):
        gamma, lam = 0.9, 0.5
        r, v, boot = [1.0, -1.0, 2.0], [0.2, 0.4, -0.3], 0.7
        batch = hand_batch(r, v, [False, False, True], boot)
        adv = self.raw_advantages(batch, gamma, lam)
        d2 = r[2] - v[2]  # terminal: no bootstrap
        d1 = r[1] + gamma * v[2] - v[1]
        d0 = r[0] + gamma * v[1] - v[0]
        a2 = d2
        a1 = d1 + gamma * lam * a2
        a0 = d0 + gamma * lam * a1
        assert adv[0] == pytest.approx([a0, a1, a2])

    def test_no_bootstrap_across_done(self):
        base = hand_batch([1.0, 5.0], [0.0, 0.0], [True, False], 0.0)
        other = hand_batch([1.0, -5.0], [0.0, 99.0], [True, False], 0.0)
        compute_gae(base, 0.99, 0.95)
        compute_gae(other, 0.99, 0.95)
        # first-step advantage is independent of everything after the terminal
        a1 = base.targets[0, 0] - base.values[0, 0]
        a2 = other.targets[0, 0] - other.values[0, 0]
        assert a1 == pytest.approx(a2)

    def test_normalization(self):
        rng = np.random.default_rng(0)
        batch = hand_batch(rng.standard_normal(32), rng.standard_normal(32), [False] * 32, 0.0)
        compute_gae(batch, 0.99, 0.95)
        assert batch.advantages.mean() == pytest.approx(0.0, abs=1e-10)
        assert batch.advantages.std() == pytest.approx(1.0, rel=1e-6)


class TestClippedSurrogate:
    def test_positive_advantage_clips_high_ratio(self):
        ratio, eps, adv = 1.3, 0.2, 1.0
        clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
        assert min(ratio * adv, clipped) == pytest.approx(1.2)

    def test_negative_advantage_clip_selects_lower(self):
        ratio, eps, adv = 0.5, 0.2, -1.0
        clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
        assert min(ratio * adv, clipped) == pytest.approx(-0.8)


class TestPpoUpdate:
    def collect(self, policy, rng, horizon=64, n=2):
        batch = collect_rollouts(
            policy, lqr_samples(n, rng), make_env_factory("lqr"), horizon, rng
        )
        return compute_gae(batch, 0.99, 0.95)

    def test_surrogate_at_old_policy_equals_mean_advantage(self, policy):
        rng = np.random.default_rng(0)
        batch = self.collect(policy, rng)
        x = policy.net_input(batch.states.reshape(-1, 2), batch.designs.reshape(-1, 2))
        mean, _ = mlp_forward(policy.actor, x)
        lp = gaussian_log_prob(mean, policy.log_std, batch.actions.reshape(-1, 1))
        ratio = np.exp(lp - batch.log_probs.reshape(-1))
        assert ratio == pytest.approx(np.ones_like(ratio), rel=1e-12)
        adv = batch.advantages.reshape(-1)
        surr = np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv)
        assert surr.mean() == pytest.approx(adv.mean(), rel=1e-12)

    def test_gradient_at_old_policy_matches_vanilla_policy_gradient(self):
        # at ratio = 1 the clip is inactive, so the surrogate's gradient must
        # equal the likelihood-ratio gradient mean(adv * d log pi) computed
        # by finite differences of the unclipped objective
        policy = make_policy(2, 1, SPACE, hidden=(4,), rng=np.random.default_rng(1))
        rng = np.random.default_rng(2)
        batch = self.collect(policy, rng, horizon=8, n=1)
        states = batch.states.reshape(-1, 2)
        designs = batch.designs.reshape(-1, 2)
        actions = batch.actions.reshape(-1, 1)
        adv = batch.advantages.reshape(-1)
        old_lp = batch.log_probs.reshape(-1)

        def surrogate(flat):
            p2 = policy.actor.from_flat(flat)
            mean, _ = mlp_forward(p2, policy.net_input(states, designs))
            lp = gaussian_log_prob(mean, policy.log_std, actions)
            ratio = np.exp(lp - old_lp)
            return float(np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv).mean())

        def vanilla(flat):
            p2 = policy.actor.from_flat(flat)
            mean, _ = mlp_forward(p2, policy.net_input(states, designs))
            lp = gaussian_log_prob(mean, policy.log_std, actions)
            return float((np.exp(lp - old_lp) * adv).mean())

        flat0 = policy.actor.to_flat()
        g_clip = finite_diff_grad(surrogate, flat0, 1e-6)
        g_vanilla = finite_diff_grad(vanilla, flat0, 1e-6)
        assert np.max(np.abs(g_clip - g_vanilla)) < 1e-8

    def test_no_update_when_advantages_zero_and_targets_match(self, policy):
        rng = np.random.default_rng(3)
        batch = self.collect(policy, rng)
        batch.advantages = np.zeros_like(batch.advantages)
        x = policy.net_input(batch.states.reshape(-1, 2), batch.designs.reshape(-1, 2))
        v, _ = mlp_forward(policy.critic, x)
        batch.targets = v[:, 0].reshape(batch.targets.shape)
        cfg = PpoConfig(entropy_coef=0.0)
        optim = PpoOptimState.for_policy(policy)
        updated = ppo_update(policy, batch, cfg, optim, np.random.default_rng(4))
        assert np.array_equal(updated.actor.to_flat(), policy.actor.to_flat())
        assert np.array_equal(updated.critic.to_flat(), policy.critic.to_flat())
        assert np.array_equal(updated.log_std, policy.log_std)

    def test_update_improves_surrogate_on_batch(self, policy):
        rng = np.random.default_rng(5)
        batch = self.collect(policy, rng, horizon=128, n=4)
        cfg = PpoConfig(epochs=2, minibatch_size=64)
        optim = PpoOptimState.for_policy(policy)
        updated = ppo_update(policy, batch, cfg, optim, np.random.default_rng(6))

        def surr(pol):
            x = pol.net_input(batch.states.reshape(-1, 2), batch.designs.reshape(-1, 2))
            mean, _ = mlp_forward(pol.actor, x)
            lp = gaussian_log_prob(mean, pol.log_std, batch.actions.reshape(-1, 1))
            ratio = np.exp(lp - batch.log_probs.reshape(-1))
            adv = batch.advantages.reshape(-1)
            return float(np.minimum(ratio * adv, np.clip(ratio, 0.8, 1.2) * adv).mean())

        assert surr(updated) > surr(policy)


class TestEvaluateDesign:
    def test_constant_reward_environment(self, policy):
        class TenStepEnv:
            state_dim, action_dim = 2, 1
            design_space = SPACE
            max_episode_steps = 10

            def __init__(self):
                self._t = 0

            def reset(self, design, rng):
                self._t = 0
                return np.zeros(2)

            def step(self, action):
                self._t += 1
                return np.zeros(2), 1.0, self._t >= 10

        ret = evaluate_design(
            policy, TenStepEnv, np.array([1.0, 0.5]), 3, np.random.default_rng(0)
        )
        assert ret == pytest.approx(10.0)

    def test_single_episode_matches_manual_rollout(self, policy):
        design = np.array([1.2, 0.3])
        ret = evaluate_design(
            policy, make_env_factory("lqr"), design, 1, np.random.default_rng(7)
        )
        env = make_env_factory("lqr")()
        state = env.reset(design, np.random.default_rng(7))
        total, done = 0.0, False
        while not done:
            x = policy.net_input(state[None], design[None])
            mean, _ = mlp_forward(policy.actor, x)
            state, r, done = env.step(mean[0])
            total += r
        assert ret == pytest.approx(total, rel=1e-12)

    def test_mean_of_episode_returns(self, policy):
        design = np.array([0.8, 0.6])
        rng = np.random.default_rng(8)
        ret = evaluate_design(policy, make_env_factory("lqr"), design, 5, rng)
        rng = np.random.default_rng(8)
        singles = []
        env_factory = make_env_factory("lqr")
        for _ in range(5):
            singles.append(evaluate_design(policy, env_factory, design, 1, rng))
        assert ret == pytest.approx(np.mean(singles), rel=1e-12)
