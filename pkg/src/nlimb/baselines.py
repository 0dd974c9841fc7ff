"""Comparison methods: fixed default design, uniform random design search,
and Bayesian optimization with an in-repo Gaussian-process surrogate and
expected-improvement acquisition.

All methods charge environment timesteps to a BudgetLedger so comparisons
against the joint method stay fair.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .design import ConfigError, DesignSample, DesignSpace
from .numerics import NumericError
from .rl import (
    PolicyState,
    PpoConfig,
    PpoOptimState,
    collect_rollouts,
    compute_gae,
    evaluate_designs_with_steps,
    make_policy,
    ppo_update,
)


@dataclass
class BudgetLedger:
    """Environment-timestep accounting. Training steps are charged per
    candidate; evaluation steps are metered separately."""

    allowed: int
    consumed: list[int] = field(default_factory=list)
    eval_timesteps: int = 0

    @property
    def total_consumed(self) -> int:
        return sum(self.consumed)

    def charge(self, timesteps: int) -> None:
        if self.total_consumed + timesteps > self.allowed:
            raise ConfigError(
                f"budget exceeded: {self.total_consumed} + {timesteps} > {self.allowed}"
            )
        self.consumed.append(timesteps)


@dataclass(frozen=True)
class TrainSettings:
    """Rollout shape and evaluation protocol shared by all baselines."""

    n_parallel: int = 8
    horizon: int = 1024
    hidden: tuple[int, ...] = (128, 128, 128)
    log_std_init: float = 0.0
    eval_episodes: int = 100


def train_fixed_design(
    design: np.ndarray,
    env_factory,
    ppo: PpoConfig,
    budget: int,
    seed: int,
    settings: TrainSettings = TrainSettings(),
    ledger: BudgetLedger | None = None,
) -> tuple[PolicyState, float]:
    """PPO on a single design (still design-conditioned for architectural
    parity). Returns the trained policy and its mean evaluated return.
    """
    probe = env_factory()
    space = probe.design_space
    design = np.asarray(design, dtype=np.float64)
    if np.any(design < space.lower) or np.any(design > space.upper):
        raise ConfigError(f"design {design} outside bounds")
    per_iter = settings.n_parallel * settings.horizon
    if budget < per_iter:
        raise ConfigError(f"budget {budget} below one iteration ({per_iter} timesteps)")
    rng = np.random.default_rng(seed)
    policy = make_policy(
        probe.state_dim, probe.action_dim, space,
        hidden=settings.hidden, rng=rng, log_std_init=settings.log_std_init,
    )
    optim = PpoOptimState.for_policy(policy)
    samples = [
        DesignSample(raw=design.copy(), clamped=design.copy(), component_id=0)
        for _ in range(settings.n_parallel)
    ]
    consumed = 0
    while consumed + per_iter <= budget:
        batch = collect_rollouts(policy, samples, env_factory, settings.horizon, rng)
        compute_gae(batch, ppo.gamma, ppo.gae_lambda)
        policy = ppo_update(policy, batch, ppo, optim, rng)
        consumed += per_iter
    if ledger is not None:
        ledger.charge(consumed)
    returns, eval_steps = evaluate_designs_with_steps(
        policy, env_factory, [design], settings.eval_episodes, rng
    )
    if ledger is not None:
        ledger.eval_timesteps += eval_steps
    return policy, float(returns[0])


def random_search(
    space: DesignSpace,
    env_factory,
    ppo: PpoConfig,
    per_candidate_budget: int,
    total_budget: int,
    seed: int,
    settings: TrainSettings = TrainSettings(),
):
    """Uniform design samples, one policy each; returns the best
    (design, return, policy) plus the ledger."""
    if total_budget < per_candidate_budget:
        raise ConfigError("total budget smaller than one candidate's budget")
    rng = np.random.default_rng(seed)
    ledger = BudgetLedger(total_budget)
    num_candidates = total_budget // per_candidate_budget
    best = None
    for i in range(num_candidates):
        design = rng.uniform(space.lower, space.upper)
        policy, ret = train_fixed_design(
            design, env_factory, ppo, per_candidate_budget,
            seed=int(rng.integers(2**31)), settings=settings, ledger=ledger,
        )
        if best is None or ret > best[1]:
            best = (design, ret, policy)
    return best[0], best[1], best[2], ledger


# --- Gaussian-process surrogate ------------------------------------------


@dataclass(frozen=True)
class GpHyperParams:
    signal_var: float
    length_scales: np.ndarray  # per input dimension
    noise_var: float


@dataclass
class GpModel:
    """Exact GP regression with a squared-exponential kernel.

    Inputs live in the unit box; targets are standardized internally and
    predictions are returned in the original units.
    """

    inputs: np.ndarray
    targets_std: np.ndarray
    target_mean: float
    target_scale: float
    hyper: GpHyperParams
    chol: np.ndarray
    alpha: np.ndarray


def _se_kernel(a: np.ndarray, b: np.ndarray, hyper: GpHyperParams) -> np.ndarray:
    d = (a[:, None, :] - b[None, :, :]) / hyper.length_scales
    return hyper.signal_var * np.exp(-0.5 * (d**2).sum(axis=-1))


def _chol_with_jitter(k: np.ndarray, noise_var: float):
    base = k + noise_var * np.eye(len(k))
    jitter = 0.0
    while jitter <= 1e-2:
        try:
            return np.linalg.cholesky(base + jitter * np.eye(len(k)))
        except np.linalg.LinAlgError:
            jitter = 1e-6 if jitter == 0.0 else jitter * 10.0
    raise NumericError("kernel matrix not positive definite after max jitter")


def gp_fit(inputs: np.ndarray, targets: np.ndarray, hyper: GpHyperParams | None = None) -> GpModel:
    """Fit by Cholesky; if no hyperparameters given, pick the combination of
    log-spaced length scales, signal and noise variances with the highest log
    marginal likelihood."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    if len(inputs) == 0:
        raise ConfigError("need at least one observation")
    mean = float(targets.mean())
    scale = float(targets.std())
    if scale < 1e-12:
        scale = 1.0
    y = (targets - mean) / scale
    if hyper is None:
        hyper = _select_hyperparams(inputs, y)
    chol = _chol_with_jitter(_se_kernel(inputs, inputs, hyper), hyper.noise_var)
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    return GpModel(inputs, y, mean, scale, hyper, chol, alpha)


def _log_marginal_likelihood(inputs, y, hyper) -> float:
    try:
        chol = _chol_with_jitter(_se_kernel(inputs, inputs, hyper), hyper.noise_var)
    except NumericError:
        return -np.inf
    alpha = np.linalg.solve(chol.T, np.linalg.solve(chol, y))
    return float(-0.5 * y @ alpha - np.log(np.diag(chol)).sum() - 0.5 * len(y) * np.log(2 * np.pi))


def _select_hyperparams(inputs: np.ndarray, y: np.ndarray) -> GpHyperParams:
    dim = inputs.shape[1]
    best, best_lml = None, -np.inf
    for ell in np.logspace(-1.3, 0.5, 10):
        for sv in (0.5, 1.0, 2.0):
            for nv in (1e-6, 1e-4, 1e-2):
                h = GpHyperParams(sv, np.full(dim, ell), nv)
                lml = _log_marginal_likelihood(inputs, y, h)
                if lml > best_lml:
                    best, best_lml = h, lml
    return best


def gp_predict(model: GpModel, x: np.ndarray):
    """Posterior mean and variance at x (single point or batch)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    k_star = _se_kernel(x, model.inputs, model.hyper)
    mean = k_star @ model.alpha
    v = np.linalg.solve(model.chol, k_star.T)
    var = model.hyper.signal_var - (v**2).sum(axis=0)
    var = np.maximum(var, 0.0)
    mean = mean * model.target_scale + model.target_mean
    var = var * model.target_scale**2
    if mean.size == 1:
        return float(mean[0]), float(var[0])
    return mean, var


def _norm_cdf(z):
    return 0.5 * (1.0 + np.vectorize(math.erf)(z / math.sqrt(2.0)))


def _norm_pdf(z):
    return np.exp(-0.5 * np.asarray(z) ** 2) / math.sqrt(2.0 * math.pi)


def expected_improvement(model: GpModel, x: np.ndarray, best_observed: float):
    """EI for maximization: sigma * (z*Phi(z) + phi(z)), 0 at zero variance."""
    mean, var = gp_predict(model, x)
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.asarray(var, dtype=np.float64))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, (mean - best_observed) / np.where(sigma > 0, sigma, 1.0), 0.0)
    ei = np.where(sigma > 0, sigma * (z * _norm_cdf(z) + _norm_pdf(z)), 0.0)
    if ei.ndim == 0 or ei.size == 1:
        return float(np.asarray(ei).reshape(-1)[0])
    return ei


def bayesopt_core(
    space: DesignSpace,
    objective,
    num_evals: int,
    rng: np.random.Generator,
    num_restarts: int = 1024,
):
    """EI-driven sequential search over the design box.

    Two uniform seeding candidates, then EI maximized over a fresh batch of
    uniform restart points each round. Returns (best_x, best_y, history).
    """
    if num_evals < 2:
        raise ConfigError("need budget for at least 2 candidates")
    lo, hi = space.lower, space.upper
    span = hi - lo

    def to_unit(x):
        return (x - lo) / span

    xs, ys = [], []
    for i in range(num_evals):
        if i < 2:
            x = rng.uniform(lo, hi)
        else:
            model = gp_fit(np.array([to_unit(v) for v in xs]), np.array(ys))
            cands = rng.uniform(lo, hi, size=(num_restarts, space.dim))
            ei = expected_improvement(model, to_unit(cands), max(ys))
            x = cands[int(np.argmax(ei))]
        ys.append(float(objective(x)))
        xs.append(x)
    best = int(np.argmax(ys))
    return xs[best], ys[best], list(zip(xs, ys))


def bayesopt_search(
    space: DesignSpace,
    env_factory,
    ppo: PpoConfig,
    per_candidate_budget: int,
    total_budget: int,
    seed: int,
    settings: TrainSettings = TrainSettings(),
):
    """Bayesian optimization over designs; each candidate trains its own
    policy. Returns the best (design, return, policy) plus the ledger."""
    num_candidates = total_budget // per_candidate_budget
    if num_candidates < 2:
        raise ConfigError("budget admits fewer than 2 candidates")
    rng = np.random.default_rng(seed)
    ledger = BudgetLedger(total_budget)
    policies = {}

    def objective(design):
        policy, ret = train_fixed_design(
            design, env_factory, ppo, per_candidate_budget,
            seed=int(rng.integers(2**31)), settings=settings, ledger=ledger,
        )
        policies[len(policies)] = (design.copy(), ret, policy)
        return ret

    best_x, best_y, _ = bayesopt_core(space, objective, num_candidates, rng)
    for design, ret, policy in policies.values():
        if ret == best_y and np.allclose(design, best_x):
            return best_x, best_y, policy, ledger
    raise RuntimeError("best candidate not found in trained policies")
