"""Design distribution: a uniform-weight mixture of diagonal Gaussians over a
box-bounded design space, with score-function updates and component pruning.

Samples are drawn raw (unclamped) from the selected component; the clamped
copy is what environments consume, while score-function gradients are always
evaluated at the raw draw so the estimator stays exact for the unclamped
density.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import LOG_2PI, ShapeError


class ConfigError(ValueError):
    """Invalid configuration of the design distribution."""


class ContractError(ValueError):
    """A precondition of a distribution operation was violated."""


@dataclass(frozen=True)
class DesignSpace:
    """Named box bounds for the physical parameter vector."""

    parameters: tuple[tuple[str, float, float], ...]

    def __post_init__(self):
        names = [p[0] for p in self.parameters]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate parameter names")
        for name, lo, hi in self.parameters:
            if not lo < hi:
                raise ConfigError(f"parameter {name!r}: lower {lo} must be < upper {hi}")

    @property
    def dim(self) -> int:
        return len(self.parameters)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(p[0] for p in self.parameters)

    @property
    def lower(self) -> np.ndarray:
        return np.array([p[1] for p in self.parameters])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p[2] for p in self.parameters])

    def clamp(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        """Affine map of the box onto [-1, 1] per dimension."""
        lo, hi = self.lower, self.upper
        return 2.0 * (x - lo) / (hi - lo) - 1.0


@dataclass
class GmmState:
    """Uniform-weight mixture of diagonal Gaussians with an active mask."""

    means: np.ndarray  # (K, dim)
    log_vars: np.ndarray  # (K, dim)
    active: np.ndarray  # (K,) bool

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def num_components(self) -> int:
        return self.means.shape[0]

    @property
    def active_ids(self) -> np.ndarray:
        return np.flatnonzero(self.active)

    def copy(self) -> "GmmState":
        return GmmState(self.means.copy(), self.log_vars.copy(), self.active.copy())


@dataclass(frozen=True)
class DesignSample:
    """One draw: raw (pre-clamp), clamped to bounds, and its source component."""

    raw: np.ndarray
    clamped: np.ndarray
    component_id: int


def log_var_floor(space: DesignSpace) -> np.ndarray:
    """Per-dimension floor preventing degenerate variance collapse."""
    return np.log(1e-6 * (space.upper - space.lower) ** 2)


def init_gmm(space: DesignSpace, num_components: int, rng: np.random.Generator) -> GmmState:
    """Random means within bounds; std = (upper-lower)/2 so each component
    spans the box from a central mean; all components active."""
    if num_components < 1 or (num_components & (num_components - 1)) != 0:
        raise ConfigError(f"num_components must be a power of two, got {num_components}")
    lo, hi = space.lower, space.upper
    means = rng.uniform(lo, hi, size=(num_components, space.dim))
    std = (hi - lo) / 2.0
    log_vars = np.broadcast_to(2.0 * np.log(std), means.shape).copy()
    return GmmState(means, log_vars, np.ones(num_components, dtype=bool))


def sample_design(gmm: GmmState, space: DesignSpace, rng: np.random.Generator) -> DesignSample:
    ids = gmm.active_ids
    if ids.size == 0:
        raise ContractError("no active components")
    k = int(ids[rng.integers(ids.size)])
    std = np.exp(0.5 * gmm.log_vars[k])
    raw = gmm.means[k] + std * rng.standard_normal(gmm.dim)
    return DesignSample(raw=raw, clamped=space.clamp(raw), component_id=k)


def _component_log_probs(gmm: GmmState, x: np.ndarray) -> np.ndarray:
    """Per-active-component Gaussian log densities at x."""
    ids = gmm.active_ids
    mu = gmm.means[ids]
    lv = gmm.log_vars[ids]
    z2 = (x[None, :] - mu) ** 2 * np.exp(-lv)
    return (-0.5 * z2 - 0.5 * lv - 0.5 * LOG_2PI).sum(axis=1)


def gmm_log_prob(gmm: GmmState, x: np.ndarray) -> float:
    """Log density of the uniform-weight mixture, log-sum-exp stabilized."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (gmm.dim,):
        raise ShapeError(f"x has shape {x.shape}, expected ({gmm.dim},)")
    lp = _component_log_probs(gmm, x)
    m = lp.max()
    return float(m + np.log(np.exp(lp - m).sum()) - np.log(lp.size))


def gmm_grad_log_prob(gmm: GmmState, x: np.ndarray):
    """Exact gradient of gmm_log_prob w.r.t. active means and log-variances.

    Returns (mean_grads, log_var_grads) as (n_active, dim) arrays ordered by
    active component index (gmm.active_ids).
    """
    x = np.asarray(x, dtype=np.float64)
    ids = gmm.active_ids
    lp = _component_log_probs(gmm, x)
    m = lp.max()
    w = np.exp(lp - m)
    w /= w.sum()  # posterior responsibilities
    mu = gmm.means[ids]
    inv_var = np.exp(-gmm.log_vars[ids])
    diff = x[None, :] - mu
    mean_grads = w[:, None] * diff * inv_var
    log_var_grads = w[:, None] * 0.5 * (diff**2 * inv_var - 1.0)
    return mean_grads, log_var_grads


def update_distribution(
    gmm: GmmState,
    space: DesignSpace,
    samples: list[DesignSample],
    returns: list[float],
    lr: float,
    baseline: str = "mean_return",
) -> GmmState:
    """One ascent step on the score-function estimator
    (1/n) sum_i grad log p(raw_i) * R_i, with an optional mean-return baseline.

    Means are clipped back into bounds and log-variances floored afterwards.
    """
    if len(samples) == 0:
        raise ContractError("empty sample list")
    if len(samples) != len(returns):
        raise ContractError("samples and returns must have equal length")
    if baseline not in ("none", "mean_return"):
        raise ConfigError(f"unknown baseline mode {baseline!r}")
    ids = gmm.active_ids
    for s in samples:
        if not gmm.active[s.component_id]:
            raise ContractError(f"sample from inactive component {s.component_id}")
    rets = np.asarray(returns, dtype=np.float64)
    if baseline == "mean_return":
        rets = rets - rets.mean()
    # batched responsibilities and score gradients, (n, k, dim) intermediate
    x = np.stack([s.raw for s in samples])
    mu = gmm.means[ids]
    lv = gmm.log_vars[ids]
    inv_var = np.exp(-lv)
    diff = x[:, None, :] - mu[None, :, :]
    comp_lp = (-0.5 * diff**2 * inv_var - 0.5 * lv - 0.5 * LOG_2PI).sum(axis=2)
    w = np.exp(comp_lp - comp_lp.max(axis=1, keepdims=True))
    w /= w.sum(axis=1, keepdims=True)
    rw = rets[:, None] * w
    mean_g = np.einsum("nk,nkd->kd", rw, diff * inv_var)
    log_var_g = np.einsum("nk,nkd->kd", rw, 0.5 * (diff**2 * inv_var - 1.0))
    n = len(samples)
    out = gmm.copy()
    out.means[ids] = out.means[ids] + lr * mean_g / n
    out.log_vars[ids] = out.log_vars[ids] + lr * log_var_g / n
    out.means[ids] = np.clip(out.means[ids], space.lower, space.upper)
    out.log_vars[ids] = np.maximum(out.log_vars[ids], log_var_floor(space))
    return out


def prune_components(
    gmm: GmmState,
    space: DesignSpace,
    evaluator,
    samples_per_component: int = 100,
    rng: np.random.Generator | None = None,
) -> GmmState:
    """Evaluate each active component on sampled designs and deactivate the
    half with the lowest average return (ties: lower index deactivated first).
    """
    ids = gmm.active_ids
    if ids.size < 2 or ids.size % 2 != 0:
        raise ContractError(f"active count must be even and >= 2, got {ids.size}")
    if samples_per_component < 1:
        raise ContractError("samples_per_component must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    scores = np.zeros(ids.size)
    for j, k in enumerate(ids):
        single = GmmState(gmm.means, gmm.log_vars, np.eye(gmm.num_components, dtype=bool)[k])
        total = 0.0
        for _ in range(samples_per_component):
            total += float(evaluator(sample_design(single, space, rng)))
        scores[j] = total / samples_per_component
    # stable sort: among ties, the lower component index sorts first and is cut
    order = np.argsort(scores, kind="stable")
    out = gmm.copy()
    out.active[ids[order[: ids.size // 2]]] = False
    return out


def gmm_mode(gmm: GmmState, space: DesignSpace) -> np.ndarray:
    """Mode estimate: the active mean with the highest mixture density
    (trivially the mean itself for a single active component), clamped."""
    ids = gmm.active_ids
    if ids.size == 0:
        raise ContractError("no active components")
    if ids.size == 1:
        return space.clamp(gmm.means[ids[0]])
    densities = [gmm_log_prob(gmm, gmm.means[k]) for k in ids]
    best = ids[int(np.argmax(densities))]
    return space.clamp(gmm.means[best])
