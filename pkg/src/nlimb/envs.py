"""Design-parameterized environments.

Each environment is a small MDP whose transition dynamics depend on a vector
of physical design parameters drawn from a bounded DesignSpace. Reward terms
are scaled by named RewardWeights; changing weights never changes dynamics.

Families:
  - DesignedCartPole: balance task; design = (pole length, pole mass).
  - DesignedLqr: double-integrator with actuation gain and damping; the
    optimal return per design has a closed form via a Riccati recursion,
    which makes this family the verification oracle.
  - DesignedReacher: kinematic two-link arm reaching annulus targets;
    design = link lengths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design import ContractError, DesignSpace
from .numerics import NumericError


@dataclass(frozen=True)
class RewardWeights:
    """Named multipliers on reward terms. Unknown names are rejected."""

    values: tuple[tuple[str, float], ...]

    def __getitem__(self, name: str) -> float:
        for k, v in self.values:
            if k == name:
                return v
        raise KeyError(name)

    def replace(self, **overrides) -> "RewardWeights":
        known = dict(self.values)
        for k in overrides:
            if k not in known:
                raise KeyError(f"unknown reward weight {k!r}")
        known.update(overrides)
        return RewardWeights(tuple(known.items()))


class Env:
    """Environment contract: reset(design, rng) then step(action) until done."""

    state_dim: int
    action_dim: int
    design_space: DesignSpace
    max_episode_steps: int
    default_design: np.ndarray

    def reset(self, design: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def step(self, action: np.ndarray):
        raise NotImplementedError


CARTPOLE_SPACE = DesignSpace((("pole_length", 0.25, 2.0), ("pole_mass", 0.05, 1.0)))
LQR_SPACE = DesignSpace((("gain", 0.2, 2.0), ("damping", 0.05, 1.0)))
REACHER_SPACE = DesignSpace((("link1", 0.2, 1.2), ("link2", 0.2, 1.2)))

CARTPOLE_WEIGHTS = RewardWeights((("alive", 1.0), ("action_penalty", 0.0)))
LQR_WEIGHTS = RewardWeights((("position_penalty", 1.0), ("action_penalty", 0.1)))
REACHER_WEIGHTS = RewardWeights((("distance_penalty", 1.0), ("action_penalty", 0.01)))


class DesignedCartPole(Env):
    """Cart-pole balance with designable pole length/mass.

    Semi-implicit Euler at dt=0.02; cart mass 1 kg, gravity 9.8, force
    clipped to +/-10 N. Episode ends at |theta| > 12 deg, |x| > 2.4, or 500
    steps. Reward = alive - action_penalty * a^2.
    """

    state_dim = 4
    action_dim = 1
    design_space = CARTPOLE_SPACE
    max_episode_steps = 500
    default_design = np.array([0.5, 0.1])

    dt = 0.02
    gravity = 9.8
    cart_mass = 1.0
    force_limit = 10.0
    theta_limit = 12.0 * np.pi / 180.0
    x_limit = 2.4

    def __init__(self, weights: RewardWeights = CARTPOLE_WEIGHTS):
        self.weights = weights
        self._state = None
        self._design = None
        self._steps = 0
        self._done = True

    def reset(self, design, rng):
        self._design = np.asarray(design, dtype=np.float64)
        self._state = rng.uniform(-0.05, 0.05, size=4)
        self._steps = 0
        self._done = False
        return self._state.copy()

    def step(self, action):
        if self._done:
            raise ContractError("step after episode end")
        a = float(np.asarray(action).reshape(-1)[0])
        if not np.isfinite(a):
            raise NumericError("non-finite action")
        force = np.clip(a, -self.force_limit, self.force_limit)
        length, pole_mass = self._design
        half = length / 2.0
        total_mass = self.cart_mass + pole_mass
        x, x_dot, theta, theta_dot = self._state
        cos_t, sin_t = np.cos(theta), np.sin(theta)
        temp = (force + pole_mass * half * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.gravity * sin_t - cos_t * temp) / (
            half * (4.0 / 3.0 - pole_mass * cos_t**2 / total_mass)
        )
        x_acc = temp - pole_mass * half * theta_acc * cos_t / total_mass
        x_dot = x_dot + self.dt * x_acc
        theta_dot = theta_dot + self.dt * theta_acc
        x = x + self.dt * x_dot
        theta = theta + self.dt * theta_dot
        self._state = np.array([x, x_dot, theta, theta_dot])
        self._steps += 1
        fell = abs(theta) > self.theta_limit or abs(x) > self.x_limit
        done = fell or self._steps >= self.max_episode_steps
        reward = self.weights["alive"] * 1.0 - self.weights["action_penalty"] * force**2
        self._done = done
        return self._state.copy(), float(reward), bool(done)


class DesignedLqr(Env):
    """Double integrator with designable actuation gain and velocity damping.

    x' = x + dt*v;  v' = v + dt*(gain*a - damping*v)
    reward = -(position_penalty*x^2 + action_penalty*a^2); fixed 200-step
    episodes; reset draws x ~ U[-1,1], v = 0. The optimal expected return per
    design follows from a finite-horizon Riccati recursion (lqr_design_oracle).
    """

    state_dim = 2
    action_dim = 1
    design_space = LQR_SPACE
    max_episode_steps = 200
    default_design = np.array([1.0, 0.5])

    dt = 0.05
    action_limit = 20.0  # far outside the optimal controller's range

    def __init__(self, weights: RewardWeights = LQR_WEIGHTS):
        self.weights = weights
        self._state = None
        self._design = None
        self._steps = 0
        self._done = True

    def reset(self, design, rng):
        self._design = np.asarray(design, dtype=np.float64)
        self._state = np.array([rng.uniform(-1.0, 1.0), 0.0])
        self._steps = 0
        self._done = False
        return self._state.copy()

    def step(self, action):
        if self._done:
            raise ContractError("step after episode end")
        a = float(np.asarray(action).reshape(-1)[0])
        if not np.isfinite(a):
            raise NumericError("non-finite action")
        a = np.clip(a, -self.action_limit, self.action_limit)
        gain, damping = self._design
        x, v = self._state
        reward = -(self.weights["position_penalty"] * x**2 + self.weights["action_penalty"] * a**2)
        x_new = x + self.dt * v
        v_new = v + self.dt * (gain * a - damping * v)
        self._state = np.array([x_new, v_new])
        self._steps += 1
        done = self._steps >= self.max_episode_steps
        self._done = done
        return self._state.copy(), float(reward), bool(done)


class DesignedReacher(Env):
    """Velocity-controlled planar two-link arm with designable link lengths.

    State is (q1, q2, dx, dy) where (dx, dy) points from the end effector to
    the target. Targets are sampled on an annulus of radius [0.5, 1.5], so
    short arms cannot reach all of them. reward = -distance_penalty*dist
    - action_penalty*|a|^2; 100-step episodes.
    """

    state_dim = 4
    action_dim = 2
    design_space = REACHER_SPACE
    max_episode_steps = 100
    default_design = np.array([0.6, 0.6])

    dt = 0.1
    velocity_limit = 2.0
    target_radius = (0.5, 1.5)

    def __init__(self, weights: RewardWeights = REACHER_WEIGHTS):
        self.weights = weights
        self._q = None
        self._target = None
        self._design = None
        self._steps = 0
        self._done = True

    def _end_effector(self):
        l1, l2 = self._design
        q1, q2 = self._q
        return np.array(
            [l1 * np.cos(q1) + l2 * np.cos(q1 + q2), l1 * np.sin(q1) + l2 * np.sin(q1 + q2)]
        )

    def _obs(self):
        delta = self._target - self._end_effector()
        return np.array([self._q[0], self._q[1], delta[0], delta[1]])

    def reset(self, design, rng):
        self._design = np.asarray(design, dtype=np.float64)
        self._q = np.zeros(2)
        radius = rng.uniform(*self.target_radius)
        angle = rng.uniform(-np.pi, np.pi)
        self._target = radius * np.array([np.cos(angle), np.sin(angle)])
        self._steps = 0
        self._done = False
        return self._obs()

    def step(self, action):
        if self._done:
            raise ContractError("step after episode end")
        a = np.asarray(action, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(a)):
            raise NumericError("non-finite action")
        a = np.clip(a, -self.velocity_limit, self.velocity_limit)
        self._q = self._q + self.dt * a
        dist = float(np.linalg.norm(self._target - self._end_effector()))
        reward = -(
            self.weights["distance_penalty"] * dist
            + self.weights["action_penalty"] * float(a @ a)
        )
        self._steps += 1
        done = self._steps >= self.max_episode_steps
        self._done = done
        return self._obs(), float(reward), bool(done)


ENV_REGISTRY = {
    "cartpole": DesignedCartPole,
    "lqr": DesignedLqr,
    "reacher": DesignedReacher,
}


def make_env_factory(name: str, weights: RewardWeights | None = None):
    """Factory of fresh environment instances for the named family."""
    try:
        cls = ENV_REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; choices: {sorted(ENV_REGISTRY)}")
    if weights is None:
        return cls
    return lambda: cls(weights=weights)


def lqr_design_oracle(
    grid_points: int = 201,
    weights: RewardWeights = LQR_WEIGHTS,
    dt: float = DesignedLqr.dt,
    horizon: int = DesignedLqr.max_episode_steps,
):
    """Exact optimal expected return for every design on a grid.

    Solves the finite-horizon discrete Riccati recursion (zero terminal cost)
    for each (gain, damping) grid point and evaluates the quadratic value
    function under the reset distribution x ~ U[-1,1], v = 0, for which
    E[x0 P x0^T] = P[0,0]/3. Returns (argmax design, table) where table rows
    are (gain, damping, optimal expected return).
    """
    if grid_points < 1:
        raise ValueError("grid_points must be >= 1")
    space = LQR_SPACE
    gains = np.linspace(space.lower[0], space.upper[0], grid_points)
    dampings = np.linspace(space.lower[1], space.upper[1], grid_points)
    q = np.diag([weights["position_penalty"], 0.0])
    r = weights["action_penalty"]
    rows = []
    best = None
    for g in gains:
        for c in dampings:
            a_mat = np.array([[1.0, dt], [0.0, 1.0 - dt * c]])
            b_mat = np.array([[0.0], [dt * g]])
            p = np.zeros((2, 2))
            for _ in range(horizon):
                bpb = (b_mat.T @ p @ b_mat).item() + r
                k = (b_mat.T @ p @ a_mat) / bpb
                p = q + a_mat.T @ p @ a_mat - (a_mat.T @ p @ b_mat) @ k
            ret = -p[0, 0] / 3.0
            rows.append((g, c, ret))
            if best is None or ret > best[2]:
                best = (g, c, ret)
    table = np.array(rows)
    return np.array([best[0], best[1]]), table


def lqr_optimal_return(design: np.ndarray, weights: RewardWeights = LQR_WEIGHTS) -> float:
    """Optimal expected return for one specific design (Riccati recursion)."""
    g, c = design
    q = np.diag([weights["position_penalty"], 0.0])
    r = weights["action_penalty"]
    dt = DesignedLqr.dt
    a_mat = np.array([[1.0, dt], [0.0, 1.0 - dt * c]])
    b_mat = np.array([[0.0], [dt * g]])
    p = np.zeros((2, 2))
    for _ in range(DesignedLqr.max_episode_steps):
        bpb = (b_mat.T @ p @ b_mat).item() + r
        k = (b_mat.T @ p @ a_mat) / bpb
        p = q + a_mat.T @ p @ a_mat - (a_mat.T @ p @ b_mat) @ k
    return float(-p[0, 0] / 3.0)
