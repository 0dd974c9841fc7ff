"""Experiment configuration: flat `key = value` text files with `#` comments
and dotted keys, plus typed access and strict unknown-key rejection."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .design import ConfigError, DesignSpace
from .envs import ENV_REGISTRY, RewardWeights, make_env_factory
from .rl import PpoConfig


@dataclass(frozen=True)
class TrainSchedule:
    """Timestep budgets and intervals of the joint training loop."""

    total_timesteps: int = 1_500_000
    warmup_timesteps: int = 150_000
    prune_interval: int = 300_000
    finalize_budget: int = 150_000
    num_designs: int = 8
    horizon: int = 1024

    def __post_init__(self):
        if self.warmup_timesteps >= self.total_timesteps:
            raise ConfigError("warmup_timesteps must be below total_timesteps")
        if self.prune_interval <= 0:
            raise ConfigError("prune_interval must be positive")
        if self.finalize_budget >= self.total_timesteps:
            raise ConfigError("finalize_budget must be below total_timesteps")
        if self.num_designs < 1 or self.horizon < 1:
            raise ConfigError("num_designs and horizon must be positive")


# key -> (default value, parser); None default means "computed later"
def _parse_hidden(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in str(s).split(",") if p.strip())


def _parse_bool(s) -> bool:
    if isinstance(s, bool):
        return s
    if str(s).lower() in ("true", "1", "yes"):
        return True
    if str(s).lower() in ("false", "0", "no"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_SCHEMA: dict[str, tuple] = {
    "env": ("lqr", str),
    "seed": (0, int),
    "out": ("runs/run", str),
    "eval.episodes": (100, int),
    "gmm.components": (8, int),
    "gmm.lr": (3e-3, float),
    "gmm.baseline": ("mean_return", str),
    "gmm.samples_per_component": (100, int),
    "gmm.return_mode": ("undiscounted", str),
    "ppo.clip": (0.2, float),
    "ppo.gamma": (0.99, float),
    "ppo.gae_lambda": (0.95, float),
    "ppo.epochs": (4, int),
    "ppo.minibatch_size": (256, int),
    "ppo.policy_lr": (3e-4, float),
    "ppo.value_lr": (1e-3, float),
    "ppo.entropy_coef": (0.0, float),
    "ppo.value_coef": (0.5, float),
    "ppo.max_grad_norm": (0.5, float),
    "policy.hidden": ((128, 128, 128), _parse_hidden),
    "policy.log_std_init": (0.0, float),
    "schedule.total_timesteps": (1_500_000, int),
    "schedule.warmup_timesteps": (150_000, int),
    "schedule.prune_interval": (300_000, int),
    "schedule.finalize_budget": (150_000, int),
    "schedule.num_designs": (8, int),
    "schedule.horizon": (1024, int),
    "log.histogram_interval": (150_000, int),
    "log.histogram_samples": (100, int),
    "checkpoint.interval": (0, int),
}

# env-dependent prefixes validated separately
_REWARD_PREFIX = "reward."
_DESIGN_PREFIX = "design."


def parse_config_text(text: str) -> dict[str, str]:
    """Parse `key = value` lines into a raw string map."""
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {line!r}")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


@dataclass
class ExperimentConfig:
    """Typed experiment configuration resolved against the schema."""

    values: dict[str, object]
    reward_overrides: dict[str, float] = field(default_factory=dict)
    design_overrides: dict[str, float] = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "ExperimentConfig":
        values = {k: v for k, (v, _) in _SCHEMA.items()}
        reward_overrides: dict[str, float] = {}
        design_overrides: dict[str, float] = {}
        for key, sval in raw.items():
            if key in _SCHEMA:
                _, parser = _SCHEMA[key]
                try:
                    values[key] = parser(sval)
                except (ValueError, TypeError) as exc:
                    raise ConfigError(f"key {key!r}: {exc}") from exc
            elif key.startswith(_REWARD_PREFIX):
                reward_overrides[key[len(_REWARD_PREFIX):]] = float(sval)
            elif key.startswith(_DESIGN_PREFIX):
                design_overrides[key[len(_DESIGN_PREFIX):]] = float(sval)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        cfg = cls(values, reward_overrides, design_overrides)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str, overrides: list[str] | None = None) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            raw = parse_config_text(fh.read())
        return cls._apply_overrides(raw, overrides)

    @classmethod
    def defaults(cls, overrides: list[str] | None = None) -> "ExperimentConfig":
        return cls._apply_overrides({}, overrides)

    @classmethod
    def _apply_overrides(cls, raw: dict[str, str], overrides) -> "ExperimentConfig":
        for item in overrides or []:
            if "=" not in item:
                raise ConfigError(f"override must be KEY=VALUE, got {item!r}")
            key, value = item.split("=", 1)
            raw[key.strip()] = value.strip()
        return cls.from_mapping(raw)

    def validate(self) -> None:
        env = self.values["env"]
        if env not in ENV_REGISTRY:
            raise ConfigError(f"unknown env {env!r}; choices: {sorted(ENV_REGISTRY)}")
        cls = ENV_REGISTRY[env]
        default_weights = dict(cls().weights.values)
        for name in self.reward_overrides:
            if name not in default_weights:
                raise ConfigError(
                    f"unknown reward weight {name!r} for env {env!r}; "
                    f"known: {sorted(default_weights)}"
                )
        names = set(cls.design_space.names)
        for key in self.design_overrides:
            parts = key.rsplit(".", 1)
            if len(parts) != 2 or parts[0] not in names or parts[1] not in ("lower", "upper"):
                raise ConfigError(f"bad design override {_DESIGN_PREFIX + key!r}")
        if self.values["gmm.baseline"] not in ("none", "mean_return"):
            raise ConfigError("gmm.baseline must be `none` or `mean_return`")
        if self.values["gmm.return_mode"] not in ("undiscounted", "discounted"):
            raise ConfigError("gmm.return_mode must be `undiscounted` or `discounted`")
        self.schedule()  # runs range checks
        self.ppo()

    # --- typed accessors --------------------------------------------------

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def env_name(self) -> str:
        return str(self.values["env"])

    def reward_weights(self) -> RewardWeights:
        base = ENV_REGISTRY[self.env_name]().weights
        return base.replace(**self.reward_overrides)

    def env_factory(self):
        return make_env_factory(self.env_name, self.reward_weights())

    def design_space(self) -> DesignSpace:
        base = ENV_REGISTRY[self.env_name].design_space
        params = []
        for name, lo, hi in base.parameters:
            lo = self.design_overrides.get(f"{name}.lower", lo)
            hi = self.design_overrides.get(f"{name}.upper", hi)
            params.append((name, lo, hi))
        return DesignSpace(tuple(params))

    def ppo(self) -> PpoConfig:
        v = self.values
        return PpoConfig(
            clip=v["ppo.clip"], gamma=v["ppo.gamma"], gae_lambda=v["ppo.gae_lambda"],
            epochs=v["ppo.epochs"], minibatch_size=v["ppo.minibatch_size"],
            policy_lr=v["ppo.policy_lr"], value_lr=v["ppo.value_lr"],
            entropy_coef=v["ppo.entropy_coef"], value_coef=v["ppo.value_coef"],
            max_grad_norm=v["ppo.max_grad_norm"],
        )

    def schedule(self) -> TrainSchedule:
        v = self.values
        return TrainSchedule(
            total_timesteps=v["schedule.total_timesteps"],
            warmup_timesteps=v["schedule.warmup_timesteps"],
            prune_interval=v["schedule.prune_interval"],
            finalize_budget=v["schedule.finalize_budget"],
            num_designs=v["schedule.num_designs"],
            horizon=v["schedule.horizon"],
        )


def worker_pool_size() -> int:
    """Worker-pool size hint; NLIMB_WORKERS overrides the core count."""
    raw = os.environ.get("NLIMB_WORKERS")
    if raw is None:
        return os.cpu_count() or 1
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"NLIMB_WORKERS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError("NLIMB_WORKERS must be >= 1")
    return n
