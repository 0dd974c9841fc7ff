"""Dense 64-bit numerics: small MLPs with manual backprop, Adam, Gaussian
log-densities, and a central-difference gradient oracle for tests.

Everything here is a pure function over value data; no global state.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class ShapeError(ValueError):
    """Raised when an array argument does not match the declared layout."""


class NumericError(ArithmeticError):
    """Raised on non-finite values where finiteness is a contract."""


@dataclass(frozen=True)
class MlpSpec:
    """Layer sizes (input, hidden..., output) of a tanh-hidden MLP."""

    layer_sizes: tuple[int, ...]
    hidden_activation: str = "tanh"

    def __post_init__(self):
        if len(self.layer_sizes) < 2:
            raise ValueError("layer_sizes needs at least input and output")
        if any(s < 1 for s in self.layer_sizes):
            raise ValueError("all layer sizes must be >= 1")
        if self.hidden_activation != "tanh":
            raise ValueError(f"unsupported activation {self.hidden_activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    @property
    def num_params(self) -> int:
        sizes = self.layer_sizes
        return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


@dataclass
class MlpParams:
    """Per-layer weights/biases for an MlpSpec, stored as float64 arrays."""

    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def to_flat(self) -> np.ndarray:
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def from_flat(self, flat: np.ndarray) -> "MlpParams":
        if flat.shape != (self.spec.num_params,):
            raise ShapeError(
                f"flat vector has length {flat.shape}, expected {self.spec.num_params}"
            )
        weights, biases, i = [], [], 0
        sizes = self.spec.layer_sizes
        for a, b in zip(sizes[:-1], sizes[1:]):
            weights.append(flat[i : i + a * b].reshape(a, b).copy())
            i += a * b
            biases.append(flat[i : i + b].copy())
            i += b
        return MlpParams(self.spec, weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.spec,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


def init_mlp(spec: MlpSpec, rng: np.random.Generator, final_scale: float = 1.0) -> MlpParams:
    """Scaled-uniform init, scale 1/sqrt(fan_in); last layer scaled by final_scale."""
    weights, biases = [], []
    sizes = spec.layer_sizes
    last = len(sizes) - 2
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        s = 1.0 / np.sqrt(a)
        if i == last:
            s *= final_scale
        weights.append(rng.uniform(-s, s, size=(a, b)))
        biases.append(np.zeros(b))
    return MlpParams(spec, weights, biases)


def mlp_forward(params: MlpParams, x: np.ndarray):
    """Forward pass through tanh-hidden, linear-output MLP.

    Accepts a single input vector or a (batch, in_dim) matrix. Returns the
    output and a cache (layer inputs) sufficient for mlp_backward.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != params.spec.in_dim:
        raise ShapeError(
            f"input dim {x.shape[1]} does not match spec input {params.spec.in_dim}"
        )
    acts = [x]
    h = x
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ w + b
        if i < n_layers - 1:
            h = np.tanh(h)
        acts.append(h)
    out = h[0] if single else h
    return out, (acts, single)


def mlp_backward(params: MlpParams, cache, output_grad: np.ndarray):
    """Backprop through a cached forward pass.

    output_grad is d(scalar)/d(output), matching the forward batch shape.
    Returns (flat parameter gradient, gradient w.r.t. the input).
    """
    acts, single = cache
    g = np.asarray(output_grad, dtype=np.float64)
    if single:
        g = g[None, :]
    if g.shape != acts[-1].shape:
        raise ShapeError(f"output_grad shape {g.shape} != output shape {acts[-1].shape}")
    n_layers = len(params.weights)
    w_grads = [None] * n_layers
    b_grads = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        if i < n_layers - 1:
            # acts[i + 1] is the post-tanh activation of layer i
            g = g * (1.0 - acts[i + 1] ** 2)
        w_grads[i] = acts[i].T @ g
        b_grads[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
    parts = []
    for wg, bg in zip(w_grads, b_grads):
        parts.append(wg.ravel())
        parts.append(bg)
    input_grad = g[0] if single else g
    return np.concatenate(parts), input_grad


@dataclass
class AdamState:
    """First/second-moment accumulators for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        return cls(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray, lr: float):
    """One Adam update (ascent direction is the caller's responsibility via
    the sign of grads; this implements the standard descent form p -= lr*...).

    Returns (updated params, state). The state is updated in place.
    """
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape != params.shape:
        raise ShapeError(f"grad shape {grads.shape} != param shape {params.shape}")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite entries in gradient")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grads**2
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    new_params = params - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, state


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, x: np.ndarray):
    """Diagonal-Gaussian log density, summed over the last axis.

    Broadcasts over leading batch axes; returns a scalar for 1-D inputs.
    """
    mean = np.asarray(mean, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    z = (x - mean) * np.exp(-log_std)
    per_dim = -0.5 * z**2 - log_std - 0.5 * LOG_2PI
    return per_dim.sum(axis=-1)


def finite_diff_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function; test oracle."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g
