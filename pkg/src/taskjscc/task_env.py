"""Synthetic task with separable task-relevant and clutter content.

Hidden factors ``t ~ N(0, I)`` drive both a linear "task block" of the input
and the bounded action ``a = tanh(B t)``; the remaining "clutter" inputs are
independent noise the agent should learn to ignore.
"""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass

import numpy as np

from .neural import MLP, Adam, mlp_spec
from .errors import NumericalAbort
from .objectives import neg_log_gauss


@dataclass(frozen=True)
class DatasetSpec:
    seed: int = 0
    n_train: int = 8192
    n_test: int = 2048
    l: int = 64
    d: int = 4
    latent_dim: int = 4
    clutter_ratio: float = 0.5
    noise_std: float = 0.01
    action_gain: float = 0.8

    def __post_init__(self):
        if not self.latent_dim <= self.d <= self.l:
            raise ValueError("need latent_dim <= d <= l")
        if not 0.0 <= self.clutter_ratio < 1.0:
            raise ValueError("clutter_ratio must lie in [0, 1)")
        if self.task_dim < self.latent_dim:
            raise ValueError("task block narrower than the latent factors")

    @property
    def task_dim(self) -> int:
        return self.l - int(round(self.clutter_ratio * self.l))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Dataset:
    spec: DatasetSpec
    x_train: np.ndarray
    a_train: np.ndarray
    x_test: np.ndarray
    a_test: np.ndarray
    mixing: np.ndarray   # A: (task_dim, latent_dim)
    readout: np.ndarray  # B: (d, latent_dim)

    def task_block(self, x):
        return x[..., : self.spec.task_dim]


def generate_dataset(spec: DatasetSpec, rng: np.random.Generator | None = None) -> Dataset:
    """Draw train and test sets; everything is a function of ``spec.seed``
    unless an explicit stream is passed."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    m = spec.task_dim
    A = rng.standard_normal((m, spec.latent_dim)) / np.sqrt(spec.latent_dim)
    B = rng.standard_normal((spec.d, spec.latent_dim))
    B *= spec.action_gain / np.linalg.norm(B, axis=1, keepdims=True)

    def draw(n):
        t = rng.standard_normal((n, spec.latent_dim))
        clutter = rng.standard_normal((n, spec.l - m))
        x = np.concatenate([t @ A.T, clutter], axis=1)
        x += spec.noise_std * rng.standard_normal(x.shape)
        return x, np.tanh(t @ B.T)

    x_tr, a_tr = draw(spec.n_train)
    x_te, a_te = draw(spec.n_test)
    return Dataset(spec, x_tr, a_tr, x_te, a_te, A, B)


@dataclass
class AgentSchedule:
    hidden: int = 128
    steps: int = 6000
    batch: int = 128
    lr: float = 2e-3
    lr_final: float = 1e-4
    input_shrink: float = 8.0
    shrink_fraction: float = 0.6
    mse_threshold: float = 0.01
    seed: int = 0


def _prox_group(W, thresh):
    """Group soft-threshold on the rows of the input layer (one row per input)."""
    norms = np.linalg.norm(W, axis=1, keepdims=True)
    scale = np.maximum(0.0, 1.0 - thresh / np.maximum(norms, 1e-300))
    W *= scale


def pretrain_agent(data: Dataset, schedule: AgentSchedule | None = None) -> MLP:
    """Fit the agent on clean inputs, then freeze it.

    Adam on the mean squared error. During the first ``shrink_fraction`` of
    the steps a per-input group-lasso proximal step on the first layer drives
    inputs carrying no task signal to exactly zero weight; the remaining
    steps keep those rows pinned at zero and refit without shrinkage.
    Raises :class:`NumericalAbort` if the test MSE does
    not reach ``mse_threshold``.
    """
    s = schedule or AgentSchedule()
    spec = mlp_spec(data.spec.l, [s.hidden], data.spec.d, s.seed)
    net = MLP(spec)
    opt = Adam(lr=s.lr)
    rng = np.random.default_rng([s.seed, 17])
    n = data.x_train.shape[0]
    decay = (s.lr_final / s.lr) ** (1.0 / max(s.steps - 1, 1))
    n_shrink = int(s.shrink_fraction * s.steps) if s.input_shrink else 0
    dead = None
    for step in range(s.steps):
        idx = rng.integers(0, n, s.batch)
        x, a = data.x_train[idx], data.a_train[idx]
        out, cache = net.forward(x)
        g = 2.0 * (out - a) / a.size
        grads, _ = net.backward(cache, g)
        opt.lr = s.lr * decay ** step
        opt.step(net.params, grads)
        if step < n_shrink:
            _prox_group(net.params[0], opt.lr * s.input_shrink)
            if step == n_shrink - 1:
                dead = ~np.any(net.params[0], axis=1)
        elif dead is not None:
            net.params[0][dead] = 0.0
    mse = agent_mse(net, data.x_test, data.a_test)
    if not mse < s.mse_threshold:
        raise NumericalAbort(f"agent pretraining stalled at test MSE {mse:.4g} "
                             f"(threshold {s.mse_threshold})")
    net.frozen = True
    return net


def agent_infer(agent: MLP, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.shape[-1] != agent.n_in:
        raise ValueError(f"agent expects {agent.n_in} input features, got {y.shape[-1]}")
    return agent(np.atleast_2d(y)).reshape(y.shape[:-1] + (agent.n_out,))


def agent_loss(a, a_hat, sigma_c: float = 1.0):
    return neg_log_gauss(a, a_hat, sigma_c)


def agent_mse(agent: MLP, x, a) -> float:
    return float(np.mean((agent_infer(agent, x) - a) ** 2))


def param_digest(net: MLP) -> str:
    h = hashlib.sha256()
    for p in net.params:
        h.update(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return h.hexdigest()
