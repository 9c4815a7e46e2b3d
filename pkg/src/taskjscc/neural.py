"""Small dense networks with explicit reverse-mode gradients.

Everything runs in float64 on batched row-major arrays ``(batch, features)``.
``forward`` returns the output together with a cache; ``backward`` consumes
that cache, so there is no global tape.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalAbort

LEAK = 0.2
SIGMA_FLOOR = 1e-6
ACTIVATIONS = ("identity", "leaky_relu", "tanh")


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _act(name, h):
    if name == "identity":
        return h
    if name == "leaky_relu":
        return np.where(h > 0, h, LEAK * h)
    if name == "tanh":
        return np.tanh(h)
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, h, out, g):
    if name == "identity":
        return g
    if name == "leaky_relu":
        return np.where(h > 0, g, LEAK * g)
    if name == "tanh":
        return g * (1.0 - out * out)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class NetworkSpec:
    dims: list[int]
    activations: list[str]
    seed: int = 0

    def __post_init__(self):
        self.dims = [int(d) for d in self.dims]
        self.activations = list(self.activations)
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError(f"bad layer dims {self.dims}")
        if len(self.activations) != len(self.dims) - 1:
            raise ValueError("need one activation per dense layer")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")

    @property
    def n_params(self) -> int:
        return sum((i + 1) * o for i, o in zip(self.dims[:-1], self.dims[1:]))

    def to_dict(self) -> dict:
        return {"dims": self.dims, "activations": self.activations, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        return cls(list(d["dims"]), list(d["activations"]), int(d["seed"]))


@dataclass
class MLP:
    """Chain of dense layers; ``params`` alternates weight ``(in, out)`` and bias."""

    spec: NetworkSpec
    params: list[np.ndarray] = field(default_factory=list)
    frozen: bool = False

    def __post_init__(self):
        if not self.params:
            self.params = init_params(self.spec)

    @property
    def n_in(self) -> int:
        return self.spec.dims[0]

    @property
    def n_out(self) -> int:
        return self.spec.dims[-1]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ValueError(f"expected input (batch, {self.n_in}), got {x.shape}")
        cache = [x]
        h = x
        for i, act in enumerate(self.spec.activations):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            pre = h @ W + b
            h = _act(act, pre)
            cache.append((pre, h))
        return h, cache

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, g_out, need_params: bool = True):
        """Return ``(param_grads, input_grad)``; param_grads is None if frozen."""
        if cache is None:
            raise RuntimeError("backward called without a forward cache")
        want = need_params and not self.frozen
        grads = [None] * len(self.params) if want else None
        g = np.asarray(g_out, dtype=np.float64)
        for i in reversed(range(len(self.spec.activations))):
            pre, out = cache[i + 1]
            inp = cache[0] if i == 0 else cache[i][1]
            g = _act_grad(self.spec.activations[i], pre, out, g)
            if want:
                grads[2 * i] = inp.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            g = g @ self.params[2 * i].T
        return grads, g

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def copy(self) -> "MLP":
        return MLP(self.spec, [p.copy() for p in self.params], self.frozen)


def init_params(spec: NetworkSpec) -> list[np.ndarray]:
    """He-style init for leaky-ReLU layers, Glorot for the rest; zero biases."""
    rng = np.random.default_rng(spec.seed)
    params = []
    for n_in, n_out, act in zip(spec.dims[:-1], spec.dims[1:], spec.activations):
        if act == "leaky_relu":
            std = np.sqrt(2.0 / ((1 + LEAK ** 2) * n_in))
        else:
            std = np.sqrt(2.0 / (n_in + n_out))
        params.append(rng.standard_normal((n_in, n_out)) * std)
        params.append(np.zeros(n_out))
    return params


def mlp_spec(n_in: int, hidden: list[int], n_out: int, seed: int,
             out_act: str = "identity") -> NetworkSpec:
    dims = [n_in, *hidden, n_out]
    acts = ["leaky_relu"] * len(hidden) + [out_act]
    return NetworkSpec(dims, acts, seed)


# -- Gaussian encoder head ---------------------------------------------------

@dataclass
class GaussianLatent:
    """Per-sample mean and std over 2k reals, interleaved (re, im) per symbol."""
    mu: np.ndarray
    sigma: np.ndarray


class GaussianEncoder:
    """MLP whose output splits into 2k means and 2k raw std parameters."""

    def __init__(self, net: MLP):
        if net.n_out % 4:
            raise ValueError("encoder output must be 4k wide (means and stds for k symbols)")
        self.net = net

    @classmethod
    def build(cls, l: int, k: int, hidden: list[int], seed: int) -> "GaussianEncoder":
        return cls(MLP(mlp_spec(l, hidden, 4 * k, seed)))

    @property
    def k(self) -> int:
        return self.net.n_out // 4

    @property
    def params(self):
        return self.net.params

    def encode(self, x):
        out, cache = self.net.forward(x)
        m = 2 * self.k
        raw = out[:, m:]
        lat = GaussianLatent(out[:, :m], softplus(raw) + SIGMA_FLOOR)
        return lat, (cache, raw)

    def backward(self, cache, g_mu, g_sigma):
        net_cache, raw = cache
        g_out = np.concatenate([g_mu, g_sigma * sigmoid(raw)], axis=1)
        return self.net.backward(net_cache, g_out)


def encode(encoder: GaussianEncoder, x) -> GaussianLatent:
    return encoder.encode(np.atleast_2d(x))[0]


def to_complex(v) -> np.ndarray:
    """Pair interleaved reals (2i, 2i+1) into complex symbol i."""
    v = np.asarray(v, dtype=np.float64)
    return v[..., 0::2] + 1j * v[..., 1::2]


def to_real(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.complex128)
    out = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    out[..., 0::2] = z.real
    out[..., 1::2] = z.imag
    return out


def sample_latent(lat: GaussianLatent, rng: np.random.Generator, return_eps: bool = False):
    """Reparameterized draw ``mu + sigma * eps`` returned as complex symbols."""
    eps = rng.standard_normal(lat.mu.shape)
    z = to_complex(lat.mu + lat.sigma * eps)
    return (z, eps) if return_eps else z


# -- optimizer ---------------------------------------------------------------

class Adam:
    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(grads):
            raise ValueError("params and grads differ in length")
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericalAbort(f"non-finite gradient at optimizer step {self.t + 1}")
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if p.shape != g.shape:
                raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": self.m or [], "v": self.v or []}

    def load_state(self, t: int, m: list, v: list) -> None:
        self.t = int(t)
        self.m = [np.array(a, dtype=np.float64) for a in m] or None
        self.v = [np.array(a, dtype=np.float64) for a in v] or None


def optimizer_step(params, grads, opt: Adam) -> None:
    opt.step(params, grads)
