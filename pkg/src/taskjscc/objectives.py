"""Scalar training objectives for the encoder / reshaper pair.

The central entry points are :func:`vib_loss` and :func:`vib_q_loss`. Both
return a :class:`LossBreakdown`; with ``grad=True`` they also return the
exact gradients for the encoder and reshaper parameters (the agent is never
updated).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constellation import Constellation, quantization_loss, quantization_loss_grad_z
from .neural import MLP, GaussianEncoder, to_complex, to_real

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class VibWeights:
    """Loss weights. In classic-IB mode the alignment weight is forced to 0."""

    beta1_hat: float = 1.0
    beta2_hat: float = 8192.0
    beta_q: float = 10.0
    classic_ib: bool = False

    def __post_init__(self):
        for name in ("beta1_hat", "beta2_hat", "beta_q"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def rate_weight(self) -> float:
        return self.beta1_hat

    @property
    def alignment_weight(self) -> float:
        return 0.0 if self.classic_ib else self.beta2_hat


def beta_transform(beta1: float, beta2: float, beta_q: float = 0.0) -> VibWeights:
    """Map Lagrange multipliers (beta1, beta2) to the weights actually used.

    ``beta2 == 1`` collapses to the classic two-term bottleneck with rate
    weight ``beta1``.
    """
    if beta1 <= 0 or beta2 <= 0:
        raise ValueError("Lagrange multipliers must be positive")
    if beta2 == 1.0:
        return VibWeights(beta1, 0.0, beta_q, classic_ib=True)
    return VibWeights(beta1 / (1.0 - beta2), beta2 / (1.0 - beta2), beta_q)


@dataclass(frozen=True)
class LossBreakdown:
    task_term: float
    rate_term: float
    alignment_term: float
    quant_term: float
    weights: VibWeights = field(repr=False)
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", combine(
            self.task_term, self.rate_term, self.alignment_term, self.quant_term, self.weights))

    def row(self) -> dict:
        return {"task": self.task_term, "rate": self.rate_term,
                "alignment": self.alignment_term, "quant": self.quant_term,
                "total": self.total}


def combine(task, rate, alignment, quant, w: VibWeights) -> float:
    return task + w.rate_weight * rate + w.alignment_weight * alignment + w.beta_q * quant


@dataclass(frozen=True)
class MCConfig:
    j1: int = 1
    j2: int = 1
    omega: int = 64
    share_samples: bool = True

    def __post_init__(self):
        if min(self.j1, self.j2, self.omega) < 1:
            raise ValueError("j1, j2 and omega must all be >= 1")


# -- closed-form pieces ------------------------------------------------------

def kl_per_sample(mu, sigma) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be strictly positive")
    return 0.5 * np.sum(mu * mu + sigma * sigma - 1.0 - 2.0 * np.log(sigma), axis=-1)


def kl_diag_gauss_to_std(mu, sigma) -> float:
    """KL( N(mu, diag sigma^2) || N(0, I) ), summed over all coordinates."""
    return float(np.sum(kl_per_sample(np.ravel(mu), np.ravel(sigma))))


def kl_monte_carlo(mu, sigma, n_samples: int, rng: np.random.Generator,
                   return_stderr: bool = False):
    """Sample estimate of the same KL; independent check on the closed form."""
    mu = np.ravel(np.asarray(mu, dtype=np.float64))
    sigma = np.ravel(np.asarray(sigma, dtype=np.float64))
    eps = rng.standard_normal((n_samples, mu.size))
    z = mu + sigma * eps
    log_q = np.sum(-0.5 * eps * eps - np.log(sigma) - 0.5 * LOG_2PI, axis=1)
    log_p = np.sum(-0.5 * z * z - 0.5 * LOG_2PI, axis=1)
    d = log_q - log_p
    est = float(d.mean())
    if return_stderr:
        return est, float(d.std(ddof=1) / math.sqrt(n_samples))
    return est


def neg_log_gauss(a, mu, sigma_c: float = 1.0):
    """-log N(a; mu, sigma_c^2 I) over the last axis, constants included."""
    a = np.asarray(a, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if a.shape != mu.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {mu.shape}")
    d = a.shape[-1]
    diff = a - mu
    dist = np.sum(diff * diff, axis=-1) / (2.0 * sigma_c ** 2)
    return dist + (d * math.log(sigma_c) + 0.5 * d * LOG_2PI)


def gauss_distance(a, mu, sigma_c: float = 1.0):
    """The data-dependent part of :func:`neg_log_gauss`."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(mu, dtype=np.float64)
    return np.sum(diff * diff, axis=-1) / (2.0 * sigma_c ** 2)


# -- the bottleneck objective ------------------------------------------------

@dataclass
class Stack:
    """Encoder, reshaper and frozen agent wired as x -> z -> z_hat -> y -> a_hat."""

    encoder: GaussianEncoder
    reshaper: MLP
    agent: MLP
    sigma_c: float = 1.0

    def trainable(self) -> list[np.ndarray]:
        return self.encoder.params + self.reshaper.params


def _likelihood(stack: Stack, a, x, y, objective: str):
    """Per-sample -log likelihood and the backward closure for y."""
    if objective == "task":
        a_hat, cache = stack.agent.forward(y)
        nll = neg_log_gauss(a, a_hat, stack.sigma_c)

        def back(coef):
            g = coef[:, None] * (a_hat - a) / stack.sigma_c ** 2
            return stack.agent.backward(cache, g, need_params=False)[1]
        return nll, back
    if objective == "reconstruction":
        nll = neg_log_gauss(x, y, stack.sigma_c)

        def back(coef):
            return coef[:, None] * (y - x) / stack.sigma_c ** 2
        return nll, back
    raise ValueError(f"unknown objective {objective!r}")


def vib_loss(a, x, stack: Stack, path, weights: VibWeights, mc: MCConfig,
             rng: np.random.Generator, channel_rng: np.random.Generator | None = None,
             grad: bool = False, constellation: Constellation | None = None,
             objective: str = "task"):
    """Monte Carlo estimate of the extended bottleneck loss on one batch.

    Parameters
    ----------
    a, x : arrays ``(batch, d)`` and ``(batch, l)``.
    path : channel path object with ``forward(z, rng)`` / ``backward(ctx, g)``.
    rng : stream for the reparameterization noise.
    channel_rng : stream for channel draws; defaults to ``rng``.
    constellation : if given, the quantization term is evaluated on the
        pre-quantization encoder output at this grid.
    objective : ``"task"`` scores y with the frozen agent against ``a``;
        ``"reconstruction"`` scores y directly against ``x``.

    The task term averages over the first ``j2`` latent draws and the
    alignment term over ``j1`` draws. With ``share_samples`` the alignment
    reuses the same draws; since the reshaper is deterministic, the alignment
    posterior is the agent applied to the reshaped symbols.
    """
    channel_rng = rng if channel_rng is None else channel_rng
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    lat, enc_cache = stack.encoder.encode(x)

    if mc.share_samples:
        n_draws = max(mc.j1, mc.j2)
        task_set = range(mc.j2)
        align_set = range(mc.j1)
    else:
        n_draws = mc.j1 + mc.j2
        task_set = range(mc.j2)
        align_set = range(mc.j2, mc.j2 + mc.j1)

    w_align = weights.alignment_weight
    task_sum = np.zeros(n)
    align_sum = np.zeros(n)
    quant_sum = 0.0
    g_mu = np.zeros_like(lat.mu)
    g_sigma = np.zeros_like(lat.sigma)
    r_grads = None

    for j in range(n_draws):
        eps = rng.standard_normal(lat.mu.shape)
        v = lat.mu + lat.sigma * eps
        z = to_complex(v)
        z_hat, ch_ctx = path.forward(z, channel_rng)
        y, r_cache = stack.reshaper.forward(to_real(z_hat))
        nll, back = _likelihood(stack, a, x, y, objective)
        in_task, in_align = j in task_set, j in align_set
        if in_task:
            task_sum += nll
        if in_align:
            align_sum += nll
        if constellation is not None:
            quant_sum += quantization_loss(z, constellation)
        if not grad:
            continue
        coef = np.zeros(n)
        if in_task:
            coef += 1.0 / (n * mc.j2)
        if in_align:
            coef += w_align / (n * mc.j1)
        g_y = back(coef)
        rg, g_zr = stack.reshaper.backward(r_cache, g_y)
        r_grads = rg if r_grads is None else [s + t for s, t in zip(r_grads, rg)]
        g_z = path.backward(ch_ctx, to_complex(g_zr))
        if constellation is not None and weights.beta_q:
            k = z.shape[-1]
            g_z = g_z + (weights.beta_q / (n * k * n_draws)) * quantization_loss_grad_z(z, constellation)
        g_v = to_real(g_z)
        g_mu += g_v
        g_sigma += g_v * eps

    kl = kl_per_sample(lat.mu, lat.sigma)
    out = LossBreakdown(
        task_term=float(task_sum.sum() / (n * mc.j2)),
        rate_term=float(kl.sum() / n),
        alignment_term=float(align_sum.sum() / (n * mc.j1)),
        quant_term=quant_sum / n_draws,
        weights=weights,
    )
    if not grad:
        return out
    g_mu += weights.rate_weight * lat.mu / n
    g_sigma += weights.rate_weight * (lat.sigma - 1.0 / lat.sigma) / n
    e_grads, _ = stack.encoder.backward(enc_cache, g_mu, g_sigma)
    return out, e_grads + r_grads


def vib_q_loss(a, x, stack: Stack, path, weights: VibWeights, mc: MCConfig,
               rng, c: Constellation, channel_rng=None, grad: bool = False,
               objective: str = "task"):
    """:func:`vib_loss` plus ``beta_q`` times the quantization loss at grid ``c``."""
    return vib_loss(a, x, stack, path, weights, mc, rng, channel_rng=channel_rng,
                    grad=grad, constellation=c, objective=objective)


# -- discrete toy used to check the variational bound -----------------------

def conditional_entropy(p_joint) -> float:
    """H(A|Y) in nats for a joint table ``p[a, y]``."""
    p = np.asarray(p_joint, dtype=np.float64)
    p_y = p.sum(axis=0, keepdims=True)
    mask = p > 0
    return float(-np.sum(p[mask] * np.log((p / np.where(p_y > 0, p_y, 1.0))[mask])))


def variational_cross_entropy(p_joint, q_cond) -> float:
    """E_p[-log q(a|y)] with ``q_cond[a, y]`` columns summing to one."""
    p = np.asarray(p_joint, dtype=np.float64)
    q = np.asarray(q_cond, dtype=np.float64)
    mask = p > 0
    return float(-np.sum(p[mask] * np.log(q[mask])))
