"""Shared builders for the small randomized stacks used in gradient checks."""
import numpy as np

from taskjscc.channel import AnalogPath, ChannelConfig, ModulatedPath
from taskjscc.constellation import build_qam
from taskjscc.neural import MLP, GaussianEncoder, mlp_spec
from taskjscc.objectives import MCConfig, Stack, VibWeights, vib_loss


def small_stack(seed, l=6, k=2, d=3, hidden=(5,), sigma_c=1.0):
    rng = np.random.default_rng(seed)
    enc = GaussianEncoder.build(l, k, list(hidden), seed)
    resh = MLP(mlp_spec(2 * k, list(hidden), l, seed + 1))
    agent = MLP(mlp_spec(l, [4], d, seed + 2, out_act="tanh"), frozen=True)
    # nonzero biases so every parameter gets exercised
    for p in enc.params + resh.params:
        if p.ndim == 1:
            p[:] = 0.1 * rng.standard_normal(p.shape)
    return Stack(enc, resh, agent, sigma_c)


def rel_err(a, b, floor=1e-6):
    return abs(a - b) / max(abs(a), abs(b), floor)


def check_gradients(stack, loss_fn, h=1e-5):
    """Largest relative error between analytic and central-difference grads."""
    _, grads = loss_fn(stack, True)
    worst = 0.0
    for p, g in zip(stack.trainable(), grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_fn(stack, False).total
            p[idx] = old - h
            down = loss_fn(stack, False).total
            p[idx] = old
            worst = max(worst, rel_err((up - down) / (2 * h), g[idx]))
    return worst


def make_loss(x, a, weights=None, mc=None, kind="awgn", snr=5.0, c=None,
              objective="task", seed=0):
    weights = weights or VibWeights(0.5, 2.0, 0.0)
    mc = mc or MCConfig(j1=2, j2=2, omega=x.shape[0])
    cfg = ChannelConfig(kind, snr)
    path = AnalogPath(cfg) if c is None else ModulatedPath(cfg, c, quantize=False)

    def fn(stack, grad):
        return vib_loss(a, x, stack, path, weights, mc, np.random.default_rng(seed),
                        channel_rng=np.random.default_rng(seed + 1), grad=grad,
                        constellation=c, objective=objective)
    return fn


def toy_batch(seed, n=4, l=6, d=3):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, l)), np.tanh(rng.standard_normal((n, d)))


__all__ = ["small_stack", "check_gradients", "make_loss", "toy_batch", "rel_err", "build_qam"]
