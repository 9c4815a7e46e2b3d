import numpy as np
import pytest

from helpers import check_gradients, make_loss, rel_err, small_stack, toy_batch
from taskjscc.errors import NumericalAbort
from taskjscc.neural import (
    MLP, Adam, GaussianEncoder, NetworkSpec, encode, mlp_spec, sample_latent, to_complex,
    to_real)


def test_spec_validation():
    with pytest.raises(ValueError):
        NetworkSpec([4], [])
    with pytest.raises(ValueError):
        NetworkSpec([4, 3], ["relu"])
    with pytest.raises(ValueError):
        NetworkSpec([4, 3, 2], ["identity"])
    assert NetworkSpec([4, 3, 2], ["tanh", "identity"]).n_params == 5 * 3 + 4 * 2


def test_init_is_seeded():
    a = MLP(mlp_spec(5, [7], 3, seed=4))
    b = MLP(mlp_spec(5, [7], 3, seed=4))
    c = MLP(mlp_spec(5, [7], 3, seed=5))
    assert a.flat().tobytes() == b.flat().tobytes()
    assert a.flat().tobytes() != c.flat().tobytes()


def test_forward_shape_errors():
    net = MLP(mlp_spec(5, [7], 3, seed=0))
    with pytest.raises(ValueError):
        net.forward(np.zeros((2, 4)))
    with pytest.raises(RuntimeError):
        net.backward(None, np.zeros((2, 3)))


def test_forward_deterministic():
    net = MLP(mlp_spec(5, [7], 3, seed=0))
    x = np.random.default_rng(0).standard_normal((4, 5))
    assert net(x).tobytes() == net(x).tobytes()


@pytest.mark.parametrize("act", ["identity", "leaky_relu", "tanh"])
def test_mlp_backward_finite_difference(act):
    rng = np.random.default_rng(1)
    net = MLP(NetworkSpec([4, 6, 3], [act, "tanh"], seed=2))
    x = rng.standard_normal((5, 4))
    G = rng.standard_normal((5, 3))
    f = lambda: float(np.sum(G * net(x)))
    out, cache = net.forward(x)
    grads, g_in = net.backward(cache, G)
    h = 1e-6
    for p, g in zip(net.params, grads):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = f()
            p[idx] = old - h
            down = f()
            p[idx] = old
            assert rel_err((up - down) / (2 * h), g[idx]) < 1e-6
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        assert rel_err((up - down) / (2 * h), g_in[idx]) < 1e-6


def test_frozen_net_returns_no_param_grads():
    net = MLP(mlp_spec(3, [4], 2, seed=0), frozen=True)
    out, cache = net.forward(np.ones((1, 3)))
    grads, g_in = net.backward(cache, np.ones((1, 2)))
    assert grads is None and g_in.shape == (1, 3)


def test_encoder_outputs():
    enc = GaussianEncoder.build(8, 3, [10], seed=0)
    lat = encode(enc, np.zeros(8))
    assert lat.mu.shape == (1, 6) and np.all(lat.sigma > 0)
    with pytest.raises(ValueError):
        GaussianEncoder(MLP(mlp_spec(8, [], 6, 0)))


def test_complex_pairing_round_trip():
    v = np.arange(8.0).reshape(2, 4)
    z = to_complex(v)
    np.testing.assert_array_equal(z, [[0 + 1j, 2 + 3j], [4 + 5j, 6 + 7j]])
    np.testing.assert_array_equal(to_real(z), v)


def test_sample_latent_reparameterization():
    enc = GaussianEncoder.build(4, 2, [5], seed=1)
    lat = encode(enc, np.ones(4))
    z, eps = sample_latent(lat, np.random.default_rng(0), return_eps=True)
    np.testing.assert_allclose(to_real(z), lat.mu + lat.sigma * eps, rtol=0, atol=0)


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = [np.array([1.0, -2.0])]
        Adam(lr=0.1).step(p, [np.array([3.0, -0.5])])
        np.testing.assert_allclose(p[0], [0.9, -1.9], rtol=1e-7)

    def test_minimizes_quadratic(self):
        p = [np.array([5.0, -3.0])]
        opt = Adam(lr=0.05)
        for _ in range(2000):
            opt.step(p, [2 * p[0]])
        assert np.max(np.abs(p[0])) < 1e-3

    def test_non_finite_aborts(self):
        with pytest.raises(NumericalAbort):
            Adam().step([np.zeros(2)], [np.array([np.nan, 0.0])])

    def test_state_round_trip(self):
        p1, p2 = [np.ones(3)], [np.ones(3)]
        a = Adam(lr=0.01)
        for _ in range(3):
            a.step(p1, [p1[0] * 0.5])
        b = Adam(lr=0.01)
        st = a.state()
        b.load_state(st["t"], st["m"], st["v"])
        p2[0][:] = p1[0]
        a.step(p1, [p1[0]])
        b.step(p2, [p2[0]])
        assert p1[0].tobytes() == p2[0].tobytes()


@pytest.mark.parametrize("trial", range(20))
def test_vib_gradient_gate(trial):
    """Analytic gradients of the full objective versus central differences."""
    rng = np.random.default_rng(100 + trial)
    l, k, d = int(rng.integers(3, 8)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    hidden = [int(rng.integers(2, 7)) for _ in range(int(rng.integers(1, 3)))]
    stack = small_stack(trial, l=l, k=k, d=d, hidden=hidden, sigma_c=float(rng.uniform(0.5, 2)))
    x, a = toy_batch(trial, n=3, l=l, d=d)
    kind = "awgn" if trial % 2 else "rayleigh"
    objective = "reconstruction" if trial % 5 == 4 else "task"
    assert check_gradients(stack, make_loss(x, a, kind=kind, objective=objective, seed=trial)) < 1e-4
