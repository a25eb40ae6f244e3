import numpy as np
import pytest

from genpolicy.errors import NonFiniteError
from genpolicy.nn import FieldNetwork, GaussianFourier, Mlp
from genpolicy.optim import Adam
from genpolicy.tensor import Tensor


def test_param_count_matches_layer_formula():
    net = Mlp([3, 256, 256, 256, 2], np.random.default_rng(0))
    expect = (3 + 1) * 256 + (256 + 1) * 256 * 2 + (256 + 1) * 2
    assert net.param_count == expect
    assert sum(p.size for p in net.parameters()) == expect


def test_zero_weight_net_returns_output_bias():
    rng = np.random.default_rng(0)
    net = Mlp([2, 8, 8, 3], rng)
    for w in net.weights:
        w.data = np.zeros_like(w.data)
    net.biases[-1].data = np.array([1.0, -2.0, 0.5])
    out = net(Tensor(rng.standard_normal((4, 2))))
    assert np.allclose(out.data, np.tile([1.0, -2.0, 0.5], (4, 1)))


def test_forward_jvp_matches_finite_differences():
    rng = np.random.default_rng(5)
    net = Mlp([3, 16, 16, 3], rng)
    x0 = rng.standard_normal((2, 3))
    u = rng.standard_normal((2, 3))
    _, jvp = net.forward_jvp(Tensor(x0), Tensor(u))
    h = 1e-6
    hi = net(Tensor(x0 + h * u)).data
    lo = net(Tensor(x0 - h * u)).data
    assert np.allclose(jvp.data, (hi - lo) / (2 * h), atol=1e-6)


def test_jvp_is_differentiable_wrt_parameters():
    # The JVP depends on every weight matrix (the final bias drops out of
    # the Jacobian, as it must).
    rng = np.random.default_rng(6)
    net = Mlp([2, 8, 2], rng)
    x = Tensor(rng.standard_normal((3, 2)))
    u = Tensor(rng.standard_normal((3, 2)))
    _, jvp = net.forward_jvp(x, u)
    jvp.sum().backward()
    assert all(w.grad is not None for w in net.weights)
    assert net.biases[-1].grad is None


def test_gaussian_fourier_shape_and_determinism():
    emb1 = GaussianFourier(32, np.random.default_rng(9))
    emb2 = GaussianFourier(32, np.random.default_rng(9))
    t = Tensor(np.linspace(0, 1, 5).reshape(5, 1))
    assert emb1(t).shape == (5, 32)
    assert np.array_equal(emb1(t).data, emb2(t).data)


def test_field_network_condition_plumbing():
    rng = np.random.default_rng(1)
    net = FieldNetwork(x_dim=2, state_dim=3, hidden=[16], rng=rng)
    x = Tensor(rng.standard_normal((4, 2)))
    s = Tensor(rng.standard_normal((4, 3)))
    assert net(x, 0.5, s).shape == (4, 2)
    with pytest.raises(ValueError):
        net(x, 0.5, None)


def test_field_network_clone_is_independent():
    rng = np.random.default_rng(2)
    net = FieldNetwork(x_dim=1, state_dim=0, hidden=[8], rng=rng)
    twin = net.clone()
    x = Tensor(rng.standard_normal((3, 1)))
    assert np.array_equal(net(x, 0.3).data, twin(x, 0.3).data)
    twin.mlp.weights[0].data = twin.mlp.weights[0].data + 1.0
    assert not np.array_equal(net(x, 0.3).data, twin(x, 0.3).data)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = Adam([p], lr=1e-3)
        before = p.data.copy()
        opt.step([np.zeros(2)])
        assert np.array_equal(p.data, before)

    def test_first_step_magnitude(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([p], lr=1e-3)
        opt.step([np.array([1.0])])
        assert p.data[0] == pytest.approx(-1e-3 / (1 + 1e-8), rel=1e-12)
        assert opt.step_count == 1

    def test_default_lr(self):
        opt = Adam([Tensor(np.zeros(1), requires_grad=True)])
        assert opt.lr == 1e-4

    def test_shape_mismatch_rejected(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam([p])
        with pytest.raises(ValueError):
            opt.step([np.zeros(3)])

    def test_non_finite_gradient_rejected(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam([p])
        with pytest.raises(NonFiniteError):
            opt.step([np.array([np.nan, 0.0])])

    def test_converges_on_quadratic(self):
        p = Tensor(np.array([5.0]), requires_grad=True)
        opt = Adam([p], lr=0.1)
        for _ in range(500):
            opt.zero_grad()
            loss = (p * p).sum()
            loss.backward()
            opt.step()
        assert abs(p.data[0]) < 1e-3
