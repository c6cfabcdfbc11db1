import numpy as np
import pytest

from novi import autodiff as ad
from novi import nets
from novi.errors import DimensionError, InputError


def affine(w, b):
    w = np.asarray(w, dtype=float)
    return nets.MlpParams([w.shape[1], w.shape[0]], nets.TANH, {"w0": w, "b0": np.asarray(b, dtype=float)})


def zero_net(widths, activation=nets.SIGMOID, last_bias=None):
    net = nets.init_mlp(widths, activation, np.random.default_rng(0))
    p = {k: np.zeros_like(v) if k[0] in "wb" else v for k, v in net.params.items()}
    if last_bias is not None:
        p[f"b{net.num_layers - 1}"] = np.asarray(last_bias, dtype=float)
    return net.with_params(p)


class TestInit:
    def test_zero_biases_and_bound(self):
        widths = [7, 16, 16, 5]
        net = nets.init_mlp(widths, nets.TANH, np.random.default_rng(1))
        for i, (fi, fo) in enumerate(zip(widths[:-1], widths[1:])):
            assert net.params[f"w{i}"].shape == (fo, fi)
            np.testing.assert_array_equal(net.params[f"b{i}"], np.zeros(fo))
            assert np.all(np.abs(net.params[f"w{i}"]) <= np.sqrt(6.0 / (fi + fo)))

    def test_seed_determinism(self):
        a = nets.init_mlp([4, 8, 4], nets.PRELU, np.random.default_rng(3))
        b = nets.init_mlp([4, 8, 4], nets.PRELU, np.random.default_rng(3))
        for k in a.names():
            np.testing.assert_array_equal(a.params[k], b.params[k])

    def test_prelu_slopes(self):
        net = nets.init_mlp([2, 3, 3, 2], "PiecewiseLinearLearnable", np.random.default_rng(0))
        assert net.activation == nets.PRELU
        assert [k for k in net.names() if k.startswith("a")] == ["a0", "a1"]
        assert float(net.params["a0"]) == nets.PRELU_INIT

    @pytest.mark.parametrize("widths", [[], [3], [3, 0, 2]])
    def test_bad_widths(self, widths):
        with pytest.raises(InputError):
            nets.init_mlp(widths, nets.TANH, np.random.default_rng(0))

    def test_unknown_activation(self):
        with pytest.raises(InputError):
            nets.init_mlp([2, 2], "relu6", np.random.default_rng(0))

    def test_default_widths(self):
        assert nets.default_widths(200, 21) == [200, 256, 256, 21]


class TestGenerator:
    def test_degenerate_net_returns_bias(self):
        b = np.array([0.5, -2.0, 3.0])
        spec = nets.GeneratorSpec(noise_dim=4, out_dim=3, output_clamp=10.0)
        net = zero_net([4, 6, 3], nets.TANH, last_bias=b)
        out = nets.generator_forward(spec, net, np.random.default_rng(0).standard_normal((5, 4)))
        np.testing.assert_allclose(out, np.tile(10 * np.tanh(b / 10), (5, 1)), atol=1e-15)

    def test_affine_identity(self):
        spec = nets.GeneratorSpec(noise_dim=3, out_dim=3, output_clamp=None)
        eps = np.random.default_rng(1).standard_normal((4, 3))
        np.testing.assert_array_equal(nets.generator_forward(spec, affine(np.eye(3), np.zeros(3)), eps), eps)

    def test_clamp_saturates(self):
        spec = nets.GeneratorSpec(noise_dim=1, out_dim=1, output_clamp=5.0)
        out = nets.generator_forward(spec, affine([[1.0]], [0.0]), np.array([[1e6], [-1e6]]))
        np.testing.assert_allclose(out[:, 0], [5.0, -5.0], atol=1e-6)

    def test_outputs_inside_clamp(self):
        spec = nets.GeneratorSpec(noise_dim=5, out_dim=4, output_clamp=2.0)
        net = nets.init_mlp([5, 32, 4], nets.PRELU, np.random.default_rng(2))
        net = net.with_params({k: 50 * v for k, v in net.params.items()})
        out = nets.generator_forward(spec, net, np.random.default_rng(3).standard_normal((200, 5)))
        assert np.all(np.abs(out) <= 2.0)

    def test_shape_errors(self):
        spec = nets.GeneratorSpec(noise_dim=3, out_dim=2)
        net = nets.init_mlp([3, 4, 2], nets.TANH, np.random.default_rng(0))
        with pytest.raises(DimensionError):
            nets.generator_forward(spec, net, np.zeros((2, 4)))
        with pytest.raises(DimensionError):
            nets.generator_forward(nets.GeneratorSpec(3, 5), net, np.zeros((2, 3)))

    def test_deterministic(self):
        spec = nets.GeneratorSpec(noise_dim=3, out_dim=2)
        net = nets.init_mlp([3, 4, 2], nets.SIGMOID, np.random.default_rng(0))
        eps = np.ones((2, 3))
        assert nets.generator_forward(spec, net, eps).tobytes() == nets.generator_forward(spec, net, eps).tobytes()


class TestDiscriminator:
    def test_zero_net(self):
        net = zero_net([4, 8, 4])
        np.testing.assert_array_equal(nets.discriminator_forward(net, np.ones((3, 4))), np.zeros((3, 4)))

    def test_affine_matches_matmul(self):
        rng = np.random.default_rng(4)
        w, b = rng.standard_normal((3, 3)), rng.standard_normal(3)
        u = rng.standard_normal((5, 3))
        np.testing.assert_allclose(nets.discriminator_forward(affine(w, b), u), u @ w.T + b, atol=1e-14)

    def test_affine_jvp_exact(self):
        rng = np.random.default_rng(5)
        w = rng.standard_normal((3, 3))
        u0, om = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        with ad.Tape() as tape:
            _, t = ad.jvp(lambda u: nets.discriminator_forward(affine(w, np.zeros(3)), u), [tape.var(u0)], [om])
        np.testing.assert_array_equal(ad.value_of(t), om @ w.T)

    @pytest.mark.parametrize("act", nets.ACTIVATIONS)
    def test_parameter_gradient_vs_fd(self, act):
        rng = np.random.default_rng(6)
        net = nets.init_mlp([3, 6, 6, 3], act, rng)
        net = net.with_params({k: v + 0.1 * rng.standard_normal(np.shape(v)) for k, v in net.params.items()})
        u = rng.standard_normal((4, 3))
        w = rng.standard_normal((4, 3))
        arrays = net.arrays()

        def f(name, val):
            a = dict(arrays)
            a[name] = val
            return float(np.sum(w * nets.discriminator_forward(net.with_params(a), u)))

        with ad.Tape() as tape:
            tn, leaves = net.taped(tape)
            names = list(leaves)
            grads = ad.backward(ad.sum(ad.mul(nets.discriminator_forward(tn, u), w)), [leaves[k] for k in names])
        for name, g in zip(names, grads):
            v = arrays[name]
            fd = np.zeros_like(v)
            for i in np.ndindex(v.shape):
                h = 1e-5 * max(1.0, abs(v[i]))
                vp, vm = v.copy(), v.copy()
                vp[i] += h
                vm[i] -= h
                fd[i] = (f(name, vp) - f(name, vm)) / (2 * h)
            assert np.linalg.norm(g - fd) <= 1e-5 * max(np.linalg.norm(fd), 1e-8), name

    def test_width_checks(self):
        with pytest.raises(DimensionError):
            nets.discriminator_forward(zero_net([4, 8, 4]), np.zeros((2, 3)))
        with pytest.raises(DimensionError):
            nets.discriminator_forward(zero_net([4, 8, 3]), np.zeros((2, 4)))
