import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cflab import neuralnet as nn
from oracles import central_difference, relative_error, scalar_forward


class TestBuildInput:
    def test_hadamard(self):
        np.testing.assert_array_equal(nn.build_input("hadamard", [1, 2], [3, 4]), [3, 8])

    def test_concat_user_first(self):
        np.testing.assert_array_equal(nn.build_input("concat", [1, 2], [3, 4]), [1, 2, 3, 4])

    def test_hadamard_identity(self):
        np.testing.assert_array_equal(nn.build_input("hadamard", [1.5, -2], [1, 1]), [1.5, -2])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nn.build_input("concat", [1, 2], [3])


class TestArchitectures:
    def test_thirteen(self):
        archs = nn.enumerate_architectures()
        assert len(archs) == 13 and len(set(archs)) == 13

    def test_linear_entry_untagged(self):
        assert nn.enumerate_architectures()[0] == nn.Architecture(0, None)
        assert all(a.activation for a in nn.enumerate_architectures()[1:])

    def test_halving_widths(self):
        assert nn.layer_widths(32, "concat", 3) == [64, 32, 16, 8, 1]
        assert nn.layer_widths(32, "hadamard", 3) == [32, 16, 8, 4, 1]
        assert nn.layer_widths(32, "hadamard", 0) == [32, 1]

    def test_depth_limit(self):
        with pytest.raises(ValueError):
            nn.layer_widths(32, "concat", 4)


class TestForward:
    def test_linear_hadamard_is_weighted_dot(self, rng):
        w = rng.normal(size=4)
        net = nn.MlpNetwork([w[None, :]], [np.zeros(1)], None, "hadamard")
        e_u, e_v = rng.normal(size=4), rng.normal(size=4)
        s, _ = nn.forward(net, nn.build_input("hadamard", e_u, e_v))
        assert s == pytest.approx(np.sum(w * e_u * e_v), abs=1e-14)

    def test_zero_network(self):
        net = nn.init_network(4, "concat", 2, "elu", seed=0)
        for W in net.weights:
            W[:] = 0
        s, _ = nn.forward(net, np.arange(8.0))
        assert s == 0.0

    @pytest.mark.parametrize("activation", nn.ACTIVATIONS)
    def test_matches_scalar_loop(self, activation, rng):
        net = nn.init_network(6, "concat", 2, activation, seed=5)
        for b in net.biases:
            b[:] = rng.normal(size=b.shape)
        x = rng.normal(size=12)
        s, _ = nn.forward(net, x)
        assert abs(s - scalar_forward(net, x)) < 1e-12

    def test_batch_agrees_with_single(self, rng):
        net = nn.init_network(4, "hadamard", 3, "sigmoid", seed=2)
        X = rng.normal(size=(7, 4))
        batch, _ = nn.forward(net, X)
        for row, x in zip(batch, X):
            assert row == nn.forward(net, x)[0]

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            nn.forward(nn.init_network(4, "concat", 1, "relu"), np.zeros(4))


class TestBackward:
    def test_linear_layer(self, rng):
        net = nn.init_network(3, "hadamard", 0, None, seed=1)
        x = rng.normal(size=3)
        _, tape = nn.forward(net, x)
        g = nn.backward(net, tape, 2.5)
        np.testing.assert_allclose(g.weights[0], 2.5 * x[None, :])
        np.testing.assert_allclose(g.input, 2.5 * net.weights[0][0])
        np.testing.assert_allclose(g.biases[0], [2.5])

    def test_zero_upstream(self, rng):
        net = nn.init_network(4, "concat", 2, "tanh", seed=1)
        _, tape = nn.forward(net, rng.normal(size=8))
        g = nn.backward(net, tape, 0.0)
        assert not any(a.any() for a in g.weights + g.biases + [g.input])

    def test_tape_mismatch(self, rng):
        a = nn.init_network(4, "concat", 2, "tanh")
        b = nn.init_network(4, "concat", 1, "tanh")
        _, tape = nn.forward(a, rng.normal(size=8))
        with pytest.raises(ValueError):
            nn.backward(b, tape, 1.0)

    def test_relu_subgradient_at_zero(self):
        z = np.array([-1.0, 0.0, 1.0])
        np.testing.assert_array_equal(nn.activate_grad("relu", z, nn.activate("relu", z)), [0, 0, 1])

    def test_elu_unit_alpha(self):
        z = np.array([-2.0])
        a = nn.activate("elu", z)
        assert a[0] == pytest.approx(np.exp(-2.0) - 1.0)
        assert nn.activate_grad("elu", z, a)[0] == pytest.approx(np.exp(-2.0))

    def test_tanh_depth3_finite_difference(self, rng):
        net = nn.init_network(5, "concat", 3, "tanh", seed=3)
        for b in net.biases:
            b[:] = rng.normal(size=b.shape) * 0.1
        x = rng.normal(size=10)
        _, tape = nn.forward(net, x)
        grads = nn.backward(net, tape, 1.0)
        analytic = grads.as_dict()
        for name, param in net.parameters().items():
            fd = central_difference(lambda: nn.forward(net, x)[0], param)
            assert relative_error(analytic[name], fd) < 1e-6, name
        fd_x = central_difference(lambda: nn.forward(net, x)[0], x)
        assert relative_error(grads.input, fd_x) < 1e-6

    def test_batch_gradients_are_sums(self, rng):
        net = nn.init_network(3, "concat", 2, "elu", seed=4)
        X = rng.normal(size=(5, 6))
        up = rng.normal(size=5)
        _, tape = nn.forward(net, X)
        total = nn.backward(net, tape, up)
        parts = []
        for x, u in zip(X, up):
            _, t = nn.forward(net, x)
            parts.append(nn.backward(net, t, u))
        for k in range(len(net.weights)):
            np.testing.assert_allclose(total.weights[k], sum(p.weights[k] for p in parts), atol=1e-12)
        np.testing.assert_allclose(total.input, np.stack([p.input for p in parts]), atol=1e-12)


class TestEmbeddingBackprop:
    def test_hadamard(self):
        gu, gv = nn.backprop_to_embeddings("hadamard", [1, 1], [2, 3], [5, 7])
        np.testing.assert_array_equal(gu, [5, 7])
        np.testing.assert_array_equal(gv, [2, 3])

    def test_concat(self):
        gu, gv = nn.backprop_to_embeddings("concat", [1, 2, 3, 4], [0, 0], [0, 0])
        np.testing.assert_array_equal(gu, [1, 2])
        np.testing.assert_array_equal(gv, [3, 4])

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            nn.backprop_to_embeddings("concat", [1, 2, 3], [0, 0], [0, 0])


@settings(max_examples=20, deadline=None)
@given(
    modeling=st.sampled_from(nn.INPUT_MODELINGS),
    arch=st.sampled_from(nn.enumerate_architectures()),
    seed=st.integers(0, 10**6),
)
def test_network_round_trip(modeling, arch, seed):
    net = nn.init_network(4, modeling, arch.hidden_layers, arch.activation, seed=seed)
    back = nn.MlpNetwork.from_dict(net.to_dict())
    x = np.random.default_rng(seed).normal(size=net.in_width)
    assert nn.forward(back, x)[0] == nn.forward(net, x)[0]


def test_init_variance():
    he = nn.init_network(256, "concat", 1, "relu", seed=0).weights[0]
    plain = nn.init_network(256, "concat", 1, "tanh", seed=0).weights[0]
    assert he.var() == pytest.approx(2 / 512, rel=0.05)
    assert plain.var() == pytest.approx(1 / 512, rel=0.05)
