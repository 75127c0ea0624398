import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protofusion import nnet
from protofusion.nnet import (AdamState, Layer, adam_init, adam_update,
                              cosine_distance, grad_check, mlp_backward,
                              mlp_forward)


def random_net(rng, dims, activations=None):
    layers = []
    for i in range(len(dims) - 1):
        act = activations[i] if activations else (
            "leaky_relu" if i + 2 < len(dims) else "identity")
        layers.append(nnet.init_layer(rng, dims[i], dims[i + 1], act))
    return layers


class TestForward:
    def test_zero_weights_yield_bias(self):
        layer = Layer(np.zeros((3, 2)), np.array([1.0, -2.0, 0.5]))
        out, _ = mlp_forward([layer], np.array([4.0, 5.0]))
        np.testing.assert_array_equal(out, [1.0, -2.0, 0.5])

    def test_identity_net(self):
        layer = Layer(np.eye(3), np.zeros(3))
        x = np.array([0.3, -1.2, 7.0])
        out, _ = mlp_forward([layer], x)
        np.testing.assert_array_equal(out, x)

    def test_matches_explicit_loop_oracle(self, rng):
        layers = random_net(rng, (3, 4, 2), activations=("leaky_relu", "identity"))
        x = rng.standard_normal(3)

        # independent oracle: explicit scalar loops
        a = list(x)
        for layer in layers:
            z = []
            for r in range(layer.n_out):
                s = float(layer.bias[r])
                for c in range(layer.n_in):
                    s += float(layer.weight[r, c]) * a[c]
                if layer.activation == "leaky_relu" and s < 0:
                    s *= layer.slope
                z.append(s)
            a = z

        out, _ = mlp_forward(layers, x)
        np.testing.assert_allclose(out, a, rtol=0, atol=1e-12)

    def test_dim_mismatch_raises(self, rng):
        layers = random_net(rng, (3, 2))
        with pytest.raises(ValueError, match="expects input size"):
            mlp_forward(layers, np.zeros(4))

    def test_batch_rows_match_single_calls(self, rng):
        layers = random_net(rng, (3, 5, 2))
        X = rng.standard_normal((6, 3))
        batch_out, _ = mlp_forward(layers, X)
        for i in range(6):
            single, _ = mlp_forward(layers, X[i])
            np.testing.assert_allclose(batch_out[i], single, atol=1e-15)


class TestBackward:
    def test_single_linear_layer(self, rng):
        W = rng.standard_normal((3, 2))
        layer = Layer(W, rng.standard_normal(3))
        x = rng.standard_normal(2)
        g = rng.standard_normal(3)
        _, tape = mlp_forward([layer], x)
        grads, gx = mlp_backward([layer], tape, g)
        np.testing.assert_allclose(grads[0][0], np.outer(g, x), atol=1e-15)
        np.testing.assert_allclose(grads[0][1], g, atol=1e-15)
        np.testing.assert_allclose(gx, W.T @ g, atol=1e-15)

    def test_identity_net_passes_grad_through(self):
        layers = [Layer(np.eye(4), np.zeros(4))]
        g = np.array([1.0, -2.0, 3.0, 0.25])
        _, tape = mlp_forward(layers, np.ones(4))
        _, gx = mlp_backward(layers, tape, g)
        np.testing.assert_array_equal(gx, g)

    def test_two_layer_net_matches_finite_differences(self, rng):
        layers = random_net(rng, (4, 5, 3), activations=("leaky_relu", "sigmoid"))
        x = rng.standard_normal(4)
        target = rng.standard_normal(3)

        def loss_fn(params):
            out, tape = mlp_forward(params, x)
            diff = out - target
            grads, _ = mlp_backward(params, tape, 2.0 * diff)
            return float(diff @ diff), grads

        assert grad_check(loss_fn, layers, h=1e-4) < 1e-5

    def test_tape_mismatch_raises(self, rng):
        layers = random_net(rng, (3, 3, 3))
        _, tape = mlp_forward(layers, np.zeros(3))
        with pytest.raises(ValueError, match="tape"):
            mlp_backward(layers[:1], tape, np.zeros(3))


class TestAdam:
    def test_first_step_closed_form(self):
        # bias correction makes m_hat = g and v_hat = g^2, so step = -lr
        layer = Layer(np.array([[0.0]]), np.zeros(1))
        state = adam_init([layer], lr=1e-3)
        grads = [(np.array([[1.0]]), np.zeros(1))]
        new_layers, new_state = adam_update([layer], grads, state)
        assert new_state.step == 1
        assert new_layers[0].weight[0, 0] == pytest.approx(-1e-3, rel=1e-6)

    def test_zero_gradient_keeps_params(self, rng):
        layers = random_net(rng, (3, 2))
        state = adam_init(layers, lr=0.1)
        zero = [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]
        new_layers, new_state = adam_update(layers, zero, state)
        for old, new in zip(layers, new_layers):
            np.testing.assert_array_equal(old.weight, new.weight)
            np.testing.assert_array_equal(old.bias, new.bias)
        assert new_state.step == 1

    def test_deterministic(self, rng):
        layers = random_net(rng, (3, 2))
        grads = [(np.full_like(l.weight, 0.3), np.full_like(l.bias, -0.7))
                 for l in layers]
        state = adam_init(layers, lr=0.01)
        a_layers, a_state = adam_update(layers, grads, state)
        b_layers, b_state = adam_update(layers, grads, state)
        for a, b in zip(a_layers, b_layers):
            np.testing.assert_array_equal(a.weight, b.weight)
        assert a_state.step == b_state.step

    def test_lr_zero_is_identity_on_params(self, rng):
        layers = random_net(rng, (4, 4))
        grads = [(rng.standard_normal(l.weight.shape), rng.standard_normal(l.bias.shape))
                 for l in layers]
        new_layers, _ = adam_update(layers, grads, adam_init(layers, lr=0.0))
        for old, new in zip(layers, new_layers):
            np.testing.assert_array_equal(old.weight, new.weight)
            np.testing.assert_array_equal(old.bias, new.bias)

    def test_bad_betas_rejected(self):
        with pytest.raises(ValueError):
            AdamState(0, (), (), lr=1.0, beta1=1.0)


class TestGradCheck:
    def test_quadratic(self):
        layer = Layer(np.array([[3.0]]), np.zeros(1))

        def loss_fn(params):
            w = params[0].weight[0, 0]
            return w * w, [(np.array([[2.0 * w]]), np.zeros(1))]

        assert grad_check(loss_fn, [layer], h=1e-4) < 1e-8

    def test_reports_wrong_gradient(self):
        layer = Layer(np.array([[3.0]]), np.zeros(1))

        def bad_fn(params):
            w = params[0].weight[0, 0]
            return w * w, [(np.array([[w]]), np.zeros(1))]  # missing factor 2

        assert grad_check(bad_fn, [layer], h=1e-4) > 0.1


class TestCosineDistance:
    def test_orthogonal(self):
        assert cosine_distance([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)

    def test_scale_invariance_zero(self):
        assert cosine_distance([2.0, 0.0], [1.0, 0.0]) == 0.0

    def test_formula_value(self):
        expected = 1.0 - 1.0 / np.sqrt(2.0)
        assert cosine_distance([1.0, 1.0], [1.0, 0.0]) == pytest.approx(expected, abs=1e-12)

    def test_zero_norm_is_error(self):
        with pytest.raises(ValueError, match="zero-norm"):
            cosine_distance([0.0, 0.0], [1.0, 0.0])

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=8),
           st.floats(0.01, 100), st.floats(0.01, 100))
    @settings(max_examples=60, deadline=None)
    def test_positive_scaling_invariance(self, values, alpha, beta):
        v = np.asarray(values)
        if np.linalg.norm(v) < 1e-6:
            return
        w = v[::-1].copy()
        if np.linalg.norm(w) < 1e-6:
            return
        base = cosine_distance(v, w)
        scaled = cosine_distance(alpha * v, beta * w)
        assert scaled == pytest.approx(base, abs=1e-12)

    @given(st.lists(st.floats(-10, 10), min_size=2, max_size=8))
    @settings(max_examples=60, deadline=None)
    def test_self_distance_zero(self, values):
        v = np.asarray(values)
        if np.linalg.norm(v) < 1e-6:
            return
        assert cosine_distance(v, v) == pytest.approx(0.0, abs=1e-12)


class TestGradCheckProperty:
    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_random_small_nets_pass(self, seed):
        rng = np.random.default_rng(seed)
        dims = tuple(int(d) for d in rng.integers(2, 9, size=rng.integers(2, 4)))
        layers = random_net(rng, dims)
        x = rng.standard_normal(dims[0])

        def loss_fn(params):
            out, tape = mlp_forward(params, x)
            grads, _ = mlp_backward(params, tape, np.ones_like(out))
            return float(out.sum()), grads

        assert grad_check(loss_fn, layers, h=1e-4) < 1e-5
