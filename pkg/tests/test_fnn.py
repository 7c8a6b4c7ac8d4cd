import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pulsesoc import fnn
from pulsesoc.fnn import ModelFormatError, Network, SocModel


def numeric_grads(net, x, t, h=1e-5):
    """Central differences of the batch MSE for every parameter."""
    def mse(n):
        return float(np.mean((fnn.forward(n, x) - t) ** 2))

    out = []
    for group in ("weights", "biases"):
        grads = []
        for l, p in enumerate(getattr(net, group)):
            g = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                plus, minus = net.copy(), net.copy()
                getattr(plus, group)[l][idx] += h
                getattr(minus, group)[l][idx] -= h
                g[idx] = (mse(plus) - mse(minus)) / (2 * h)
            grads.append(g)
        out.append(grads)
    return out


def max_rel_error(a, b):
    worst = 0.0
    for ga, gb in zip(a, b):
        for x, y in zip(ga, gb):
            denom = np.maximum(np.abs(x) + np.abs(y), 1e-8)
            worst = max(worst, float(np.max(np.abs(x - y) / denom)))
    return worst


def gradient_check(sizes, seed):
    rng = np.random.default_rng(seed)
    net = fnn.init(sizes, seed)
    net.biases = [rng.normal(0, 0.1, b.shape) for b in net.biases]
    x = rng.normal(size=(6, sizes[0]))
    t = rng.normal(size=6)
    return max_rel_error(fnn.backward(net, x, t), numeric_grads(net, x, t))


class TestInit:
    def test_zero_biases(self):
        net = fnn.init((5, 4, 1), 0)
        assert all(np.all(b == 0) for b in net.biases)

    def test_seeded(self):
        a, b = fnn.init((5, 4, 1), 3), fnn.init((5, 4, 1), 3)
        assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))

    def test_param_count(self):
        assert fnn.init((181, 100, 1), 0).n_params() == 18_301

    def test_glorot_bounds(self):
        net = fnn.init((181, 100, 1), 0)
        assert np.abs(net.weights[0]).max() <= np.sqrt(6 / 281)

    @pytest.mark.parametrize("sizes", [(), (3,), (3, 0, 1), (3, 2)])
    def test_invalid(self, sizes):
        with pytest.raises(ValueError):
            fnn.init(sizes, 0)


class TestForward:
    def test_relu_clips(self):
        net = Network((1, 1, 1), [np.ones((1, 1)), np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
        out, acts = fnn.forward(net, [-1.0], return_cache=True)
        assert acts[1][0, 0] == 0.0 and out == 0.0

    def test_zero_weights_give_bias(self):
        net = Network((3, 2, 1), [np.zeros((2, 3)), np.zeros((1, 2))], [np.zeros(2), np.array([0.7])])
        assert fnn.forward(net, [1.0, 2.0, 3.0]) == 0.7

    def test_against_loop_oracle(self):
        net = fnn.init((4, 5, 3, 1), 9)
        net.biases = [np.random.default_rng(1).normal(size=b.shape) for b in net.biases]
        x = np.random.default_rng(2).normal(size=4)
        h = list(x)
        for l, (w, b) in enumerate(zip(net.weights, net.biases)):
            z = [sum(w[j][k] * h[k] for k in range(len(h))) + b[j] for j in range(len(b))]
            h = z if l == len(net.weights) - 1 else [max(v, 0.0) for v in z]
        assert fnn.forward(net, x) == pytest.approx(h[0], abs=1e-12)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fnn.forward(fnn.init((4, 2, 1), 0), np.zeros(3))

    def test_hidden_non_negative(self):
        net = fnn.init((6, 8, 8, 1), 4)
        _, acts = fnn.forward(net, np.random.default_rng(0).normal(size=(20, 6)), True)
        assert all(np.all(a >= 0) for a in acts[1:-1])

    def test_permutation_invariance(self):
        net = fnn.init((6, 8, 1), 4)
        net.biases[0] = np.random.default_rng(3).normal(size=8)
        perm = np.random.default_rng(5).permutation(8)
        other = Network(net.layer_sizes, [net.weights[0][perm], net.weights[1][:, perm]],
                        [net.biases[0][perm], net.biases[1]])
        x = np.random.default_rng(0).normal(size=(10, 6))
        assert np.allclose(fnn.forward(net, x), fnn.forward(other, x), atol=1e-12, rtol=0)


class TestLoss:
    def test_zero(self):
        m = fnn.loss([0.2, 0.4], [0.2, 0.4])
        assert (m.mae, m.mse, m.rmse) == (0.0, 0.0, 0.0)

    def test_symmetric(self):
        m = fnn.loss([0.6, 0.4], [0.5, 0.5])
        assert m.mae == pytest.approx(0.1) and m.mse == pytest.approx(0.01)
        assert m.rmse == pytest.approx(0.1)

    def test_asymmetric(self):
        m = fnn.loss([0.3, 0.0], [0.0, 0.0])
        assert m.mae == pytest.approx(0.15) and m.rmse == pytest.approx(0.2121, abs=1e-4)

    def test_empty(self):
        with pytest.raises(ValueError):
            fnn.loss([], [])

    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=30))
    def test_rmse_dominates_mae(self, e):
        m = fnn.loss(e, np.zeros(len(e)))
        assert m.rmse >= m.mae - 1e-12 >= -1e-12
        assert m.rmse**2 == pytest.approx(m.mse, abs=1e-12)


class TestBackward:
    def test_zero_error(self):
        net = fnn.init((3, 4, 1), 0)
        x = np.random.default_rng(0).normal(size=(5, 3))
        gw, gb = fnn.backward(net, x, fnn.forward(net, x))
        assert all(np.all(g == 0) for g in gw + gb)

    def test_single_neuron(self):
        net = Network((1, 1), [np.ones((1, 1))], [np.zeros(1)])
        gw, gb = fnn.backward(net, [[2.0]], [0.0])
        assert gw[0][0, 0] == pytest.approx(8.0) and gb[0][0] == pytest.approx(4.0)

    @pytest.mark.parametrize("sizes", [(4, 3, 1), (10, 8, 8, 1)])
    def test_finite_differences(self, sizes):
        assert max(gradient_check(sizes, s) for s in range(5)) < 1e-4

    def test_mismatch(self):
        with pytest.raises(ValueError):
            fnn.backward(fnn.init((3, 2, 1), 0), np.zeros((4, 3)), np.zeros(3))


class TestAdam:
    def _one_d(self, w=0.0):
        return Network((1, 1), [np.array([[w]])], [np.zeros(1)])

    def test_zero_gradient(self):
        net = fnn.init((3, 2, 1), 0)
        opt = fnn.adam_init(net)
        _, new = fnn.adam_step(opt, net, ([np.zeros_like(w) for w in net.weights],
                                          [np.zeros_like(b) for b in net.biases]))
        assert all(np.array_equal(a, b) for a, b in zip(net.weights, new.weights))

    def test_first_step_closed_form(self):
        net = self._one_d()
        opt = fnn.adam_init(net, 0.001)
        opt, new = fnn.adam_step(opt, net, ([np.ones((1, 1))], [np.zeros(1)]))
        assert new.weights[0][0, 0] == pytest.approx(-0.001 / (1 + 1e-8), abs=1e-18)
        assert opt.step == 1

    @given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
    @settings(max_examples=25)
    def test_constant_gradient_sign_limit(self, g):
        net, alpha = self._one_d(), 0.01
        opt = fnn.adam_init(net, alpha)
        for _ in range(20):
            before = net.weights[0][0, 0]
            opt, net = fnn.adam_step(opt, net, ([np.full((1, 1), g)], [np.zeros(1)]))
            dw = net.weights[0][0, 0] - before
            assert abs(dw + alpha * np.sign(g)) < 1e-6

    def test_quadratic_convergence(self):
        net = Network((2, 1), [np.array([[1.0, 1.0]])], [np.zeros(1)])
        opt = fnn.adam_init(net, 0.1)
        for _ in range(500):
            opt, net = fnn.adam_step(opt, net, ([2 * net.weights[0]], [np.zeros(1)]))
        assert np.linalg.norm(net.weights[0]) < 1e-3

    def test_second_moment_non_negative(self):
        net = fnn.init((3, 2, 1), 0)
        opt = fnn.adam_init(net)
        x = np.random.default_rng(0).normal(size=(4, 3))
        for _ in range(3):
            opt, net = fnn.adam_step(opt, net, fnn.backward(net, x, np.ones(4)))
        assert all(np.all(r >= 0) for r in opt.r)

    def test_shape_mismatch(self):
        net = fnn.init((3, 2, 1), 0)
        with pytest.raises(ValueError):
            fnn.adam_step(fnn.adam_init(net), net, ([np.zeros((1, 1))], [np.zeros(1)]))


class TestSerialization:
    def _model(self):
        net = fnn.init((4, 6, 1), 2)
        return SocModel(net, np.arange(4.0), np.full(4, 2.0), {"pulse_s": 60.0}, {"note": "x"})

    def test_round_trip(self):
        m = self._model()
        back = fnn.deserialize(fnn.serialize(m))
        assert all(np.array_equal(a, b) for a, b in zip(m.net.weights, back.net.weights))
        assert np.array_equal(back.input_mean, m.input_mean)
        assert back.feature_config == m.feature_config
        x = np.random.default_rng(0).normal(size=(5, 4))
        assert np.allclose(m.predict(x), back.predict(x), atol=1e-15, rtol=0)

    def test_tampered_layer_size(self):
        doc = json.loads(fnn.serialize(self._model()))
        doc["layer_sizes"][1] = 7
        with pytest.raises(ModelFormatError):
            fnn.deserialize(json.dumps(doc))

    def test_version(self):
        doc = json.loads(fnn.serialize(self._model()))
        doc["version"] = 2
        with pytest.raises(ModelFormatError):
            fnn.deserialize(json.dumps(doc))
