import os
import tempfile
import unittest

import numpy as np
import numpy.testing as npt

from errors import ConfigurationError, DomainError
from rnn_core import (
    CellKind,
    RnnParameters,
    RnnSpec,
    activation_apply,
    backward,
    backward_batch,
    forward,
    forward_batch,
    gru_step,
    init_parameters,
    load_checkpoint,
    lstm_step,
    mse_loss,
    parameter_shapes,
    save_checkpoint,
)


def zero_params(spec):
    return RnnParameters(spec.cell, {name: np.zeros(shape) for name, shape in parameter_shapes(spec).items()})


def random_params(spec, rng, low=-0.5, high=0.5):
    return RnnParameters(spec.cell, {name: rng.uniform(low, high, shape)
                                     for name, shape in parameter_shapes(spec).items()})


class TestActivations(unittest.TestCase):
    def test_examples(self):
        npt.assert_array_equal(activation_apply("relu", np.array([-2.0, 3.0])), [0.0, 3.0])
        npt.assert_array_equal(activation_apply("softsign", np.array([1.0])), [0.5])
        npt.assert_array_equal(activation_apply("softmax", np.array([0.0, 0.0])), [0.5, 0.5])
        npt.assert_allclose(activation_apply("softplus", np.array([0.0])), [np.log(2.0)])

    def test_softmax_stable_and_shift_invariant(self):
        v = np.array([1000.0, 999.0, -5.0])
        y = activation_apply("softmax", v)
        self.assertTrue(np.all(np.isfinite(y)))
        self.assertAlmostEqual(y.sum(), 1.0, delta=1e-12)
        npt.assert_allclose(activation_apply("softmax", v + 17.0), y, atol=1e-15)

    def test_softplus_overflow_guarded(self):
        npt.assert_allclose(activation_apply("softplus", np.array([800.0, -800.0])), [800.0, 0.0])

    def test_unknown(self):
        with self.assertRaises(ConfigurationError):
            activation_apply("swish", np.zeros(2))


class TestCells(unittest.TestCase):
    def test_lstm_zero_params(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=4, hidden_units=3)
        h, c, _ = lstm_step(zero_params(spec), np.ones(4), np.zeros(3), np.zeros(3))
        npt.assert_array_equal(h, np.zeros(3))
        npt.assert_array_equal(c, np.zeros(3))

    def test_lstm_forget_gate_retains_memory(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=1, hidden_units=1)
        params = zero_params(spec)
        params.arrays["b_f"][:] = 10.0
        _, c, _ = lstm_step(params, np.array([0.7]), np.zeros(1), np.array([0.3]))
        npt.assert_allclose(c, [0.3], atol=1e-4)

    def test_lstm_carries_cell_state(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=2, hidden_units=2)
        params = zero_params(spec)
        params.arrays["b_f"][:] = 50.0   # f == 1 in float64
        params.arrays["b_i"][:] = -50.0  # i ~ 0
        c = np.array([0.25, -0.5])
        h = np.zeros(2)
        for x in np.random.default_rng(0).normal(size=(10, 2)):
            h, c, _ = lstm_step(params, x, h, c)
        npt.assert_allclose(c, [0.25, -0.5], atol=1e-20)

    def test_lstm_dimension_mismatch(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=4, hidden_units=3)
        with self.assertRaises(ConfigurationError):
            lstm_step(zero_params(spec), np.ones(5), np.zeros(3), np.zeros(3))

    def test_gru_examples(self):
        spec = RnnSpec(CellKind.GRU, input_dim=1, hidden_units=1)
        params = zero_params(spec)
        h, _ = gru_step(params, np.array([1.0]), np.zeros(1))
        npt.assert_array_equal(h, [0.0])
        h, cache = gru_step(params, np.array([1.0]), np.array([0.4]))
        npt.assert_allclose(cache.z, [0.5])
        npt.assert_allclose(h, [0.2])
        params.arrays["b_z"][:] = -10.0
        h, _ = gru_step(params, np.array([1.0]), np.array([0.4]))
        npt.assert_allclose(h, [0.4], atol=1e-4)

    def test_gru_dimension_mismatch(self):
        spec = RnnSpec(CellKind.GRU, input_dim=2, hidden_units=3)
        with self.assertRaises(ConfigurationError):
            gru_step(zero_params(spec), np.ones(2), np.zeros(4))


class TestForward(unittest.TestCase):
    def test_zero_params_linear_head(self):
        for cell in CellKind:
            spec = RnnSpec(cell, input_dim=2, hidden_units=4)
            pred, _ = forward(spec, zero_params(spec), [[1.0, 2.0], [3.0, 4.0]])
            npt.assert_array_equal(pred, np.zeros(2))

    def test_empty_sequence(self):
        spec = RnnSpec(CellKind.GRU, input_dim=2, hidden_units=4)
        with self.assertRaises(DomainError):
            forward(spec, zero_params(spec), [])

    def test_single_step_matches_cell(self):
        spec = RnnSpec(CellKind.GRU, input_dim=2, hidden_units=3, activation="tanh")
        params = random_params(spec, np.random.default_rng(1))
        x = np.array([0.3, -0.2])
        pred, _ = forward(spec, params, [x])
        h, _ = gru_step(params, x, np.zeros(3))
        npt.assert_allclose(pred, np.tanh(params["W_out"] @ h + params["b_out"]))

    def test_softmax_head_covers_unit_square(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=2, hidden_units=3, activation="softmax")
        self.assertEqual(parameter_shapes(spec)["W_out"], (3, 3))
        params = random_params(spec, np.random.default_rng(2))
        pred, cache = forward(spec, params, [[0.1, 0.2]])
        self.assertEqual(pred.shape, (2,))
        self.assertTrue(np.all(pred >= 0.0))
        self.assertLessEqual(pred.sum(), 2.0)
        self.assertAlmostEqual(cache.head_out.sum(), 1.0, delta=1e-12)

    def test_batch_matches_single(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=4, hidden_units=5, activation="relu")
        params = random_params(spec, np.random.default_rng(3))
        xs = np.random.default_rng(4).normal(size=(3, 6, 4))
        batch_pred, _ = forward_batch(spec, params, xs)
        for k in range(3):
            npt.assert_allclose(batch_pred[k], forward(spec, params, xs[k])[0], atol=1e-14)

    def test_deterministic(self):
        spec = RnnSpec(CellKind.GRU, input_dim=2, hidden_units=4)
        params = init_parameters(spec, seed=9)
        seq = [[0.1, 0.2], [0.3, 0.1]]
        npt.assert_array_equal(forward(spec, params, seq)[0], forward(spec, params, seq)[0])


class TestLoss(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(mse_loss(np.array([0.5, 0.5]), np.array([0.5, 0.5]))[0], 0.0)
        loss, _ = mse_loss(np.array([0.0, 0.0]), np.array([0.01, 0.02]))
        self.assertAlmostEqual(loss, 5e-4, places=15)
        _, grad = mse_loss(np.array([1.0, 0.0]), np.array([0.0, 0.0]))
        npt.assert_array_equal(grad, [2.0, 0.0])

    def test_length_mismatch(self):
        with self.assertRaises(DomainError):
            mse_loss(np.zeros(2), np.zeros(3))


class TestBackward(unittest.TestCase):
    def numeric_gradient(self, spec, params, xs, target, name, index, eps=1e-5):
        def loss_at(value):
            params.arrays[name][index] = value
            pred, _ = forward_batch(spec, params, xs)
            return mse_loss(pred, target)[0]
        original = params[name][index]
        try:
            return (loss_at(original + eps) - loss_at(original - eps)) / (2 * eps)
        finally:
            params.arrays[name][index] = original

    def check_gradients(self, cell, activation, hidden, steps, seed):
        rng = np.random.default_rng(seed)
        spec = RnnSpec(cell, input_dim=2, hidden_units=hidden, activation=activation)
        params = random_params(spec, rng)
        xs = rng.uniform(-1.0, 1.0, (2, steps, 2))
        target = rng.uniform(0.0, 1.0, (2, 2))
        pred, cache = forward_batch(spec, params, xs)
        _, dpred = mse_loss(pred, target)
        grads = backward_batch(spec, params, cache, dpred)
        worst = 0.0
        for name, array in params.arrays.items():
            self.assertEqual(grads[name].shape, array.shape)
            for index in np.ndindex(array.shape):
                numeric = self.numeric_gradient(spec, params, xs, target, name, index)
                analytic = grads[name][index]
                error = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
                worst = max(worst, error)
        self.assertLess(worst, 1e-4, f"{cell.value}/{activation}: relative error {worst:.2e}")

    def test_gradient_check(self):
        # five draws per (hidden, steps) pair: twenty per cell and head
        seed = 0
        for cell in CellKind:
            for activation in ("relu", "softsign", "softmax", "softplus", "linear"):
                for hidden in (4, 8):
                    for steps in (5, 10):
                        for _ in range(5):
                            seed += 1
                            self.check_gradients(cell, activation, hidden, steps, seed)

    def test_zero_gradient(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=2, hidden_units=3)
        params = init_parameters(spec, seed=1)
        _, cache = forward(spec, params, [[0.1, 0.2], [0.2, 0.1]])
        grads = backward(spec, params, cache, np.zeros(2))
        for array in grads.arrays.values():
            npt.assert_array_equal(array, np.zeros_like(array))

    def test_stale_cache(self):
        spec = RnnSpec(CellKind.GRU, input_dim=2, hidden_units=3)
        params = init_parameters(spec, seed=1)
        _, cache = forward(spec, params, [[0.1, 0.2]])
        with self.assertRaises(DomainError):
            backward(spec, params.copy(), cache, np.ones(2))


class TestCheckpoint(unittest.TestCase):
    def test_save_and_load(self):
        spec = RnnSpec(CellKind.GRU, input_dim=4, hidden_units=5, activation="softmax")
        params = init_parameters(spec, seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "model.json")
            save_checkpoint(path, spec, params, extra={"note": "gru"})
            loaded_spec, loaded, extra = load_checkpoint(path)
        self.assertEqual(loaded_spec, spec)
        self.assertEqual(extra, {"note": "gru"})
        for name in params.names():
            npt.assert_array_equal(loaded[name], params[name])

    def test_init_bounds(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=2, hidden_units=16)
        params = init_parameters(spec, seed=0)
        for name, array in params.arrays.items():
            if name not in ("W_out", "b_out"):
                self.assertTrue(np.all(np.abs(array) <= 0.25), name)
        npt.assert_array_equal(params["W_out"], np.zeros((2, 16)))

    def test_head_starts_at_centre(self):
        xs = np.random.default_rng(5).uniform(0.0, 1.0, (50, 20, 4))
        for cell in CellKind:
            for activation in ("relu", "softsign", "softmax", "softplus", "tanh", "sigmoid", "linear"):
                spec = RnnSpec(cell, input_dim=4, hidden_units=80, activation=activation)
                for seed in (0, 1, 4, 11):
                    params = init_parameters(spec, seed=seed)
                    pred, cache = forward_batch(spec, params, xs)
                    npt.assert_allclose(pred, np.full((50, 2), 0.5), atol=1e-12)
                    if activation == "relu":
                        self.assertTrue(np.all(cache.head_pre > 0.0))

    def test_relu_head_gets_gradient_at_init(self):
        spec = RnnSpec(CellKind.LSTM, input_dim=4, hidden_units=80, activation="relu")
        params = init_parameters(spec, seed=11)
        xs = np.random.default_rng(6).uniform(0.3, 0.7, (8, 20, 4))
        pred, cache = forward_batch(spec, params, xs)
        _, dpred = mse_loss(pred, np.full((8, 2), 0.7))
        grads = backward_batch(spec, params, cache, dpred)
        self.assertTrue(np.all(np.abs(grads["b_out"]) > 0.0))
        self.assertGreater(np.abs(grads["W_out"]).sum(axis=1).min(), 0.0)

    def test_centre_outside_relu_range(self):
        with self.assertRaises(ConfigurationError):
            init_parameters(RnnSpec(CellKind.GRU, input_dim=2, hidden_units=4, activation="relu"), seed=0,
                            head_centre=0.0)

    def test_invalid_spec(self):
        with self.assertRaises(ConfigurationError):
            init_parameters(RnnSpec(CellKind.LSTM, input_dim=0, hidden_units=4), seed=0)


if __name__ == "__main__":
    unittest.main()
