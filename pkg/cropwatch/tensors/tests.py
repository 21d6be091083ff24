import math

import numpy as np
from core.exceptions import DimensionError, StateError, ValidationError
from core.rng import make_rng
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from .gradcheck import analytic_gradient, max_relative_error, numeric_gradient
from .optim import Adam, OptimizerState, init_uniform, optimizer_step
from .tensor import (
    Tape, Tensor, backward, clip_grad_norm, concat, cross_entropy, matmul,
    mean, sigmoid, softmax, stack, sum as tsum, tanh,
)

finite_vectors = st.lists(
    st.floats(min_value=-50, max_value=50, allow_nan=False, allow_infinity=False),
    min_size=1, max_size=12,
)


class MatmulTests(SimpleTestCase):
    def test_identity(self):
        m = np.arange(12.0).reshape(3, 4)
        np.testing.assert_array_equal(matmul(np.eye(3), m).data, m)

    def test_zero_absorbs(self):
        out = matmul(np.zeros((2, 3)), np.ones((3, 4)))
        np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_matches_triple_loop(self):
        rng = make_rng(7)
        a, b = rng.normal(size=(4, 5)), rng.normal(size=(5, 3))
        expected = np.zeros((4, 3))
        for i in range(4):
            for j in range(3):
                for k in range(5):
                    expected[i, j] += a[i, k] * b[k, j]
        np.testing.assert_allclose(matmul(a, b).data, expected, atol=1e-12)

    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaisesMessage(DimensionError, "[2, 3] x [4, 2]"):
            matmul(np.ones((2, 3)), np.ones((4, 2)))


class SoftmaxTests(SimpleTestCase):
    def test_symmetry(self):
        np.testing.assert_allclose(softmax(np.full(4, 3.3)).data, [0.25] * 4, atol=1e-15)

    def test_closed_form(self):
        np.testing.assert_allclose(softmax([0.0, math.log(3)]).data, [0.25, 0.75], atol=1e-12)

    def test_empty_is_domain_error(self):
        with self.assertRaises(ValidationError):
            softmax(np.array([]))

    @given(finite_vectors)
    @settings(max_examples=200, deadline=None)
    def test_probability_vector_and_shift_invariance(self, values):
        v = np.array(values)
        p = softmax(v).data
        self.assertTrue(np.all(p > 0))
        self.assertAlmostEqual(float(p.sum()), 1.0, delta=1e-9)
        np.testing.assert_allclose(softmax(v + 1000.0).data, p, atol=1e-12)

    def test_large_inputs_stay_finite(self):
        self.assertTrue(np.all(np.isfinite(softmax([1e300, -1e300, 0.0]).data)))


class CrossEntropyTests(SimpleTestCase):
    def test_certainty(self):
        self.assertEqual(cross_entropy([0.0, 1.0], 1).item(), 0.0)

    def test_uniform_two_classes(self):
        self.assertAlmostEqual(cross_entropy([0.5, 0.5], 0).item(), 0.693147, places=6)

    def test_zero_probability_is_clamped(self):
        loss = cross_entropy([1.0, 0.0], 1).item()
        self.assertTrue(math.isfinite(loss))
        self.assertAlmostEqual(loss, -math.log(1e-12))

    def test_label_out_of_range(self):
        with self.assertRaises(IndexError):
            cross_entropy([0.5, 0.5], 2)


class BackwardTests(SimpleTestCase):
    def test_sum_gives_ones(self):
        theta = Tensor(np.arange(5.0), requires_grad=True)
        with Tape() as tape:
            loss = tsum(theta)
        grad, = backward(tape, loss, [theta])
        np.testing.assert_array_equal(grad, np.ones(5))

    def test_square(self):
        theta = Tensor(3.0, requires_grad=True)
        with Tape() as tape:
            loss = theta * theta
        grad, = backward(tape, loss, [theta])
        self.assertEqual(float(grad), 6.0)

    def test_unreached_parameter_gets_zero(self):
        used = Tensor([1.0, 2.0], requires_grad=True)
        unused = Tensor([[1.0]], requires_grad=True)
        with Tape() as tape:
            loss = tsum(used * used)
        _, grad = backward(tape, loss, [used, unused])
        np.testing.assert_array_equal(grad, np.zeros((1, 1)))

    def test_backward_before_forward(self):
        with self.assertRaises(StateError):
            backward(Tape(), Tensor(1.0))

    def _two_layer(self, seed):
        rng = make_rng(seed, 'gradcheck')
        x = rng.normal(size=(5, 3))
        w1 = init_uniform((3, 4), 3, rng)
        b1 = init_uniform((4,), 3, rng)
        w2 = init_uniform((4, 1), 4, rng)
        params = [w1, b1, w2]

        def loss_fn():
            hidden = tanh(matmul(x, w1) + b1)
            return mean(sigmoid(matmul(hidden, w2)))

        return loss_fn, params

    def test_two_layer_net_matches_finite_differences(self):
        loss_fn, params = self._two_layer(3)
        self.assertEqual(sum(p.data.size for p in params), 20)
        error = max_relative_error(analytic_gradient(loss_fn, params), numeric_gradient(loss_fn, params))
        self.assertLess(error, 1e-4)

    def test_random_graphs_over_many_seeds(self):
        for seed in range(100):
            rng = make_rng(seed, 'graph')
            a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
            b = Tensor(rng.normal(size=(3,)), requires_grad=True)

            def loss_fn():
                joined = concat([a, stack([b, b * b])], axis=1)
                probs = softmax(tanh(joined), axis=1)
                return cross_entropy(probs, [seed % 6, (seed + 1) % 6])

            error = max_relative_error(
                analytic_gradient(loss_fn, [a, b]), numeric_gradient(loss_fn, [a, b])
            )
            self.assertLess(error, 1e-4, msg=f"seed {seed}")


class OptimizerTests(SimpleTestCase):
    def test_zero_gradient_leaves_params(self):
        params = [np.array([1.0, -2.0])]
        state = OptimizerState.for_shapes([(2,)])
        updated, state = optimizer_step(params, [np.zeros(2)], state)
        np.testing.assert_array_equal(updated[0], params[0])
        self.assertEqual(state.step, 1)

    def test_first_step_moves_by_learning_rate(self):
        state = OptimizerState.for_shapes([(3,)], learning_rate=1e-3)
        grad = np.array([0.5, -2.0, 10.0])
        updated, _ = optimizer_step([np.zeros(3)], [grad], state)
        np.testing.assert_allclose(updated[0], -1e-3 * np.sign(grad), rtol=1e-6)

    def test_deterministic(self):
        state = OptimizerState.for_shapes([(2, 2)])
        grads = [np.array([[0.1, 0.2], [0.3, -0.4]])]
        first, s1 = optimizer_step([np.ones((2, 2))], grads, state)
        second, s2 = optimizer_step([np.ones((2, 2))], grads, state)
        self.assertEqual(first[0].tobytes(), second[0].tobytes())
        self.assertEqual(s1.step, s2.step)

    def test_shape_mismatch(self):
        state = OptimizerState.for_shapes([(2,)])
        with self.assertRaises(DimensionError):
            optimizer_step([np.zeros(3)], [np.zeros(3)], state)

    def test_adam_wrapper_descends(self):
        theta = Tensor([4.0], requires_grad=True)
        optimizer = Adam([theta], learning_rate=0.1)
        for _ in range(200):
            theta.zero_grad()
            with Tape() as tape:
                loss = tsum(theta * theta)
            optimizer.step(backward(tape, loss, [theta]))
        self.assertLess(abs(float(theta.data[0])), 0.5)

    def test_clip_grad_norm(self):
        clipped, total = clip_grad_norm([np.array([3.0, 4.0])], 1.0)
        self.assertAlmostEqual(total, 5.0)
        np.testing.assert_allclose(clipped[0], [0.6, 0.8])
