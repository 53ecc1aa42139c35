import math
import unittest

import numpy as np

from numerics import tensor as tn
from numerics.gradcheck import finite_difference_check
from numerics.tensor import Tensor, backward


def random_shape(rng, ndim=2):
    """A random small shape (extents up to 8)."""
    return tuple(int(x) for x in rng.integers(1, 9, size=ndim))


class TensorTestCase(unittest.TestCase):
    """Construction and invariants."""

    def test_values_are_flat_float64(self):
        t = Tensor([[1, 2], [3, 4]])
        self.assertEqual(t.shape, (2, 2))
        self.assertEqual(t.values.dtype, np.float64)
        self.assertEqual(list(t.values), [1.0, 2.0, 3.0, 4.0])
        self.assertIsNone(t.grad)

    def test_non_finite_rejected(self):
        self.assertRaises(tn.NonFiniteError, Tensor, [1.0, float('nan')])
        self.assertRaises(tn.NonFiniteError, Tensor, [float('inf')])

    def test_non_finite_result_rejected(self):
        self.assertRaises(tn.NonFiniteError, tn.log, Tensor([0.0, 1.0]))
        self.assertRaises(tn.NonFiniteError, tn.exp, Tensor([1e4]))
        self.assertRaises(tn.NonFiniteError, tn.div, Tensor([1.0]), Tensor([0.0]))

    def test_item_needs_single_element(self):
        self.assertEqual(Tensor([[3.5]]).item(), 3.5)
        self.assertRaises(tn.ContractError, Tensor([1.0, 2.0]).item)

    def test_no_graph_without_gradients(self):
        a = Tensor([1.0, 2.0])
        b = a * 2 + 1
        self.assertFalse(b.requires_grad)
        self.assertEqual(b._parents, ())


class MatmulTestCase(unittest.TestCase):

    def test_identity(self):
        out = tn.matmul(Tensor(np.eye(2)), Tensor([[1, 2], [3, 4]]))
        self.assertEqual(out.data.tolist(), [[1, 2], [3, 4]])

    def test_row_by_column(self):
        out = tn.matmul(Tensor([[1, 2]]), Tensor([[3], [4]]))
        self.assertEqual(out.data.tolist(), [[11]])

    def test_zero_matrix(self):
        rng = np.random.default_rng(1)
        out = tn.matmul(Tensor(np.zeros((3, 2))), Tensor(rng.normal(size=(2, 5))))
        self.assertEqual(out.shape, (3, 5))
        self.assertFalse(out.data.any())

    def test_shape_mismatch(self):
        self.assertRaises(
            tn.ShapeError, tn.matmul, Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        self.assertRaises(tn.ShapeError, tn.matmul, Tensor(np.ones(3)), Tensor(np.ones((3, 1))))

    def test_backward_rule(self):
        rng = np.random.default_rng(2)
        a = tn.parameter(rng.normal(size=(3, 4)))
        b = tn.parameter(rng.normal(size=(4, 2)))
        upstream = rng.normal(size=(3, 2))
        backward((tn.matmul(a, b) * upstream).sum())
        np.testing.assert_allclose(a.grad, upstream @ b.data.T, atol=1e-12)
        np.testing.assert_allclose(b.grad, a.data.T @ upstream, atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            a, b, c = (Tensor(rng.uniform(-2, 2, size=(4, 4))) for _ in range(3))
            left = tn.matmul(tn.matmul(a, b), c).data
            right = tn.matmul(a, tn.matmul(b, c)).data
            self.assertLess(np.abs(left - right).max(), 1e-9)


class SoftmaxTestCase(unittest.TestCase):

    def test_symmetric(self):
        out = tn.softmax(Tensor([0.0, 0.0]), axis=0)
        self.assertEqual(out.data.tolist(), [0.5, 0.5])

    def test_stabilized(self):
        out = tn.softmax(Tensor([1000.0, 0.0]), axis=0)
        self.assertAlmostEqual(out.data[0], 1.0)
        self.assertAlmostEqual(out.data[1], 0.0)

    def test_closed_form(self):
        out = tn.softmax(Tensor([math.log(1), math.log(3)]), axis=0)
        self.assertAlmostEqual(out.data[0], 0.25, places=12)
        self.assertAlmostEqual(out.data[1], 0.75, places=12)

    def test_rows_sum_to_one_for_big_inputs(self):
        rng = np.random.default_rng(4)
        logits = Tensor(rng.uniform(-1e4, 1e4, size=(20, 7)))
        sums = tn.softmax(logits, axis=1).data.sum(axis=1)
        self.assertLess(np.abs(sums - 1).max(), 1e-12)
        self.assertTrue((tn.softmax(logits, axis=1).data >= 0).all())

    def test_bad_axis(self):
        self.assertRaises(tn.ShapeError, tn.softmax, Tensor([[1.0, 2.0]]), 2)


class LayerNormTestCase(unittest.TestCase):

    def test_constant_row(self):
        out = tn.layer_norm(Tensor([[3.0, 3.0, 3.0]]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        self.assertEqual(out.data.tolist(), [[0.0, 0.0, 0.0]])

    def test_two_values(self):
        out = tn.layer_norm(Tensor([[1.0, 3.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        expected = 1 / math.sqrt(1 + tn.LAYER_NORM_EPS)
        np.testing.assert_allclose(out.data, [[-expected, expected]], atol=1e-12)
        self.assertAlmostEqual(out.data[0, 1], 1.0, places=5)

    def test_zero_gain_gives_bias(self):
        rng = np.random.default_rng(5)
        out = tn.layer_norm(
            Tensor(rng.normal(size=(4, 3))), Tensor(np.zeros(3)), Tensor([0.5, -1.0, 2.0]))
        np.testing.assert_allclose(out.data, np.tile([0.5, -1.0, 2.0], (4, 1)))

    def test_gain_mismatch(self):
        self.assertRaises(
            tn.ShapeError, tn.layer_norm,
            Tensor(np.ones((2, 3))), Tensor(np.ones(2)), Tensor(np.zeros(3)))


class BackwardTestCase(unittest.TestCase):

    def test_sum_of_squares(self):
        x = tn.parameter([1.0, 2.0])
        backward((x * x).sum())
        self.assertEqual(x.grad.tolist(), [2.0, 4.0])

    def test_constant_loss(self):
        x = tn.parameter([1.0, 2.0])
        loss = (x * 0).sum() + 3.0
        backward(loss)
        self.assertEqual(x.grad.tolist(), [0.0, 0.0])

    def test_non_scalar_loss(self):
        x = tn.parameter([1.0, 2.0])
        self.assertRaises(tn.ContractError, backward, x * 2)

    def test_repeated_calls_accumulate(self):
        x = tn.parameter([1.0, 2.0])
        loss = (x * x).sum()
        backward(loss)
        backward(loss)
        self.assertEqual(x.grad.tolist(), [4.0, 8.0])

    def test_shared_subexpression(self):
        x = tn.parameter([3.0])
        y = x * 2
        backward((y * y + y).sum())
        # d/dx (4x² + 2x) = 8x + 2
        self.assertEqual(x.grad.tolist(), [26.0])

    def test_matmul_sum_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        a = tn.parameter(rng.normal(size=(3, 4)))
        b = tn.parameter(rng.normal(size=(4, 5)))
        self.assertLess(finite_difference_check(lambda x: tn.matmul(x, b).sum(), a), 1e-6)
        self.assertLess(finite_difference_check(lambda x: tn.matmul(a, x).sum(), b), 1e-6)

    def test_deep_graph(self):
        # deeper than the default recursion limit
        x = tn.parameter([1.0])
        y = x
        for _ in range(3000):
            y = y * 1.0
        backward(y.sum())
        self.assertEqual(x.grad.tolist(), [1.0])


class FiniteDifferenceTestCase(unittest.TestCase):

    def test_polynomial(self):
        x = tn.parameter([0.3, -1.2, 2.0])
        self.assertLess(finite_difference_check(lambda t: (t * t).sum(), x), 1e-8)

    def test_softmax_cross_entropy(self):
        rng = np.random.default_rng(7)
        logits = tn.parameter(rng.normal(size=(5, 4)))
        targets = (np.arange(5), rng.integers(0, 4, size=5))

        def cross_entropy(t):
            return -tn.log(tn.softmax(t, axis=1)[targets]).sum()
        self.assertLess(finite_difference_check(cross_entropy, logits), 1e-5)

    def test_constant_function(self):
        x = tn.parameter([1.0, 2.0])
        self.assertEqual(finite_difference_check(lambda t: Tensor(5.0), x), 0.0)

    def test_restores_input(self):
        x = tn.parameter([0.1, 0.2])
        finite_difference_check(lambda t: (t * t * t).sum(), x)
        self.assertEqual(x.data.tolist(), [0.1, 0.2])


class DifferentiableOpsTestCase(unittest.TestCase):
    """Every smooth op agrees with central differences on random small inputs."""

    TRIALS = 100

    def check(self, build):
        rng = np.random.default_rng(8)
        for _ in range(self.TRIALS):
            x, f = build(rng)
            self.assertLess(finite_difference_check(f, x), 1e-4)

    def test_matmul(self):
        def build(rng):
            m, k = random_shape(rng)
            other = Tensor(rng.uniform(-2, 2, size=(k, int(rng.integers(1, 9)))))
            weights = rng.uniform(-2, 2, size=(m, other.shape[1]))
            x = tn.parameter(rng.uniform(-2, 2, size=(m, k)))
            return x, lambda t: (tn.matmul(t, other) * weights).sum()
        self.check(build)

    def test_softmax(self):
        def build(rng):
            shape = random_shape(rng)
            weights = rng.uniform(-2, 2, size=shape)
            x = tn.parameter(rng.uniform(-2, 2, size=shape))
            return x, lambda t: (tn.softmax(t, axis=1) * weights).sum()
        self.check(build)

    def test_layer_norm(self):
        def build(rng):
            rows, width = random_shape(rng)
            width += 1
            weights = rng.uniform(-2, 2, size=(rows, width))
            gain = Tensor(rng.uniform(-2, 2, size=width))
            bias = Tensor(rng.uniform(-2, 2, size=width))
            x = tn.parameter(rng.uniform(-2, 2, size=(rows, width)))
            return x, lambda t: (tn.layer_norm(t, gain, bias) * weights).sum()
        self.check(build)

    def test_layer_norm_affine(self):
        def build(rng):
            rows, width = random_shape(rng)
            data = Tensor(rng.uniform(-2, 2, size=(rows, width)))
            weights = rng.uniform(-2, 2, size=(rows, width))
            bias = Tensor(rng.uniform(-2, 2, size=width))
            gain = tn.parameter(rng.uniform(-2, 2, size=width))
            return gain, lambda t: (tn.layer_norm(data, t, bias) * weights).sum()
        self.check(build)

    def test_elementwise(self):
        unary = [tn.sigmoid, tn.tanh, tn.gelu, tn.exp, lambda t: t * t * t]

        def build(rng):
            op = unary[int(rng.integers(len(unary)))]
            shape = random_shape(rng)
            weights = rng.uniform(-2, 2, size=shape)
            x = tn.parameter(rng.uniform(-2, 2, size=shape))
            return x, lambda t: (op(t) * weights).sum()
        self.check(build)

    def test_division_and_log(self):
        def build(rng):
            shape = random_shape(rng)
            numerator = Tensor(rng.uniform(-2, 2, size=shape))
            x = tn.parameter(rng.uniform(0.5, 2, size=shape))
            return x, lambda t: (numerator / t + tn.log(t)).sum()
        self.check(build)

    def test_row_broadcast(self):
        def build(rng):
            rows, width = random_shape(rng)
            data = Tensor(rng.uniform(-2, 2, size=(rows, width)))
            x = tn.parameter(rng.uniform(-2, 2, size=width))
            return x, lambda t: ((data + t) * (data * t)).sum()
        self.check(build)

    def test_gather_and_concat(self):
        def build(rng):
            rows, width = random_shape(rng)
            other = Tensor(rng.uniform(-2, 2, size=(2, width)))
            index = rng.integers(0, rows + 2, size=5)
            weights = rng.uniform(-2, 2, size=(5, width))
            x = tn.parameter(rng.uniform(-2, 2, size=(rows, width)))
            return x, lambda t: (tn.concat([t, other])[index] * weights).sum()
        self.check(build)
