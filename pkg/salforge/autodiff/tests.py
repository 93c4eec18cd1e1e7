from io import StringIO

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from salforge.autodiff import functional as F
from salforge.autodiff.gradcheck import gradcheck, run_checks, samples_for
from salforge.autodiff.tensor import Tensor, Graph, ContractError, DimensionError, FLOAT64, precision, no_grad


def leaf(values):
    return Tensor(values, requires_grad=True)


class AffinePointwiseTestCase(SimpleTestCase):

    def test_identity(self):
        out = F.affine_pointwise(Tensor([[1, 2], [3, 4]]), Tensor(np.eye(2)), Tensor([0, 0]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_row_sum(self):
        out = F.affine_pointwise(Tensor([[1, 2], [3, 4]]), Tensor([[1, 1]]), Tensor([0]))
        np.testing.assert_array_equal(out.data, [[4, 6]])

    def test_bias_broadcasts_over_columns(self):
        out = F.affine_pointwise(Tensor(np.zeros((2, 3))), Tensor(np.ones((1, 2))), Tensor([5]))
        np.testing.assert_array_equal(out.data, [[5, 5, 5]])

    def test_shape_mismatch_names_both_shapes(self):
        with self.assertRaises(DimensionError) as ctx:
            F.affine_pointwise(Tensor(np.zeros((3, 2))), Tensor(np.zeros((1, 2))), Tensor([0]))
        self.assertIn('(3, 2)', str(ctx.exception))
        self.assertIn('(1, 2)', str(ctx.exception))

    def test_weight_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        with precision(FLOAT64):
            x = Tensor(rng.normal(size=(4, 5)))
            w = leaf(rng.normal(size=(3, 4)))
            b = Tensor(rng.normal(size=3))
        error = gradcheck(lambda t: F.mean_all(F.affine_pointwise(x, t, b)), w)
        self.assertLess(error, 1e-4)

    def test_linear_function_is_exact(self):
        with precision(FLOAT64):
            x = leaf(np.random.default_rng(1).normal(size=(3, 3)))
        self.assertLess(gradcheck(lambda t: F.sum_all(F.scale(t, 2.5)), x), 1e-8)


class ElementwiseTestCase(SimpleTestCase):

    def test_relu_forward(self):
        np.testing.assert_array_equal(F.relu(Tensor([-1, 0, 2])).data, [0, 0, 2])

    def test_relu_zero_gradient_at_kink(self):
        x = leaf([-1.0, 0.0, 2.0])
        F.sum_all(F.relu(x)).backward()
        np.testing.assert_array_equal(x.grad, [0, 0, 1])

    def test_relu_all_negative(self):
        x = leaf([-3.0, -1.0])
        out = F.relu(x)
        F.sum_all(out).backward()
        np.testing.assert_array_equal(out.data, [0, 0])
        np.testing.assert_array_equal(x.grad, [0, 0])

    def test_relu_gradcheck_away_from_zero(self):
        rng = np.random.default_rng(2)
        values = rng.uniform(0.1, 1.0, size=20) * rng.choice([-1, 1], size=20)
        with precision(FLOAT64):
            x = leaf(values)
        self.assertLess(gradcheck(lambda t: F.sum_all(F.square(F.relu(t))), x), 1e-6)

    def test_abs_sign_rule(self):
        x = leaf([-3.0, 3.0])
        out = F.abs(x)
        F.mean_all(out).backward()
        np.testing.assert_array_equal(out.data, [3, 3])
        np.testing.assert_array_equal(x.grad, [-0.5, 0.5])

    def test_abs_zero_subgradient(self):
        x = leaf([0.0])
        F.sum_all(F.abs(x)).backward()
        np.testing.assert_array_equal(x.grad, [0])

    def test_exp(self):
        np.testing.assert_array_equal(F.exp(Tensor([0])).data, [1])

    def test_concat_rows_shape(self):
        out = F.concat_rows(Tensor(np.zeros((2, 4))), Tensor(np.ones((3, 4))))
        self.assertEqual(out.shape, (5, 4))

    def test_slice_rows_gradient(self):
        x = leaf(np.ones((4, 2)))
        F.sum_all(F.slice_rows(x, 1, 3)).backward()
        np.testing.assert_array_equal(x.grad, [[0, 0], [1, 1], [1, 1], [0, 0]])

    def test_binary_ops_require_equal_shapes(self):
        for op in (F.add, F.sub, F.mul):
            with self.assertRaises(DimensionError):
                op(Tensor(np.zeros((2, 3))), Tensor(np.zeros(3)))

    def test_repeat_cols_sums_gradient(self):
        v = leaf([1.0, 2.0])
        F.sum_all(F.repeat_cols(v, 3)).backward()
        np.testing.assert_array_equal(v.grad, [3, 3])


class PoolingTestCase(SimpleTestCase):

    def test_maxpool_pairs(self):
        np.testing.assert_array_equal(F.maxpool_pairs(Tensor([[1, 3, 2]])).data, [[3, 3, 2]])

    def test_maxpool_pairs_constant_row(self):
        np.testing.assert_array_equal(F.maxpool_pairs(Tensor([[4, 4, 4, 4]])).data, [[4, 4, 4, 4]])

    def test_maxpool_pairs_tie_goes_to_lower_index(self):
        x = leaf([[2.0, 2.0]])
        out = F.maxpool_pairs(x)
        np.testing.assert_array_equal(out.data, [[2, 2]])
        F.sum_all(F.mul(out, Tensor([[1.0, 0.0]]))).backward()
        np.testing.assert_array_equal(x.grad, [[1, 0]])

    def test_maxpool_pairs_routes_to_right_neighbour(self):
        x = leaf([[1.0, 3.0, 2.0]])
        F.sum_all(F.maxpool_pairs(x)).backward()
        np.testing.assert_array_equal(x.grad, [[0, 2, 1]])

    def test_maxpool_pairs_is_not_permutation_invariant(self):
        x = np.array([[1.0, 3.0, 2.0]])
        permuted = x[:, [1, 0, 2]]
        self.assertFalse(np.array_equal(
            np.sort(F.maxpool_pairs(Tensor(x)).data), np.sort(F.maxpool_pairs(Tensor(permuted)).data)
        ))

    def test_global_maxpool(self):
        np.testing.assert_array_equal(F.global_maxpool(Tensor([[1, 5, 3]])).data, [5])

    def test_global_maxpool_permutation_invariant(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 9))
        for _ in range(5):
            permuted = x[:, rng.permutation(9)]
            np.testing.assert_array_equal(F.global_maxpool(Tensor(x)).data, F.global_maxpool(Tensor(permuted)).data)

    def test_global_maxpool_tie_goes_to_first(self):
        x = leaf([[2.0, 1.0, 2.0]])
        F.sum_all(F.global_maxpool(x)).backward()
        np.testing.assert_array_equal(x.grad, [[1, 0, 0]])


class BackwardTestCase(SimpleTestCase):

    def test_mean_gradient(self):
        x = leaf([1.0, 2.0, 3.0, 4.0])
        F.mean_all(x).backward()
        np.testing.assert_array_equal(x.grad, [0.25] * 4)

    def test_square_gradient(self):
        x = leaf(3.0)
        F.square(x).backward()
        self.assertEqual(float(x.grad), 6.0)

    def test_non_scalar_loss(self):
        with self.assertRaises(ContractError):
            leaf([1.0, 2.0]).backward()

    def test_repeated_backward_accumulates(self):
        x = leaf([1.0, 2.0])
        F.sum_all(x).backward()
        F.sum_all(x).backward()
        np.testing.assert_array_equal(x.grad, [2, 2])

    def test_shared_consumer_sums_contributions(self):
        x = leaf([2.0])
        F.sum_all(F.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [4])
        with precision(FLOAT64):
            y = leaf([0.3, -0.7])
        self.assertLess(gradcheck(lambda t: F.sum_all(F.mul(F.exp(t), F.square(t))), y), 1e-6)

    def test_no_grad_records_nothing(self):
        x = leaf([1.0])
        with no_grad():
            out = F.square(x)
        self.assertFalse(out.requires_grad)
        self.assertIsNone(out.node)

    def test_graph_inputs_precede_outputs(self):
        x = leaf([1.0, 2.0])
        loss = F.mean_all(F.add(F.square(x), F.exp(x)))
        order = Graph.trace(loss).order
        position = {id(t): i for i, t in enumerate(order)}
        for tensor in order:
            if tensor.node is not None:
                for parent in tensor.node.inputs:
                    self.assertLess(position[id(parent)], position[id(tensor)])

    def test_precision_switch(self):
        self.assertEqual(Tensor([1]).dtype, np.float32)
        with precision(FLOAT64):
            self.assertEqual(Tensor([1]).dtype, np.float64)
        self.assertEqual(Tensor([1]).dtype, np.float32)


class GradcheckRegistryTestCase(SimpleTestCase):

    def test_autodiff_cases_pass(self):
        results = run_checks(['autodiff'])
        self.assertTrue(results)
        for result in results:
            self.assertLess(result.error, 1e-3, result.name)

    def test_vectors_are_checked_in_full(self):
        self.assertIsNone(samples_for(Tensor(np.zeros(512)), 32))
        self.assertEqual(samples_for(Tensor(np.zeros((512, 256))), 32), 32)


class GradcheckCommandTestCase(SimpleTestCase):

    def test_autodiff_module(self):
        out = StringIO()
        call_command('gradcheck', '--module', 'autodiff', stdout=out)
        text = out.getvalue()
        self.assertIn('failed: 0', text)
        self.assertIn('worst: autodiff.', text)
        self.assertIn('(seed 0)', text)
