import os
import tempfile

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase
from io import StringIO

from salforge.autodiff import functional as F
from salforge.autodiff.gradcheck import run_checks
from salforge.autodiff.tensor import Tensor, DimensionError
from salforge.nn.architectures import (
    LIGHTSAL_ENCODER, LIGHTSAL_DECODER, BASELINE_ENCODER, BASELINE_DECODER, LATENT_DIM,
    encoder_forward, decoder_forward, baseline_decoder_forward, get_model, sample_latent,
)
from salforge.nn.init import init_params, scaled_uniform_bound
from salforge.nn.params import Architecture, ConfigurationError, InitScheme, LatentMode, ModelParams, param_count


def random_points(n, seed=0):
    return Tensor(np.random.default_rng(seed).uniform(-1, 1, size=(3, n)))


class ParameterCountTestCase(SimpleTestCase):

    def test_lightsal_encoder(self):
        self.assertEqual(LIGHTSAL_ENCODER.param_count(), 658944)

    def test_lightsal_decoder(self):
        self.assertEqual(LIGHTSAL_DECODER.param_count(), 362110)

    def test_baseline_networks(self):
        self.assertEqual(BASELINE_DECODER.param_count(), 1842177)
        self.assertEqual(BASELINE_ENCODER.param_count(), 2365952)

    def test_size_ratio(self):
        self.assertLess(LIGHTSAL_DECODER.param_count() / BASELINE_DECODER.param_count(), 0.25)
        light = get_model(Architecture.LIGHTSAL).param_count()
        baseline = get_model(Architecture.SAL_BASELINE).param_count()
        self.assertEqual(light, 1021054)
        self.assertLess(light / baseline, 0.25)

    def test_param_count_of_initialized_params(self):
        params = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=0)
        self.assertEqual(param_count(params.subset('encoder.')), 658944)
        self.assertEqual(param_count(params), 1021054)
        self.assertEqual(param_count(ModelParams('lightsal', 'scaled-uniform', 0)), 0)

    def test_equivariant_layer_count(self):
        layer = LIGHTSAL_ENCODER.equivariant[0]
        self.assertEqual(layer.param_count(), 2 * (128 * 3 + 128))


class InitTestCase(SimpleTestCase):

    def test_same_seed_is_bit_identical(self):
        a = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=5)
        b = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=5)
        self.assertEqual(a.names(), b.names())
        for name in a:
            self.assertEqual(a[name].data.tobytes(), b[name].data.tobytes())

    def test_scaled_uniform_bounds(self):
        params = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=1)
        for layer in LIGHTSAL_ENCODER.affines() + LIGHTSAL_DECODER.affines():
            weight = params[layer.weight_name].data
            self.assertLessEqual(np.abs(weight).max(), scaled_uniform_bound(layer.c_in, layer.c_out) + 1e-7)
            self.assertFalse(params[layer.bias_name].data.any())

    def test_geometric_sphere_sign(self):
        params = init_params(Architecture.LIGHTSAL, InitScheme.GEOMETRIC_SPHERE, seed=0)
        z = Tensor(np.zeros(LATENT_DIM))
        origin = decoder_forward(params, z, Tensor(np.zeros((3, 1))))
        far = decoder_forward(params, z, Tensor([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 2.0]]))
        self.assertLess(origin.data[0], 0)
        self.assertTrue((far.data > 0).all())

    def test_unknown_arch_and_scheme(self):
        with self.assertRaises(ConfigurationError):
            init_params('pointnet', InitScheme.SCALED_UNIFORM, seed=0)
        with self.assertRaises(ConfigurationError):
            init_params(Architecture.LIGHTSAL, 'xavier', seed=0)


class ForwardTestCase(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.params = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=0)

    def test_encoder_output_shapes(self):
        mu, eta = encoder_forward(self.params, random_points(32))
        self.assertEqual((mu.shape, eta.shape), ((256,), (256,)))

    def test_encoder_identical_points_ignore_order(self):
        points = np.tile(np.array([[0.1], [-0.2], [0.3]]), (1, 16))
        mu, eta = encoder_forward(self.params, Tensor(points))
        mu2, eta2 = encoder_forward(self.params, Tensor(points[:, ::-1].copy()))
        np.testing.assert_array_equal(mu.data, mu2.data)
        np.testing.assert_array_equal(eta.data, eta2.data)

    def test_encoder_is_not_permutation_invariant(self):
        points = random_points(64, seed=4).data
        permuted = points[:, np.random.default_rng(9).permutation(64)]
        mu, _ = encoder_forward(self.params, Tensor(points))
        mu2, _ = encoder_forward(self.params, Tensor(permuted))
        self.assertFalse(np.array_equal(mu.data, mu2.data))

    def test_baseline_encoder_is_permutation_invariant(self):
        params = init_params(Architecture.SAL_BASELINE, InitScheme.SCALED_UNIFORM, seed=0)
        points = random_points(16, seed=4).data
        permuted = points[:, np.random.default_rng(9).permutation(16)]
        mu, eta = encoder_forward(params, Tensor(points))
        mu2, eta2 = encoder_forward(params, Tensor(permuted))
        np.testing.assert_allclose(mu.data, mu2.data, rtol=1e-5, atol=1e-6)
        np.testing.assert_allclose(eta.data, eta2.data, rtol=1e-5, atol=1e-6)

    def test_encoder_rejects_wrong_leading_dimension(self):
        with self.assertRaises(DimensionError):
            encoder_forward(self.params, Tensor(np.zeros((2, 5))))

    def test_decoder_is_pointwise(self):
        z = Tensor(np.random.default_rng(0).normal(size=LATENT_DIM))
        points = random_points(5).data
        values = decoder_forward(self.params, z, Tensor(points)).data
        duplicated = decoder_forward(self.params, z, Tensor(points[:, [0, 1, 1, 4, 2, 3]])).data
        self.assertEqual(values.shape, (5,))
        np.testing.assert_allclose(duplicated, values[[0, 1, 1, 4, 2, 3]], rtol=1e-5, atol=1e-6)

    def test_decoder_rejects_mismatched_latent(self):
        with self.assertRaises(DimensionError):
            decoder_forward(self.params, Tensor(np.zeros(128)), random_points(3))

    def test_zero_parameters_give_zero_output(self):
        for arch, forward in ((Architecture.LIGHTSAL, decoder_forward),
                              (Architecture.SAL_BASELINE, baseline_decoder_forward)):
            params = init_params(arch, InitScheme.SCALED_UNIFORM, seed=0)
            for tensor in params.values():
                tensor.data[...] = 0
            out = forward(params, Tensor(np.ones(LATENT_DIM)), random_points(4))
            np.testing.assert_array_equal(out.data, np.zeros(4))


class SampleLatentTestCase(SimpleTestCase):

    def test_mean_mode_returns_mu(self):
        mu, eta = Tensor(np.arange(256.0)), Tensor(np.ones(256))
        self.assertIs(sample_latent(mu, eta, None, LatentMode.MEAN), mu)

    def test_stochastic_mode_requires_generator(self):
        mu, eta = Tensor(np.zeros(256)), Tensor(np.zeros(256))
        with self.assertRaises(ConfigurationError):
            sample_latent(mu, eta, None)

    def test_vanishing_variance(self):
        mu, eta = Tensor(np.linspace(-1, 1, 256)), Tensor(np.full(256, -1e4))
        z = sample_latent(mu, eta, np.random.default_rng(0), LatentMode.STOCHASTIC)
        np.testing.assert_allclose(z.data, mu.data, atol=1e-6)

    def test_unit_variance(self):
        rng = np.random.default_rng(0)
        mu, eta = Tensor(np.zeros(256)), Tensor(np.zeros(256))
        draws = np.stack([sample_latent(mu, eta, rng).data for _ in range(100000 // 256 + 1)])
        self.assertAlmostEqual(float(draws.std()), 1.0, delta=0.02)

    def test_gradient_flows_to_mu_and_eta(self):
        mu, eta = Tensor(np.zeros(256), requires_grad=True), Tensor(np.zeros(256), requires_grad=True)
        F.sum_all(sample_latent(mu, eta, np.random.default_rng(1))).backward()
        np.testing.assert_array_equal(mu.grad, np.ones(256))
        self.assertIsNotNone(eta.grad)


class NetworkGradcheckTestCase(SimpleTestCase):

    def test_every_parameter_block(self):
        for result in run_checks(['nn']):
            self.assertLess(result.error, 1e-3, result.name)


class InfoCommandTestCase(SimpleTestCase):

    def test_lightsal_counts(self):
        out = StringIO()
        call_command('info', '--arch', 'lightsal', stdout=out)
        text = out.getvalue()
        self.assertIn('encoder: 658,944', text)
        self.assertIn('decoder: 362,110', text)
        self.assertIn('< 0.25', text)
        self.assertIn('seed 0', text)

    def test_baseline_decoder(self):
        out = StringIO()
        call_command('info', '--arch', 'sal-baseline', '--seed', '3', stdout=out)
        self.assertIn('decoder: 1,842,177', out.getvalue())
        self.assertIn('seed 3', out.getvalue())

    def test_architecture_from_config_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'config.yaml')
            with open(path, 'w') as f:
                f.write('model:\n  arch: sal-baseline\ntrain:\n  seed: 7\n')
            out = StringIO()
            call_command('info', '--config', path, stdout=out)
        self.assertIn('Architecture sal-baseline', out.getvalue())
        self.assertIn('decoder: 1,842,177', out.getvalue())
        self.assertIn('seed 7', out.getvalue())

    def test_unknown_config_key_exits_2(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'config.yaml')
            with open(path, 'w') as f:
                f.write('model:\n  depth: 3\n')
            with self.assertRaises(CommandError) as ctx:
                call_command('info', '--config', path, stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
