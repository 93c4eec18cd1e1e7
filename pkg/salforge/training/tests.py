import math
import unittest
from io import StringIO

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from salforge import seeding
from salforge.autodiff.gradcheck import run_checks
from salforge.autodiff.tensor import Tensor, DimensionError, FLOAT64
from salforge.config import Config, TrainSettings
from salforge.geometry.mesh import normalize
from salforge.geometry.shapes import icosphere
from salforge.geometry.tests import TempDirMixin
from salforge.nn.architectures import get_model, sample_latent
from salforge.nn.init import init_params
from salforge.nn.params import Architecture, InitScheme, ModelParams
from salforge.sdfield.archive import write_archive
from salforge.sdfield.manifest import Manifest, ManifestEntry, Split, write_manifest
from salforge.sdfield.samples import SampleSet, generate_samples
from salforge.training.checkpoint import (
    CheckpointIntegrityError, decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint,
)
from salforge.training.losses import kl_loss, sal_loss, total_loss
from salforge.training.optim import AdamState, adam_step, lr_at
from salforge.training.trainer import (
    Trainer, TrainingError, compare_decoders, initial_params, overfit, read_metrics,
)


def tiny_config(**train) -> Config:
    values = dict(batch_size=2, points_per_shape=16, input_points=24, epochs=2, checkpoint_every=1)
    values.update(train)
    return Config.from_dict({
        'data': {'n_input': 48, 'n_near': 40, 'n_uniform': 20},
        'train': values,
    })


def tiny_shapes(config: Config, count: int = 2):
    soup, _, _ = normalize(icosphere(1))
    return [generate_samples(soup, config.data, seeding.stream(0, seeding.DATA, f'shape-{i}'), f'shape-{i}')
            for i in range(count)]


def tensor(values):
    return Tensor(np.asarray(values, dtype=np.float64), dtype=FLOAT64)


class LossesTestCase(SimpleTestCase):

    def test_sal_loss_values(self):
        h = tensor([1.0, 0.5, 0.0])
        self.assertEqual(sal_loss(h, h).item(), 0.0)
        self.assertEqual(sal_loss(-h, h).item(), 0.0)
        self.assertEqual(sal_loss(tensor([2.0, -2.0]), tensor([1.0, 1.0])).item(), 1.0)

    def test_sal_loss_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            sal_loss(tensor([1.0, 2.0]), tensor([1.0]))

    def test_sign_agnostic_on_random_pairs(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            f = Tensor(rng.normal(size=n))
            h = Tensor(np.abs(rng.normal(size=n)))
            self.assertEqual(sal_loss(f, h).item(), sal_loss(-f, h).item())

    def test_kl_values(self):
        self.assertEqual(kl_loss(tensor(np.zeros(256)), tensor(np.zeros(256))).item(), 0.0)
        self.assertAlmostEqual(kl_loss(tensor([1.0]), tensor([0.0])).item(), 0.5, places=12)
        self.assertAlmostEqual(kl_loss(tensor([0.0]), tensor([math.log(2)])).item(), 0.15342640972, places=9)

    def test_kl_is_non_negative(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            mu, eta = rng.normal(size=8), rng.normal(size=8)
            self.assertGreater(kl_loss(tensor(mu), tensor(eta)).item(), 0.0)

    def test_total_loss(self):
        f, h = tensor([0.3, -0.2]), tensor([0.1, 0.4])
        mu, eta = tensor([0.5, -1.0]), tensor([0.2, 0.1])
        self.assertEqual(total_loss(f, h, mu, eta, 0.0).item(), sal_loss(f, h).item())
        zero = tensor([0.0, 0.0])
        self.assertEqual(total_loss(h, h, zero, zero, 0.7).item(), 0.0)
        expected = sal_loss(f, h).item() + 0.5 * kl_loss(mu, eta).item()
        self.assertAlmostEqual(total_loss(f, h, mu, eta, 0.5).item(), expected, places=12)

    def test_negated_final_layer_keeps_total_loss(self):
        params = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=0)
        model = get_model(Architecture.LIGHTSAL)
        rng = np.random.default_rng(2)
        cloud = Tensor(rng.uniform(-1, 1, size=(3, 32)))
        queries = Tensor(rng.uniform(-1, 1, size=(3, 16)))
        h = Tensor(rng.uniform(0, 0.5, size=16))

        def loss():
            mu, eta = model.encode(params, cloud)
            z = sample_latent(mu, eta, np.random.default_rng(3))
            return total_loss(model.decode(params, z, queries), h, mu, eta, 1e-3).item()

        before = loss()
        params['decoder.out.weight'].data *= -1
        params['decoder.out.bias'].data *= -1
        self.assertEqual(loss(), before)


class OptimizerTestCase(SimpleTestCase):

    def scalar(self, value):
        params = ModelParams('lightsal', 'scaled-uniform', 0)
        params.add('theta', Tensor([value], requires_grad=True, dtype=FLOAT64))
        return params, AdamState.for_params(params)

    def test_zero_gradient_keeps_parameters(self):
        params, state = self.scalar(1.5)
        adam_step(params, {'theta': np.zeros(1)}, state, 1e-3)
        self.assertEqual(params['theta'].data[0], 1.5)
        self.assertEqual(state.t, 1)

    def test_first_step(self):
        params, state = self.scalar(1.0)
        adam_step(params, {'theta': np.array([2.0])}, state, 1e-3)
        self.assertAlmostEqual(params['theta'].data[0], 0.999, places=9)

    def test_quadratic_converges(self):
        params, state = self.scalar(1.0)
        for _ in range(200):
            theta = params['theta'].data
            adam_step(params, {'theta': 2 * theta}, state, 0.05)
        self.assertLess(abs(params['theta'].data[0]), 0.05)

    def test_constant_gradient_is_monotonic(self):
        params, state = self.scalar(0.0)
        previous = []
        for _ in range(10):
            adam_step(params, {'theta': np.array([0.3])}, state, 1e-2)
            previous.append(params['theta'].data[0])
        self.assertTrue(all(b < a for a, b in zip(previous[1:], previous[2:])))

    def test_missing_gradient_is_skipped(self):
        params, state = self.scalar(1.0)
        adam_step(params, None, state, 1e-2)
        self.assertEqual(params['theta'].data[0], 1.0)

    def test_gradient_shape_mismatch(self):
        params, state = self.scalar(1.0)
        with self.assertRaises(DimensionError):
            adam_step(params, {'theta': np.zeros(2)}, state, 1e-3)

    def test_schedule(self):
        settings = TrainSettings()
        self.assertEqual(lr_at(0, settings), 0.0005)
        self.assertEqual(lr_at(200, settings), 0.00025)
        self.assertEqual(lr_at(450, settings), 0.000125)
        rates = [lr_at(epoch, settings) for epoch in range(0, 1000, 7)]
        self.assertEqual(rates, sorted(rates, reverse=True))


class CheckpointTestCase(TempDirMixin, SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        config = tiny_config(epochs=1)
        cls.result = Trainer(tiny_shapes(config), config, initial_params(config)).run()

    def test_round_trip_is_byte_identical(self):
        data = encode_checkpoint(self.result.checkpoint)
        path = self.tmp / 'a.salc'
        path.write_bytes(data)
        loaded = load_checkpoint(path)
        self.assertEqual((loaded.epoch, loaded.step), (1, 1))
        self.assertEqual(loaded.adam.t, 1)
        save_checkpoint(loaded, self.tmp / 'b.salc')
        self.assertEqual((self.tmp / 'b.salc').read_bytes(), data)

    def test_corrupted_tensor_names_the_tensor(self):
        data = bytearray(encode_checkpoint(self.result.checkpoint))
        name = b'decoder.d2.weight'
        start = data.index(name) + len(name) + 4 + 16
        data[start + 100] ^= 0x01
        with self.assertRaises(CheckpointIntegrityError) as ctx:
            decode_checkpoint(bytes(data))
        self.assertEqual(ctx.exception.block, 'decoder.d2.weight')

    def test_version_mismatch(self):
        data = encode_checkpoint(self.result.checkpoint)
        with self.assertRaises(CheckpointIntegrityError) as ctx:
            decode_checkpoint(data[:4] + b'\x02\x00\x00\x00' + data[8:])
        self.assertEqual(ctx.exception.block, 'version')

    def test_truncated(self):
        data = encode_checkpoint(self.result.checkpoint)
        with self.assertRaises(CheckpointIntegrityError):
            decode_checkpoint(data[:len(data) // 3])


class TrainerTestCase(TempDirMixin, SimpleTestCase):

    def test_metrics_rows(self):
        config = tiny_config(batch_size=1, epochs=2)
        result = Trainer(tiny_shapes(config), config, initial_params(config), self.tmp).run()
        rows = read_metrics(self.tmp / 'metrics.csv')
        self.assertEqual(len(rows), 4)
        self.assertEqual([r.step for r in rows], [1, 2, 3, 4])
        self.assertEqual([r.epoch for r in rows], [0, 0, 1, 1])
        self.assertTrue(all(r.lr > 0 for r in rows))
        self.assertEqual(len(result.history), 4)
        self.assertEqual(sorted(p.name for p in self.tmp.glob('*.salc')),
                         ['checkpoint-0001.salc', 'checkpoint-0002.salc', 'latest.salc'])

    def test_same_seed_same_checkpoint(self):
        config = tiny_config()
        for run in ('a', 'b'):
            Trainer(tiny_shapes(config), config, initial_params(config), self.tmp / run).run()
        self.assertEqual((self.tmp / 'a' / 'latest.salc').read_bytes(), (self.tmp / 'b' / 'latest.salc').read_bytes())

    def test_resume_matches_uninterrupted_run(self):
        config = tiny_config(batch_size=1, epochs=3)
        shapes = tiny_shapes(config)
        straight = Trainer(shapes, config, initial_params(config)).run().checkpoint

        first = tiny_config(batch_size=1, epochs=2)
        Trainer(shapes, first, initial_params(first), self.tmp).run()
        resumed = Trainer.from_checkpoint(load_checkpoint(self.tmp / 'latest.salc'), shapes, epochs=3).run()

        self.assertEqual(resumed.checkpoint.step, straight.step)
        for name in straight.params:
            np.testing.assert_array_equal(resumed.checkpoint.params[name].data, straight.params[name].data)

    def test_decoder_only_leaves_encoder_alone(self):
        config = tiny_config(decoder_only=True)
        shapes = tiny_shapes(config, count=1)
        params = initial_params(config)
        encoder = {name: t.data.copy() for name, t in params.subset('encoder.').items()}
        decoder = params['decoder.d1.weight'].data.copy()
        result = Trainer(shapes, config, params).run()
        for name, before in encoder.items():
            np.testing.assert_array_equal(params[name].data, before)
        self.assertFalse(np.array_equal(params['decoder.d1.weight'].data, decoder))
        self.assertTrue(all(row.kl == 0.0 for row in result.history))

    def test_non_finite_loss_aborts(self):
        config = tiny_config()
        broken = SampleSet('broken', np.zeros((48, 3)), np.zeros((4, 3)), [np.inf] * 4)
        with self.assertRaises(TrainingError) as ctx:
            Trainer([broken], config, initial_params(config)).run()
        self.assertEqual((ctx.exception.shape_id, ctx.exception.step), ('broken', 1))

    def test_no_shapes(self):
        with self.assertRaises(TrainingError):
            Trainer([], tiny_config(), initial_params(tiny_config()))

    def test_short_overfit_reduces_loss(self):
        config = Config.from_dict({
            'data': {'n_input': 16, 'n_near': 200, 'n_uniform': 100},
            'model': {'init': 'geometric-sphere', 'sphere_radius': 0.5},
            'train': {'points_per_shape': 128, 'lr0': 0.001},
        })
        soup, _, _ = normalize(icosphere(2))
        samples = generate_samples(soup, config.data, np.random.default_rng(0), 'sphere')
        result = overfit(samples, config, steps=30)
        self.assertEqual(len(result.history), 30)
        self.assertLess(result.final_sal(window=5), result.initial_sal)


class TrainCommandTestCase(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        config = tiny_config()
        entries = []
        for samples in tiny_shapes(config):
            archive = self.tmp / f'{samples.shape_id}.salf'
            write_archive(samples, archive)
            entries.append(ManifestEntry(Split.TRAIN, samples.shape_id, archive))
        entries.append(ManifestEntry(Split.TEST, 'held-out', self.tmp / 'missing.salf'))
        self.manifest = self.tmp / 'manifest.tsv'
        write_manifest(Manifest(entries), self.manifest)
        self.config = self.tmp / 'config.yaml'
        self.config.write_text(config.dump())

    def train(self, *extra):
        out = StringIO()
        call_command('train', '--manifest', str(self.manifest), '--config', str(self.config),
                     '--out', str(self.tmp / 'run'), *extra, stdout=out)
        return out.getvalue()

    def test_smoke_run(self):
        output = self.train()
        self.assertIn('encoder: 658,944 parameters', output)
        self.assertIn('(seed 0)', output)
        self.assertIn('epochs: 2, steps: 2', output)
        self.assertEqual(len(read_metrics(self.tmp / 'run' / 'metrics.csv')), 2)

    def test_resume_appends_metrics(self):
        self.train()
        output = self.train('--resume', str(self.tmp / 'run' / 'latest.salc'), '--epochs', '3')
        self.assertIn('resuming at epoch 2', output)
        self.assertEqual([r.step for r in read_metrics(self.tmp / 'run' / 'metrics.csv')], [1, 2, 3])

    def test_invalid_learning_rate(self):
        self.config.write_text('train:\n  lr0: 0\n')
        with self.assertRaises(CommandError) as ctx:
            self.train()
        self.assertEqual(ctx.exception.returncode, 2)
        self.assertFalse((self.tmp / 'run').exists())

    def test_unreadable_archive(self):
        self.manifest.write_text(self.manifest.read_text() + 'train\tlost\tlost.salf\n')
        with self.assertRaises(CommandError) as ctx:
            self.train()
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('lost', str(ctx.exception))


class TrainingGradcheckTestCase(SimpleTestCase):

    def test_total_loss_through_model(self):
        results = run_checks(['training'])
        self.assertTrue(results)
        self.assertTrue(all(r.passed for r in results), [(r.name, r.error) for r in results if not r.passed])


@unittest.skipUnless(settings.SLOW_TESTS, 'set SALFORGE_SLOW_TESTS=1 for desk-scale training runs')
class OverfitAcceptanceTestCase(SimpleTestCase):

    @staticmethod
    def config():
        return Config.from_dict({
            'model': {'init': 'geometric-sphere', 'sphere_radius': 0.5},
            'train': {'lr0': 0.0005, 'kl_weight': 0.001},
        })

    def test_icosphere_overfit(self):
        config = self.config()
        soup, _, _ = normalize(icosphere(3))
        samples = generate_samples(soup, config.data, seeding.stream(0, seeding.DATA, 'icosphere'), 'icosphere')
        result = overfit(samples, config, steps=2000)
        self.assertLess(result.final_sal(), 0.05 * result.initial_sal)
        self.assertLess(result.final_sal(), 0.5 * result.history[49].sal)

    def test_decoder_comparison(self):
        rows = {row.arch: row for row in compare_decoders(icosphere(3), steps=2000, config=self.config())}
        light, baseline = rows[Architecture.LIGHTSAL], rows[Architecture.SAL_BASELINE]
        self.assertLess(light.final_sal, 2 * baseline.final_sal)
        self.assertLess(light.decoder_params, 0.25 * baseline.decoder_params)
