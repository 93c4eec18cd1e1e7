import os
import tempfile
from io import StringIO
from unittest import mock

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from salforge import seeding
from salforge.commands import worker_count
from salforge.config import Config, ConfigError, load_config


class ConfigTestCase(SimpleTestCase):

    def test_defaults(self):
        config = Config().validate()
        self.assertEqual(config.train.lr0, 0.0005)
        self.assertEqual(config.train.batch_size, 16)
        self.assertEqual(config.train.epochs, 500)
        self.assertEqual(config.train.schedule_period, 200)
        self.assertEqual(config.reconstruct.resolution, 100)
        self.assertEqual(config.data.n_input, 128 ** 2)

    def test_dump_round_trip(self):
        config = Config.from_dict({'model': {'arch': 'sal-baseline'}, 'train': {'lr0': 1, 'decoder_only': True}})
        self.assertEqual(config.train.lr0, 1.0)
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, 'config.yaml')
            with open(path, 'w') as f:
                f.write(config.dump())
            loaded = load_config(path)
        self.assertEqual(loaded.as_dict(), config.as_dict())
        self.assertEqual(loaded.dump(), config.dump())

    def test_rejections(self):
        bad = [
            {'optimizer': {}},
            {'train': {'momentum': 0.9}},
            {'train': {'lr0': 0}},
            {'train': {'batch_size': 'sixteen'}},
            {'train': {'epochs': 2.5}},
            {'train': {'decoder_only': 1}},
            {'train': {'schedule_factor': 1.5}},
            {'model': {'arch': 'pointnet'}},
            {'reconstruct': {'resolution': 1}},
            {'data': {'test_fraction': 1.0}},
            ['train'],
        ]
        for data in bad:
            with self.assertRaises(ConfigError, msg=data):
                Config.from_dict(data)

    def test_unreadable_files(self):
        with tempfile.TemporaryDirectory() as tmp:
            with self.assertRaises(ConfigError):
                load_config(os.path.join(tmp, 'missing.yaml'))
            path = os.path.join(tmp, 'broken.yaml')
            with open(path, 'w') as f:
                f.write('train: [unclosed\n')
            with self.assertRaises(ConfigError):
                load_config(path)


class SeedingTestCase(SimpleTestCase):

    def test_streams_are_reproducible(self):
        a = seeding.stream(7, seeding.DATA, 'shape').random(5)
        b = seeding.stream(7, seeding.DATA, 'shape').random(5)
        np.testing.assert_array_equal(a, b)

    def test_streams_are_independent(self):
        draws = {
            (seed, name, key): seeding.stream(seed, name, key).random()
            for seed in (0, 1) for name in (seeding.DATA, seeding.INIT, seeding.LATENT) for key in ('a', 'b')
        }
        self.assertEqual(len(set(draws.values())), len(draws))


class WorkerCountTestCase(SimpleTestCase):

    def test_resolution_order(self):
        with mock.patch.dict(os.environ, {'SALFORGE_THREADS': '3'}):
            self.assertEqual(worker_count(2, 5), 2)
            self.assertEqual(worker_count(None, 5), 3)
        with mock.patch.dict(os.environ, {'SALFORGE_THREADS': ''}):
            self.assertEqual(worker_count(None, 5), 5)
        with self.assertRaises(ConfigError):
            worker_count(0)

    def test_non_integer_environment_value(self):
        with mock.patch.dict(os.environ, {'SALFORGE_THREADS': 'many'}):
            with self.assertRaises(ConfigError):
                worker_count(None, 4)
            self.assertEqual(worker_count(2, 4), 2)

    def test_non_integer_environment_value_exits_2(self):
        with tempfile.TemporaryDirectory() as tmp, mock.patch.dict(os.environ, {'SALFORGE_THREADS': 'many'}):
            with self.assertRaises(CommandError) as ctx:
                call_command('preprocess', '--mesh-dir', tmp, '--out-dir', tmp, stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)
