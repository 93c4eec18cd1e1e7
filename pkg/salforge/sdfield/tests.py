from io import StringIO

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from salforge.autodiff.tensor import ContractError
from salforge.config import DataConfig
from salforge.geometry.distance import brute_force_distance
from salforge.geometry.mesh import Normalization, load_mesh, normalize, write_mesh
from salforge.geometry.shapes import icosphere, torus, two_triangle_soup
from salforge.geometry.tests import TempDirMixin
from salforge.sdfield.archive import ArchiveIntegrityError, decode_archive, encode_archive, read_archive, write_archive
from salforge.sdfield.manifest import Manifest, ManifestEntry, ManifestError, Split, load_manifest, write_manifest
from salforge.sdfield.preprocess import assign_split
from salforge.sdfield.samples import SampleSet, generate_samples

SMALL_DATA = DataConfig(n_input=64, n_near=100, n_uniform=50)


def _samples(config=SMALL_DATA, seed=0):
    soup, _, _ = normalize(icosphere(2))
    return soup, generate_samples(soup, config, np.random.default_rng(seed), 'sphere')


class GenerateSamplesTestCase(SimpleTestCase):

    def test_counts_and_dtype(self):
        _, samples = _samples()
        self.assertEqual((samples.n_input, samples.n_queries), (64, 250))
        self.assertEqual(samples.queries.dtype, np.float32)

    def test_distance_bounds(self):
        _, samples = _samples()
        self.assertTrue((samples.h >= 0).all())
        self.assertTrue((samples.h <= np.linalg.norm(samples.queries, axis=1) + 1 + 1e-6).all())

    def test_matches_brute_force(self):
        soup, samples = _samples()
        expected, _, _ = brute_force_distance(soup, samples.queries.astype(np.float64))
        np.testing.assert_allclose(samples.h, expected, atol=1e-6)

    def test_zero_sigma_queries_lie_on_surface(self):
        _, samples = _samples(DataConfig(n_input=16, n_near=50, n_uniform=10, sigma_small=0.0))
        np.testing.assert_allclose(samples.h[:50], 0.0, atol=1e-6)

    def test_uniform_queries_inside_the_cube(self):
        _, samples = _samples()
        self.assertTrue((np.abs(samples.queries[200:]) <= 1.1 + 1e-6).all())

    def test_negative_distance_rejected(self):
        with self.assertRaises(ContractError):
            SampleSet('bad', np.zeros((1, 3)), np.zeros((1, 3)), [-1.0])


class ArchiveTestCase(TempDirMixin, SimpleTestCase):

    def test_round_trip_is_byte_identical(self):
        for seed in range(3):
            _, samples = _samples(seed=seed)
            path = self.tmp / f'{seed}.salf'
            write_archive(samples, path)
            loaded = read_archive(path)
            self.assertEqual(loaded.shape_id, 'sphere')
            np.testing.assert_array_equal(loaded.h, samples.h)
            self.assertEqual(encode_archive(loaded), path.read_bytes())

    def test_truncated_archive(self):
        _, samples = _samples()
        data = encode_archive(samples)
        for cut in (3, 20, len(data) // 2, len(data) - 1):
            with self.assertRaises(ArchiveIntegrityError):
                decode_archive(data[:cut])

    def test_flipped_byte_fails_checksum(self):
        _, samples = _samples()
        data = bytearray(encode_archive(samples))
        data[len(data) // 2] ^= 0x40
        with self.assertRaises(ArchiveIntegrityError) as ctx:
            decode_archive(bytes(data))
        self.assertEqual(ctx.exception.field, 'crc')

    def test_bad_magic_and_version(self):
        _, samples = _samples()
        data = encode_archive(samples)
        with self.assertRaises(ArchiveIntegrityError) as ctx:
            decode_archive(b'XALF' + data[4:])
        self.assertEqual(ctx.exception.field, 'magic')
        with self.assertRaises(ArchiveIntegrityError) as ctx:
            decode_archive(data[:4] + b'\x07\x00\x00\x00' + data[8:])
        self.assertEqual(ctx.exception.field, 'version')


class ManifestTestCase(TempDirMixin, SimpleTestCase):

    def write(self, text):
        path = self.tmp / 'manifest.tsv'
        path.write_text(text)
        return path

    def test_entries_in_order(self):
        manifest = load_manifest(self.write('train\ta\ta.salf\ntest\tb\tb.salf\ntrain\tc\tsub/c.salf\n'))
        self.assertEqual(manifest.ids(), ['a', 'b', 'c'])
        self.assertEqual([e.shape_id for e in manifest.split(Split.TRAIN)], ['a', 'c'])
        self.assertEqual(manifest.entries[2].archive, self.tmp / 'sub' / 'c.salf')
        self.assertEqual(manifest.entries[2].mesh, self.tmp / 'sub' / 'c.ply')

    def test_comments_and_blank_lines(self):
        manifest = load_manifest(self.write('# header\n\ntrain\ta\ta.salf\n   \n# done\n'))
        self.assertEqual(len(manifest), 1)

    def test_duplicate_id(self):
        with self.assertRaises(ManifestError) as ctx:
            load_manifest(self.write('train\ta\ta.salf\ntest\ta\tb.salf\n'))
        self.assertIn("'a'", str(ctx.exception))
        self.assertEqual(ctx.exception.line, 2)

    def test_malformed_line(self):
        with self.assertRaises(ManifestError) as ctx:
            load_manifest(self.write('train\ta\ta.salf\ntrain b b.salf\n'))
        self.assertEqual(ctx.exception.line, 2)

    def test_unknown_split(self):
        with self.assertRaises(ManifestError):
            load_manifest(self.write('validation\ta\ta.salf\n'))

    def test_optional_columns(self):
        manifest = load_manifest(self.write('test\ta\ta.salf\tscans/a.obj\tregs/a.ply\n'))
        entry = manifest.entries[0]
        self.assertEqual((entry.mesh, entry.registration), (self.tmp / 'scans/a.obj', self.tmp / 'regs/a.ply'))

    def test_write_then_load(self):
        manifest = Manifest([
            ManifestEntry(Split.TRAIN, 'a', self.tmp / 'a.salf'),
            ManifestEntry(Split.TEST, 'b', self.tmp / 'b.salf', self.tmp / 'b.obj', self.tmp / 'b-reg.ply'),
        ])
        path = self.tmp / 'out.tsv'
        write_manifest(manifest, path)
        self.assertTrue(path.read_text().startswith('train\ta\ta.salf\ta.ply\n'))
        loaded = load_manifest(path)
        self.assertEqual(loaded.ids(), ['a', 'b'])
        self.assertEqual(loaded.entries[1].registration.name, 'b-reg.ply')


class PreprocessCommandTestCase(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        self.meshes = self.tmp / 'meshes'
        self.meshes.mkdir()
        self.out = self.tmp / 'out'
        write_mesh(icosphere(1), self.meshes / 'sphere.ply')
        write_mesh(torus(n_major=12, n_minor=6), self.meshes / 'torus.obj')
        write_mesh(two_triangle_soup(), self.meshes / 'planes.ply', binary=False)
        self.config = self.tmp / 'config.yaml'
        self.config.write_text('data:\n  n_input: 32\n  n_near: 40\n  n_uniform: 20\n')

    def preprocess(self, *extra):
        out = StringIO()
        call_command('preprocess', '--mesh-dir', str(self.meshes), '--out-dir', str(self.out),
                     '--config', str(self.config), '--workers', '2', *extra, stdout=out)
        return out.getvalue()

    def test_archives_and_manifest(self):
        output = self.preprocess()
        self.assertIn('written: 3', output)
        self.assertIn('(seed 0)', output)
        manifest = load_manifest(self.out / 'manifest.tsv')
        self.assertEqual(manifest.ids(), ['planes', 'sphere', 'torus'])
        for entry in manifest:
            samples = read_archive(entry.archive)
            self.assertEqual((samples.shape_id, samples.n_input, samples.n_queries), (entry.shape_id, 32, 100))
            self.assertIsNotNone(Normalization.from_comments(load_mesh(entry.mesh).comments))

    def test_rerun_skips_up_to_date_archives(self):
        self.preprocess()
        before = {p.name: p.stat().st_mtime_ns for p in self.out.glob('*.salf')}
        output = self.preprocess()
        self.assertIn('skipped: 3', output)
        self.assertEqual({p.name: p.stat().st_mtime_ns for p in self.out.glob('*.salf')}, before)

    def test_seed_change_invalidates(self):
        self.preprocess()
        self.assertIn('written: 3', self.preprocess('--seed', '5'))

    def test_deterministic_archives(self):
        self.preprocess()
        first = (self.out / 'torus.salf').read_bytes()
        (self.out / 'torus.salf.sha256').unlink()
        self.preprocess()
        self.assertEqual((self.out / 'torus.salf').read_bytes(), first)

    def test_unreadable_mesh_fails_but_others_continue(self):
        (self.meshes / 'broken.obj').write_text('v 0 0 0\nf 1 2 3\n')
        with self.assertRaises(CommandError) as ctx:
            self.preprocess()
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn('broken', str(ctx.exception))
        self.assertEqual(load_manifest(self.out / 'manifest.tsv').ids(), ['planes', 'sphere', 'torus'])

    def test_bad_config_is_a_usage_error(self):
        self.config.write_text('data:\n  n_input: 0\n')
        with self.assertRaises(CommandError) as ctx:
            self.preprocess()
        self.assertEqual(ctx.exception.returncode, 2)

    def test_split_assignment(self):
        ids = [f'shape-{i}' for i in range(400)]
        self.assertEqual({assign_split(i, 0.0) for i in ids}, {Split.TRAIN})
        held_out = [i for i in ids if assign_split(i, 0.25) == Split.TEST]
        self.assertTrue(50 < len(held_out) < 150)
        self.assertEqual(held_out, [i for i in ids if assign_split(i, 0.25) == Split.TEST])
