import csv
import math
import unittest
from io import StringIO

import numpy as np
from django.conf import settings
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from salforge import seeding
from salforge.autodiff.tensor import ContractError, Tensor
from salforge.config import Config, ReconstructConfig
from salforge.geometry.chamfer import REPORT_SCALE, chamfer
from salforge.geometry.mesh import Normalization, PointCloud, load_mesh, normalize, write_mesh
from salforge.geometry.sampling import sample_surface
from salforge.geometry.shapes import icosphere
from salforge.geometry.tests import TempDirMixin
from salforge.nn.architectures import LATENT_DIM, get_model
from salforge.nn.init import init_params
from salforge.nn.params import Architecture, InitScheme
from salforge.reconstruct.evaluation import (
    EvaluationError, Reference, ShapeScore, evaluate, percentile, summarize, surface_chamfer, write_report,
)
from salforge.reconstruct.grid import ScalarGrid, evaluate_field, evaluate_grid, lattice_axis
from salforge.reconstruct.inference import Reconstructor, reconstruct
from salforge.reconstruct.marching_cubes import extract_surface, marching_cubes, nudged
from salforge.reconstruct.tables import EDGE_MASKS, TRIANGLES
from salforge.sdfield.manifest import Manifest, ManifestEntry, Split, write_manifest
from salforge.sdfield.samples import generate_samples
from salforge.training.checkpoint import Checkpoint, save_checkpoint
from salforge.training.optim import AdamState
from salforge.training.trainer import overfit


def sphere_field(points):
    return np.linalg.norm(points, axis=1) - 0.5


def sphere_checkpoint(decoder_only=True, **reconstruct) -> Checkpoint:
    """Untrained checkpoint whose decoder starts near the unit sphere for z = 0."""
    config = Config.from_dict({
        'model': {'init': 'geometric-sphere'},
        'train': {'decoder_only': decoder_only},
        'reconstruct': {'input_points': 256, 'chamfer_samples': 2000, **reconstruct},
    })
    params = init_params(Architecture.LIGHTSAL, InitScheme.GEOMETRIC_SPHERE, seed=0)
    trainable = params.subset('decoder.') if decoder_only else params
    return Checkpoint(config, 0, 0, params, AdamState.for_params(trainable))


def unit_sphere_points(n, seed=0):
    points = np.random.default_rng(seed).standard_normal((n, 3))
    return points / np.linalg.norm(points, axis=1, keepdims=True)


class GridTestCase(SimpleTestCase):

    def test_values_are_x_fastest(self):
        grid = evaluate_field(lambda p: p[:, 0] + 10 * p[:, 1] + 100 * p[:, 2], resolution=5, bound=1.0)
        axis = lattice_axis(5, 1.0)
        self.assertEqual(grid.values[3, 1, 4], axis[4] + 10 * axis[1] + 100 * axis[3])
        self.assertEqual(grid.values.reshape(-1)[1], axis[1] + 10 * axis[0] + 100 * axis[0])

    def test_analytic_field_matches_formula(self):
        grid = evaluate_field(lambda p: p[:, 2] - 0.1, resolution=9)
        axis = lattice_axis(9, 1.1)
        for k in range(9):
            self.assertTrue((grid.values[k] == axis[k] - 0.1).all())

    def test_resolution_two_samples_the_corners(self):
        grid = evaluate_field(lambda p: np.abs(p).sum(axis=1), resolution=2)
        self.assertEqual(grid.values.size, 8)
        np.testing.assert_allclose(grid.values, 3.3)
        self.assertEqual({tuple(p) for p in np.abs(grid.points())}, {(1.1, 1.1, 1.1)})

    def test_cell_size(self):
        grid = evaluate_field(sphere_field, resolution=12)
        self.assertAlmostEqual(grid.cell_size, 2.2 / 11)
        self.assertEqual(ReconstructConfig().resolution, 100)

    def test_invalid_grids(self):
        with self.assertRaises(ContractError):
            evaluate_field(sphere_field, resolution=1)
        with self.assertRaises(ContractError):
            ScalarGrid(3, 1.0, np.zeros((3, 3, 2)))
        with self.assertRaises(ContractError):
            ScalarGrid(2, 1.0, np.full((2, 2, 2), np.nan))

    def test_slab_partition_does_not_change_values(self):
        reference = evaluate_field(sphere_field, resolution=17, slab_size=17).values
        for slab_size, workers in ((1, 1), (3, 1), (5, 3), (8, 4)):
            values = evaluate_field(sphere_field, resolution=17, slab_size=slab_size, workers=workers).values
            np.testing.assert_array_equal(values, reference)

    def test_decoder_grid_slabs(self):
        params = init_params(Architecture.LIGHTSAL, InitScheme.GEOMETRIC_SPHERE, seed=0)
        z = Tensor(np.zeros(LATENT_DIM))
        whole = evaluate_grid(params, z, resolution=6, slab_size=6)
        sliced = evaluate_grid(params, z, resolution=6, slab_size=1, workers=2)
        np.testing.assert_allclose(sliced.values, whole.values, rtol=1e-5, atol=1e-6)
        self.assertGreater(whole.values[0, 0, 0], 0)


class MarchingCubesTestCase(SimpleTestCase):

    def test_every_case_uses_exactly_its_crossing_edges(self):
        self.assertEqual(len(TRIANGLES), 256)
        for case, edges in enumerate(TRIANGLES):
            self.assertEqual(len(edges) % 3, 0, case)
            crossing = {e for e in range(12) if int(EDGE_MASKS[case]) >> e & 1}
            self.assertEqual(set(edges), crossing, case)

    def test_all_positive_field_is_empty(self):
        soup = marching_cubes(evaluate_field(lambda p: np.ones(len(p)), resolution=8))
        self.assertEqual((len(soup), len(soup.vertices)), (0, 0))

    def test_plane_vertices_lie_on_the_plane(self):
        soup = marching_cubes(evaluate_field(lambda p: p[:, 2] - 0.1, resolution=16))
        self.assertGreater(len(soup), 0)
        self.assertLess(np.abs(soup.vertices[:, 2] - 0.1).max(), 1e-6)

    def test_sphere_radius_error_is_within_a_cell(self):
        grid = evaluate_field(sphere_field, resolution=64)
        soup = marching_cubes(grid)
        self.assertGreater(len(soup), 1000)
        self.assertTrue(np.isfinite(soup.vertices).all())
        radius = np.linalg.norm(soup.vertices, axis=1)
        limit = math.sqrt(3) * grid.cell_size
        self.assertLessEqual(np.abs(radius - 0.5).max(), limit)

    def test_sphere_is_a_closed_surface(self):
        soup = marching_cubes(evaluate_field(sphere_field, resolution=24))
        edges = np.sort(soup.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        unique, counts = np.unique(edges, axis=0, return_counts=True)
        self.assertTrue((counts == 2).all())
        self.assertEqual(len(soup.vertices) - len(unique) + len(soup), 2)

    def test_vertices_sit_on_straddling_edges(self):
        def wavy(p):
            return np.sin(3 * p[:, 0]) * np.cos(2 * p[:, 1]) + p[:, 2] ** 2 - 0.2

        grid = evaluate_field(wavy, resolution=20)
        surface = extract_surface(grid)
        self.assertGreater(len(surface.soup), 0)
        starts, axes = surface.edge_start, surface.edge_axis
        ends = starts + np.eye(3, dtype=np.int64)[axes]
        a = surface.values[starts[:, 2], starts[:, 1], starts[:, 0]]
        b = surface.values[ends[:, 2], ends[:, 1], ends[:, 0]]
        self.assertTrue(((a < 0) != (b < 0)).all())

        lower, upper = grid.axis[starts], grid.axis[ends]
        vertices = surface.soup.vertices
        self.assertTrue((vertices >= lower - 1e-12).all() and (vertices <= upper + 1e-12).all())
        self.assertTrue((np.abs(surface.soup.vertices) <= grid.bound + grid.cell_size).all())

    def test_exact_zeros_are_nudged(self):
        values = np.zeros((3, 3, 3))
        values[0], values[2] = -1.0, 1.0
        np.testing.assert_array_equal(nudged(values)[1], 1e-6)
        self.assertTrue((nudged(np.zeros(4)) == 1e-6).all())

        grid = ScalarGrid(3, 1.0, values)
        soup = marching_cubes(grid)
        self.assertGreater(len(soup), 0)
        self.assertLess(np.abs(soup.vertices[:, 2]).max(), 1e-5)
        self.assertFalse(soup.degenerate.any())


class InferenceTestCase(SimpleTestCase):

    def test_geometric_init_reconstructs_a_sphere(self):
        checkpoint = sphere_checkpoint()
        result = reconstruct(checkpoint, icosphere(2), resolution=32)
        self.assertGreater(len(result.soup), 0)
        np.testing.assert_array_equal(result.latent, 0.0)

        cell = 2.2 / 31
        rng = np.random.default_rng(1)
        distance = chamfer(sample_surface(result.soup, 5000, rng), unit_sphere_points(5000))
        self.assertLess(distance, 2 * cell)

    def test_same_scan_same_mesh(self):
        checkpoint = sphere_checkpoint(decoder_only=False)
        scan = icosphere(2)
        first = reconstruct(checkpoint, scan, resolution=12)
        second = reconstruct(checkpoint, scan, resolution=12)
        np.testing.assert_array_equal(first.latent, second.latent)
        np.testing.assert_array_equal(first.soup.vertices, second.soup.vertices)
        np.testing.assert_array_equal(first.soup.triangles, second.soup.triangles)

    def test_mean_latent_at_inference(self):
        checkpoint = sphere_checkpoint(decoder_only=False)
        reconstructor = Reconstructor(checkpoint)
        scan = icosphere(2)
        mu, _ = get_model(Architecture.LIGHTSAL).encode(
            checkpoint.params, Tensor(reconstructor.input_points(scan, 'input').T))
        np.testing.assert_array_equal(reconstructor.latent(scan).data, mu.data)

    def test_point_cloud_scan_and_transform(self):
        checkpoint = sphere_checkpoint()
        cloud = PointCloud(unit_sphere_points(500) * 3.0 + [1.0, 2.0, 3.0])
        result = reconstruct(checkpoint, cloud, resolution=8)
        self.assertAlmostEqual(result.normalization.scale, 3.0, delta=0.15)
        self.assertIn('seed 0', result.comments(0))
        self.assertIsNotNone(Normalization.from_comments(result.comments(0)))

    def test_default_resolution(self):
        self.assertEqual(Reconstructor(sphere_checkpoint()).resolution, 100)
        self.assertEqual(Reconstructor(sphere_checkpoint(), resolution=20).resolution, 20)


class PercentileTestCase(SimpleTestCase):

    def test_linear_interpolation(self):
        self.assertEqual(percentile(np.arange(1, 101), 50), 50.5)
        values = np.random.default_rng(3).exponential(size=37)
        for p in (5, 50, 95):
            self.assertAlmostEqual(percentile(values, p), np.percentile(values, p))

    def test_single_value(self):
        scores = [ShapeScore(Split.TEST, 'only', Reference.SCANS, 4.2)]
        rows = summarize(scores, Split.TEST)
        self.assertEqual([r.percentile for r in rows], [5, 50, 95])
        self.assertEqual({r.value for r in rows}, {4.2})

    def test_ordering_and_infinity(self):
        values = [3.0, math.inf, 1.0, 2.0]
        ordered = [percentile(values, p) for p in (5, 50, 95)]
        self.assertEqual(ordered, sorted(ordered))
        self.assertEqual(percentile([1.0, math.inf], 100), math.inf)
        self.assertEqual(percentile([math.inf, math.inf], 50), math.inf)
        with self.assertRaises(EvaluationError):
            percentile([], 50)

    def test_surface_against_itself(self):
        soup = icosphere(3, radius=0.5)
        value = surface_chamfer(soup, soup, 30000, np.random.default_rng(0))
        self.assertLess(value, 10.0)
        empty = marching_cubes(evaluate_field(lambda p: np.ones(len(p)), resolution=4))
        self.assertEqual(surface_chamfer(empty, soup, 100, np.random.default_rng(0)), math.inf)


class EvaluateTestCase(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        raw = icosphere(2, radius=2.0)
        soup, center, scale = normalize(raw)
        self.mesh = self.tmp / 'sphere.ply'
        write_mesh(soup, self.mesh, comments=Normalization(center, scale).comments())
        self.registration = self.tmp / 'sphere-registration.obj'
        write_mesh(raw, self.registration)
        entries = [
            ManifestEntry(Split.TEST, 'sphere', self.tmp / 'sphere.salf', self.mesh, self.registration),
            ManifestEntry(Split.TRAIN, 'other', self.tmp / 'other.salf', self.mesh),
        ]
        self.manifest = Manifest(entries)
        self.manifest_path = self.tmp / 'manifest.tsv'
        write_manifest(self.manifest, self.manifest_path)
        self.checkpoint_path = self.tmp / 'sphere.salc'
        save_checkpoint(sphere_checkpoint(), self.checkpoint_path)

    def test_single_shape_split(self):
        report = evaluate(sphere_checkpoint(), self.manifest, Split.TEST, resolution=20)
        self.assertEqual(len(report.scores), 2)
        for reference in (Reference.SCANS, Reference.REGISTRATIONS):
            values = [report.row(reference, p).value for p in (5, 50, 95)]
            self.assertEqual(len(set(values)), 1)
            self.assertTrue(math.isfinite(values[0]))
            self.assertLess(values[0], 2e3 * 2.2 / 19)

    def test_empty_reconstruction_counts_as_infinite(self):
        checkpoint = sphere_checkpoint()
        decoder = get_model(Architecture.LIGHTSAL).decoder
        checkpoint.params[decoder.final.bias_name].data[:] = 100.0
        with self.assertLogs(level='WARNING'):
            report = evaluate(checkpoint, self.manifest, Split.TEST, resolution=8)
        self.assertEqual(report.row(Reference.SCANS, 50).value, math.inf)

    def test_empty_split(self):
        manifest = Manifest(self.manifest.split(Split.TRAIN))
        with self.assertRaises(EvaluationError):
            evaluate(sphere_checkpoint(), manifest, Split.TEST)

    def test_report_layout(self):
        report = evaluate(sphere_checkpoint(), self.manifest, Split.TEST, resolution=12, workers=2)
        path = write_report(report, self.tmp / 'report.csv')
        lines = path.read_text().splitlines()
        self.assertEqual(lines[0], 'split,shape,chamfer_x1e3')
        self.assertTrue(lines[1].startswith('test,sphere,'))
        self.assertIn('# registrations', lines)
        summary = list(csv.reader(lines[lines.index('# summary') + 1:]))
        self.assertEqual(summary[0], ['split', 'reference', 'percentile', 'chamfer_x1e3'])
        self.assertEqual([row[2] for row in summary[1:]], ['5', '50', '95', '5', '50', '95'])

    def test_reconstruct_command(self):
        out = StringIO()
        target = self.tmp / 'out.ply'
        call_command('reconstruct', '--checkpoint', str(self.checkpoint_path), '--input', str(self.mesh),
                     '--out', str(target), '--resolution', '16', stdout=out)
        self.assertIn('(seed 0)', out.getvalue())
        self.assertIn('R=16', out.getvalue())
        soup = load_mesh(target)
        self.assertGreater(len(soup), 0)
        self.assertIn('seed 0', soup.comments)
        self.assertIsNotNone(Normalization.from_comments(soup.comments))

    def test_reconstruct_command_seed(self):
        out = StringIO()
        call_command('reconstruct', '--checkpoint', str(self.checkpoint_path), '--input', str(self.mesh),
                     '--out', str(self.tmp / 'out.obj'), '--resolution', '6', '--seed', '7', stdout=out)
        self.assertIn('(seed 7)', out.getvalue())
        self.assertIn('seed 7', load_mesh(self.tmp / 'out.obj').comments)

    def test_missing_checkpoint(self):
        missing = self.tmp / 'nowhere.salc'
        with self.assertRaises(CommandError) as ctx:
            call_command('reconstruct', '--checkpoint', str(missing), '--input', str(self.mesh),
                         '--out', str(self.tmp / 'out.ply'), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)
        self.assertIn(str(missing), str(ctx.exception))

    def test_invalid_resolution(self):
        with self.assertRaises(CommandError) as ctx:
            call_command('reconstruct', '--checkpoint', str(self.checkpoint_path), '--input', str(self.mesh),
                         '--out', str(self.tmp / 'out.ply'), '--resolution', '1', stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 2)

    def test_eval_command(self):
        out = StringIO()
        report = self.tmp / 'report.csv'
        call_command('eval', '--checkpoint', str(self.checkpoint_path), '--manifest', str(self.manifest_path),
                     '--out', str(report), '--resolution', '12', stdout=out)
        output = out.getvalue()
        self.assertIn('(seed 0)', output)
        self.assertIn('test scans p50', output)
        self.assertTrue(report.exists())

    def test_eval_command_empty_split(self):
        manifest = self.tmp / 'train-only.tsv'
        write_manifest(Manifest(self.manifest.split(Split.TRAIN)), manifest)
        with self.assertRaises(CommandError) as ctx:
            call_command('eval', '--checkpoint', str(self.checkpoint_path), '--manifest', str(manifest),
                         '--out', str(self.tmp / 'report.csv'), stdout=StringIO())
        self.assertEqual(ctx.exception.returncode, 1)


@unittest.skipUnless(settings.SLOW_TESTS, 'set SALFORGE_SLOW_TESTS=1 for desk-scale training runs')
class OverfitReconstructionTestCase(SimpleTestCase):

    def test_overfit_icosphere_is_reconstructed(self):
        config = Config.from_dict({
            'model': {'init': 'geometric-sphere', 'sphere_radius': 0.5},
            'train': {'lr0': 0.0005, 'kl_weight': 0.001},
        })
        soup, _, _ = normalize(icosphere(3))
        samples = generate_samples(soup, config.data, seeding.stream(0, seeding.DATA, 'icosphere'), 'icosphere')
        checkpoint = overfit(samples, config, steps=2000).checkpoint

        result = reconstruct(checkpoint, soup, resolution=100)
        rng = np.random.default_rng(0)
        value = chamfer(sample_surface(result.soup, 30000, rng), sample_surface(soup, 30000, rng)) * REPORT_SCALE
        self.assertLess(value, 20.0)
