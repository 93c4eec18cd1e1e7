import math
import pathlib
import tempfile
from io import StringIO

import numpy as np
from django.core.management import call_command
from django.test import SimpleTestCase

from salforge.autodiff.tensor import ContractError
from salforge.geometry.bvh import Bvh, unsigned_distance
from salforge.geometry.chamfer import chamfer
from salforge.geometry.distance import brute_force_distance, point_triangle_distance
from salforge.geometry.mesh import (
    MeshParseError, Normalization, PointCloud, TriangleSoup, load_mesh, normalize, write_mesh,
)
from salforge.geometry.sampling import sample_surface, sample_triangles
from salforge.geometry.shapes import icosphere, punch_holes, torus, two_triangle_soup


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = pathlib.Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class MeshIOTestCase(TempDirMixin, SimpleTestCase):

    def write(self, name, text):
        path = self.tmp / name
        path.write_text(text)
        return path

    def test_obj_single_triangle(self):
        soup = load_mesh(self.write('t.obj', 'v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n'))
        self.assertEqual((len(soup.vertices), len(soup.triangles)), (3, 1))

    def test_obj_quad_is_fan_triangulated(self):
        soup = load_mesh(self.write('q.obj', 'v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n'))
        np.testing.assert_array_equal(soup.triangles, [[0, 1, 2], [0, 2, 3]])

    def test_obj_index_zero(self):
        path = self.write('bad.obj', 'v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n')
        with self.assertRaises(MeshParseError) as ctx:
            load_mesh(path)
        self.assertEqual(ctx.exception.line, 4)

    def test_obj_unsupported_statement(self):
        with self.assertRaises(MeshParseError):
            load_mesh(self.write('curve.obj', 'v 0 0 0\ncurv 0 1 1\n'))

    def test_ply_unsupported_element(self):
        text = ('ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n'
                'property float z\nelement edge 0\nproperty int vertex1\nend_header\n0 0 0\n')
        with self.assertRaises(MeshParseError):
            load_mesh(self.write('edge.ply', text))

    def test_ply_big_endian_rejected(self):
        with self.assertRaises(MeshParseError):
            load_mesh(self.write('be.ply', 'ply\nformat binary_big_endian 1.0\nend_header\n'))

    def test_ascii_ply_with_quad(self):
        text = ('ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 4\nproperty float x\n'
                'property float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\n'
                'end_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n')
        soup = load_mesh(self.write('quad.ply', text))
        self.assertEqual(len(soup), 2)
        self.assertEqual(soup.comments, ('made by hand',))

    def test_truncated_binary_ply(self):
        path = self.tmp / 'sphere.ply'
        write_mesh(icosphere(1), path)
        path.write_bytes(path.read_bytes()[:-20])
        with self.assertRaises(MeshParseError):
            load_mesh(path)

    def test_writers_load_back(self):
        soup = torus(n_major=8, n_minor=6)
        for name, binary in (('t.ply', True), ('t_ascii.ply', False), ('t.obj', True)):
            path = self.tmp / name
            write_mesh(soup, path, comments=['center 0.5 0.25 -1.0', 'scale 2.0'], binary=binary)
            loaded = load_mesh(path)
            np.testing.assert_array_equal(loaded.triangles, soup.triangles)
            np.testing.assert_array_equal(loaded.vertices, soup.vertices)
            transform = Normalization.from_comments(loaded.comments)
            np.testing.assert_array_equal(transform.center, [0.5, 0.25, -1.0])
            self.assertEqual(transform.scale, 2.0)


class PointTriangleDistanceTestCase(SimpleTestCase):
    triangle = [[0, 0, 0], [1, 0, 0], [0, 1, 0]]

    def test_point_above_vertex(self):
        d, q = point_triangle_distance([0, 0, 5], self.triangle)
        self.assertEqual(d, 5)
        np.testing.assert_array_equal(q, [0, 0, 0])

    def test_vertex_region(self):
        d, q = point_triangle_distance([2, 0, 0], self.triangle)
        self.assertEqual(d, 1)
        np.testing.assert_array_equal(q, [1, 0, 0])

    def test_edge_region(self):
        d, q = point_triangle_distance([1, 1, 0], self.triangle)
        self.assertAlmostEqual(d, math.sqrt(0.5), places=12)
        np.testing.assert_allclose(q, [0.5, 0.5, 0])

    def test_face_interior(self):
        d, q = point_triangle_distance([0.2, 0.3, -2], self.triangle)
        self.assertAlmostEqual(d, 2.0, places=12)
        np.testing.assert_allclose(q, [0.2, 0.3, 0])

    def test_degenerate_triangle_is_a_segment(self):
        d, q = point_triangle_distance([0.5, 1, 0], [[0, 0, 0], [1, 0, 0], [0.5, 0, 0]])
        self.assertAlmostEqual(d, 1.0, places=12)
        np.testing.assert_allclose(q, [0.5, 0, 0])

    def test_matches_dense_sampling(self):
        rng = np.random.default_rng(0)
        r1, r2 = rng.random(200000), rng.random(200000)
        s = np.sqrt(r1)[:, None]
        a, b, c = (np.array(v, dtype=float) for v in self.triangle)
        samples = (1 - s) * a + s * (1 - r2[:, None]) * b + s * r2[:, None] * c
        p = np.array([1.0, 1.0, 0.0])
        d, _ = point_triangle_distance(p, self.triangle)
        self.assertLessEqual(d, np.linalg.norm(samples - p, axis=1).min() + 1e-12)


class BvhTestCase(SimpleTestCase):

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for soup in (icosphere(3), torus(), two_triangle_soup()):
            queries = rng.uniform(-1.5, 1.5, size=(1000, 3))
            d, q, index = unsigned_distance(Bvh(soup), soup, queries)
            expected, _, _ = brute_force_distance(soup, queries)
            np.testing.assert_allclose(d, expected, rtol=0, atol=1e-6)
            np.testing.assert_allclose(np.linalg.norm(queries - q, axis=1), d, atol=1e-9)

    def test_every_triangle_in_exactly_one_leaf(self):
        soup = torus()
        bvh = Bvh(soup)
        members = np.concatenate([bvh.leaf_triangles(node) for node in bvh.leaves])
        np.testing.assert_array_equal(np.sort(members), np.arange(len(soup)))
        self.assertLessEqual(max(len(bvh.leaf_triangles(node)) for node in bvh.leaves), 4)

    def test_query_on_vertex(self):
        soup = torus()
        d, _, _ = unsigned_distance(Bvh(soup), soup, soup.vertices[17])
        self.assertEqual(d, 0.0)

    def test_icosphere_centre(self):
        soup = icosphere(3)
        d, _, _ = unsigned_distance(Bvh(soup), soup, np.zeros(3))
        self.assertTrue(0.99 < d < 1.0)

    def test_ties_go_to_lowest_index(self):
        soup = TriangleSoup(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 2], [1, 0, 2], [0, 1, 2]]),
                            np.array([[3, 4, 5], [0, 1, 2]]))
        _, _, index = unsigned_distance(Bvh(soup), soup, np.array([[0.1, 0.1, 1.0]]))
        self.assertEqual(index[0], 0)

    def test_deterministic(self):
        soup = icosphere(2)
        queries = np.random.default_rng(2).normal(size=(200, 3))
        first = Bvh(soup).query(queries)
        second = Bvh(soup).query(queries)
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)

    def test_empty_soup(self):
        with self.assertRaises(ContractError):
            Bvh(TriangleSoup(np.zeros((0, 3)), np.zeros((0, 3))))


class SamplingTestCase(SimpleTestCase):

    def test_area_proportional_counts(self):
        soup = two_triangle_soup()
        _, triangles = sample_triangles(soup, 40000, np.random.default_rng(3))
        sigma = math.sqrt(40000 * 0.75 * 0.25)
        self.assertLess(abs(np.sum(triangles == 0) - 30000), 3 * sigma)

    def test_points_lie_on_surface(self):
        soup = torus()
        cloud = sample_surface(soup, 2000, np.random.default_rng(4))
        d, _, _ = unsigned_distance(Bvh(soup), soup, cloud.points)
        self.assertLessEqual(d.max(), 1e-6)

    def test_zero_points(self):
        self.assertEqual(len(sample_surface(two_triangle_soup(), 0, np.random.default_rng(0))), 0)

    def test_degenerate_triangles_never_chosen(self):
        soup = TriangleSoup(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]]), np.array([[0, 1, 3], [0, 1, 2]]))
        _, triangles = sample_triangles(soup, 500, np.random.default_rng(5))
        self.assertTrue((triangles == 1).all())
        self.assertEqual(soup.degenerate.tolist(), [True, False])

    def test_all_degenerate(self):
        soup = TriangleSoup(np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0]]), np.array([[0, 1, 2]]))
        with self.assertRaises(ContractError):
            sample_surface(soup, 10, np.random.default_rng(0))


class NormalizeTestCase(SimpleTestCase):

    def test_unit_icosphere(self):
        _, center, scale = normalize(icosphere(3))
        self.assertAlmostEqual(scale, 1.0, delta=1e-6)
        np.testing.assert_allclose(center, 0, atol=1e-12)

    def test_translation_invariance(self):
        soup = torus()
        moved = TriangleSoup(soup.vertices + 5.0, soup.triangles)
        np.testing.assert_allclose(normalize(moved)[0].vertices, normalize(soup)[0].vertices, atol=1e-12)

    def test_inverse_round_trip(self):
        soup = TriangleSoup(torus().vertices * 3.0 + [1.0, -2.0, 0.5], torus().triangles)
        normalized, center, scale = normalize(soup)
        self.assertAlmostEqual(np.linalg.norm(normalized.vertices, axis=1).max(), 1.0, places=12)
        np.testing.assert_allclose(Normalization(center, scale).invert(normalized.vertices), soup.vertices, atol=1e-5)


class ChamferTestCase(SimpleTestCase):

    def test_identical_clouds(self):
        cloud = PointCloud(np.random.default_rng(0).normal(size=(50, 3)))
        self.assertEqual(chamfer(cloud, cloud), 0.0)

    def test_single_points(self):
        self.assertEqual(chamfer(PointCloud([[0, 0, 0]]), PointCloud([[1, 0, 0]])), 1.0)

    def test_hand_computed(self):
        self.assertEqual(chamfer(PointCloud([[0, 0, 0], [1, 0, 0]]), PointCloud([[0, 0, 0]])), 0.25)

    def test_symmetric_and_matches_brute_force(self):
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=(500, 3)), rng.normal(size=(300, 3))
        distances = np.linalg.norm(a[:, None] - b[None], axis=-1)
        expected = 0.5 * (distances.min(axis=1).mean() + distances.min(axis=0).mean())
        self.assertEqual(chamfer(PointCloud(a), PointCloud(b)), chamfer(PointCloud(b), PointCloud(a)))
        self.assertAlmostEqual(chamfer(PointCloud(a), PointCloud(b)), expected, places=12)

    def test_empty_cloud(self):
        with self.assertRaises(ContractError):
            chamfer(PointCloud(np.zeros((0, 3))), PointCloud([[0, 0, 0]]))


class ShapesTestCase(TempDirMixin, SimpleTestCase):

    def test_icosphere_size(self):
        soup = icosphere(3)
        self.assertEqual((len(soup.vertices), len(soup)), (642, 1280))
        np.testing.assert_allclose(np.linalg.norm(soup.vertices, axis=1), 1.0)

    def test_punch_holes_opens_the_surface(self):
        soup = icosphere(2)
        holed = punch_holes(soup, 0.2, np.random.default_rng(0))
        self.assertLess(len(holed), len(soup))
        self.assertGreater(len(holed), 0)
        self.assertEqual(len(np.unique(holed.triangles)), len(holed.vertices))

    def test_synthesize_command(self):
        out = StringIO()
        call_command('synthesize', '--out-dir', str(self.tmp), '--shapes', 'icosphere', 'torus',
                     '--holes', '0.1', stdout=out)
        self.assertEqual(sorted(p.name for p in self.tmp.iterdir()), ['icosphere.ply', 'torus.ply'])
        self.assertGreater(len(load_mesh(self.tmp / 'torus.ply')), 0)
