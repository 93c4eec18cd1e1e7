"""
Synthetic shapes for desk-scale runs and geometry checks.
"""
import math

import numpy as np

from salforge.autodiff.tensor import ContractError
from salforge.geometry.mesh import TriangleSoup


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriangleSoup:
    """Icosahedron refined `subdivisions` times, every vertex pushed onto the sphere."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    vertices = [
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ]
    faces = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    vertices = [list(np.array(v, dtype=np.float64) / np.linalg.norm(v)) for v in vertices]

    for _ in range(subdivisions):
        midpoints = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoints:
                m = (np.array(vertices[i]) + np.array(vertices[j])) / 2.0
                vertices.append(list(m / np.linalg.norm(m)))
                midpoints[key] = len(vertices) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]])
        faces = refined

    return TriangleSoup(np.array(vertices) * radius, np.array(faces))


def torus(major: float = 0.7, minor: float = 0.25, n_major: int = 32, n_minor: int = 16) -> TriangleSoup:
    u = np.arange(n_major) * 2 * math.pi / n_major
    v = np.arange(n_minor) * 2 * math.pi / n_minor
    uu, vv = np.meshgrid(u, v, indexing='ij')
    ring = major + minor * np.cos(vv)
    vertices = np.stack([ring * np.cos(uu), ring * np.sin(uu), minor * np.sin(vv)], axis=-1).reshape(-1, 3)

    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing='ij')
    a = i * n_minor + j
    b = ((i + 1) % n_major) * n_minor + j
    c = ((i + 1) % n_major) * n_minor + (j + 1) % n_minor
    d = i * n_minor + (j + 1) % n_minor
    faces = np.concatenate([
        np.stack([a, b, c], axis=-1).reshape(-1, 3),
        np.stack([a, c, d], axis=-1).reshape(-1, 3),
    ])
    return TriangleSoup(vertices, faces)


def two_triangle_soup() -> TriangleSoup:
    """Two disconnected triangles in parallel planes with areas 0.75 and 0.25."""
    vertices = [
        [0.0, 0.0, 0.0], [1.5, 0.0, 0.0], [0.0, 1.0, 0.0],
        [0.0, 0.0, 0.5], [0.5, 0.0, 0.5], [0.0, 1.0, 0.5],
    ]
    return TriangleSoup(np.array(vertices), np.array([[0, 1, 2], [3, 4, 5]]))


def punch_holes(soup: TriangleSoup, fraction: float, rng: np.random.Generator) -> TriangleSoup:
    """Drop about `fraction` of the triangles at random, leaving an open, scan-like soup."""
    if not 0.0 <= fraction < 1.0:
        raise ContractError(f'hole fraction must be in [0, 1), got {fraction}')
    keep = rng.random(len(soup)) >= fraction
    if not keep.any():
        keep[rng.integers(len(soup))] = True
    return TriangleSoup(soup.vertices, soup.triangles[keep], soup.comments).compact()


SHAPES = {
    'icosphere': icosphere,
    'torus': torus,
    'two_triangles': two_triangle_soup,
}
