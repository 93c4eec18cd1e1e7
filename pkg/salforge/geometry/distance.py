"""
Exact point-to-triangle projection, vectorized over (point, triangle) pairs.

Regions are tested in the usual order: vertex a, vertex b, edge ab, vertex c, edge ac,
edge bc, face. Zero-area triangles are projected onto the closest of their three edges.
"""
import typing

import numpy as np

BRUTE_FORCE_CHUNK = 2 ** 18


def _dot(u, v):
    return np.einsum('ij,ij->i', u, v)


def _closest_on_segments(p, a, b):
    ab = b - a
    length2 = _dot(ab, ab)
    t = np.divide(_dot(p - a, ab), length2, out=np.zeros(len(p)), where=length2 > 0)
    return a + np.clip(t, 0.0, 1.0)[:, None] * ab


def _closest_on_degenerate(p, a, b, c):
    candidates = np.stack([
        _closest_on_segments(p, a, b),
        _closest_on_segments(p, b, c),
        _closest_on_segments(p, c, a),
    ])
    d2 = ((candidates - p[None]) ** 2).sum(axis=2)
    return candidates[np.argmin(d2, axis=0), np.arange(len(p))]


def closest_points(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Closest point of triangle (a[i], b[i], c[i]) to p[i], all arrays (K, 3)."""
    ab, ac = b - a, c - a
    ap, bp, cp = p - a, p - b, p - c
    d1, d2 = _dot(ab, ap), _dot(ac, ap)
    d3, d4 = _dot(ab, bp), _dot(ac, bp)
    d5, d6 = _dot(ab, cp), _dot(ac, cp)
    vc = d1 * d4 - d3 * d2
    vb = d5 * d2 - d1 * d6
    va = d3 * d6 - d5 * d4

    with np.errstate(divide='ignore', invalid='ignore'):
        t_ab = (d1 / (d1 - d3))[:, None]
        t_ac = (d2 / (d2 - d6))[:, None]
        t_bc = ((d4 - d3) / ((d4 - d3) + (d5 - d6)))[:, None]
        denom = va + vb + vc
        v = (vb / denom)[:, None]
        w = (vc / denom)[:, None]

        conditions = [
            ((d1 <= 0) & (d2 <= 0))[:, None],
            ((d3 >= 0) & (d4 <= d3))[:, None],
            ((vc <= 0) & (d1 >= 0) & (d3 <= 0))[:, None],
            ((d6 >= 0) & (d5 <= d6))[:, None],
            ((vb <= 0) & (d2 >= 0) & (d6 <= 0))[:, None],
            ((va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0))[:, None],
        ]
        choices = [a, b, a + t_ab * ab, c, a + t_ac * ac, b + t_bc * (c - b)]
        q = np.select(conditions, choices, default=a + v * ab + w * ac)

    degenerate = np.linalg.norm(np.cross(ab, ac), axis=1) == 0
    if degenerate.any():
        q[degenerate] = _closest_on_degenerate(p[degenerate], a[degenerate], b[degenerate], c[degenerate])
    return q


def point_triangle_distance(p, triangle) -> typing.Tuple[float, np.ndarray]:
    """Distance from `p` to the closed triangle given as three corners, and the closest point."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    corners = np.asarray(triangle, dtype=np.float64).reshape(3, 3)
    q = closest_points(p, corners[None, 0], corners[None, 1], corners[None, 2])[0]
    return float(np.linalg.norm(p[0] - q)), q


def squared_distances(points: np.ndarray, corners: np.ndarray, triangle: int):
    """Squared distances and closest points from every point to one triangle of `corners`."""
    n = len(points)
    a, b, c = (np.broadcast_to(corners[triangle, k], (n, 3)) for k in range(3))
    q = closest_points(points, a, b, c)
    return ((points - q) ** 2).sum(axis=1), q


def brute_force_distance(soup, points: np.ndarray):
    """
    Reference unsigned distance by exhaustive search over all triangles (lowest index wins ties).
    Returns (d, q, triangle index) like the BVH query.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    corners = soup.corners
    count = len(corners)
    best = np.full(len(points), np.inf)
    closest = np.zeros_like(points)
    index = np.full(len(points), -1, dtype=np.int64)

    rows = max(1, BRUTE_FORCE_CHUNK // max(count, 1))
    for start in range(0, len(points), rows):
        chunk = points[start:start + rows]
        p = np.repeat(chunk, count, axis=0)
        tiled = np.tile(corners, (len(chunk), 1, 1))
        q = closest_points(p, tiled[:, 0], tiled[:, 1], tiled[:, 2])
        d2 = ((p - q) ** 2).sum(axis=1).reshape(len(chunk), count)
        winner = np.argmin(d2, axis=1)
        rows_index = np.arange(len(chunk))
        best[start:start + rows] = d2[rows_index, winner]
        closest[start:start + rows] = q.reshape(len(chunk), count, 3)[rows_index, winner]
        index[start:start + rows] = winner
    return np.sqrt(best), closest, index
