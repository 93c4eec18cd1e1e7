import typing

import numpy as np

from salforge.autodiff.tensor import ContractError
from salforge.geometry.mesh import PointCloud, TriangleSoup


def sample_triangles(soup: TriangleSoup, n: int, rng: np.random.Generator) -> typing.Tuple[np.ndarray, np.ndarray]:
    """
    `n` points uniformly distributed over the surface, with the triangle each came from.
    Zero-area triangles are never chosen.
    """
    if n == 0:
        return np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
    areas = soup.areas() if len(soup) else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise ContractError('cannot sample a soup without any non-degenerate triangle')

    triangles = rng.choice(len(areas), size=n, p=areas / total)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)[:, None]
    corners = soup.corners[triangles]
    points = (1 - s) * corners[:, 0] + s * (1 - r2[:, None]) * corners[:, 1] + s * r2[:, None] * corners[:, 2]
    return points, triangles


def sample_surface(soup: TriangleSoup, n: int, rng: np.random.Generator) -> PointCloud:
    points, _ = sample_triangles(soup, n, rng)
    return PointCloud(points, tag='surface')


def subsample(cloud: PointCloud, n: int, rng: np.random.Generator) -> PointCloud:
    """`n` points of the cloud, without replacement when it has enough of them."""
    if not len(cloud):
        raise ContractError('cannot subsample an empty point cloud')
    if n == len(cloud):
        return cloud
    index = rng.choice(len(cloud), size=n, replace=n > len(cloud))
    return PointCloud(cloud.points[index], tag=cloud.tag)
