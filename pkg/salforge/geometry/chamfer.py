import numpy as np
from scipy.spatial import cKDTree

from salforge.autodiff.tensor import ContractError
from salforge.geometry.mesh import PointCloud

REPORT_SCALE = 1e3


def _points(cloud) -> np.ndarray:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if not len(points):
        raise ContractError('chamfer distance needs two non-empty point clouds')
    return points


def nearest_distances(source, target) -> np.ndarray:
    """Euclidean distance from every source point to its nearest target point."""
    distances, _ = cKDTree(_points(target)).query(_points(source))
    return distances


def chamfer(a, b) -> float:
    """Half the sum of the two mean nearest-neighbour distances (not squared)."""
    return 0.5 * (float(nearest_distances(a, b).mean()) + float(nearest_distances(b, a).mean()))
