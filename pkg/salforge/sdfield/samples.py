import dataclasses

import numpy as np

from salforge.autodiff.tensor import ContractError
from salforge.geometry.bvh import Bvh
from salforge.geometry.mesh import PointCloud, TriangleSoup
from salforge.geometry.sampling import sample_surface

STORAGE_DTYPE = np.float32


@dataclasses.dataclass(eq=False)
class SampleSet:
    """
    Training supervision for one shape: the encoder input cloud and query points labelled
    with their unsigned distance to the surface. Stored in float32.
    """
    shape_id: str
    input_cloud: np.ndarray
    queries: np.ndarray
    h: np.ndarray

    def __post_init__(self):
        self.input_cloud = np.ascontiguousarray(self.input_cloud, dtype=STORAGE_DTYPE).reshape(-1, 3)
        self.queries = np.ascontiguousarray(self.queries, dtype=STORAGE_DTYPE).reshape(-1, 3)
        self.h = np.ascontiguousarray(self.h, dtype=STORAGE_DTYPE).reshape(-1)
        if len(self.h) != len(self.queries):
            raise ContractError(f'{self.shape_id}: {len(self.queries)} queries but {len(self.h)} distances')
        if (self.h < 0).any():
            raise ContractError(f'{self.shape_id}: negative unsigned distance')

    @property
    def n_input(self) -> int:
        return len(self.input_cloud)

    @property
    def n_queries(self) -> int:
        return len(self.queries)

    @property
    def cloud(self) -> PointCloud:
        return PointCloud(self.input_cloud, tag=self.shape_id)


def generate_samples(soup: TriangleSoup, config, rng: np.random.Generator, shape_id: str = '',
                     bvh: Bvh = None) -> SampleSet:
    """
    Surface cloud for the encoder, plus queries from three groups: surface points jittered
    with sigma_small, surface points jittered with sigma_large, and points uniform in the
    bounding cube. Each query is labelled with its exact distance to the soup.
    """
    cloud = sample_surface(soup, config.n_input, rng)
    near = sample_surface(soup, 2 * config.n_near, rng).points
    sigmas = np.repeat([config.sigma_small, config.sigma_large], config.n_near)[:, None]
    near = near + rng.standard_normal(near.shape) * sigmas
    uniform = rng.uniform(-config.bound, config.bound, size=(config.n_uniform, 3))

    # labels are computed for the float32 positions that get stored
    queries = np.concatenate([near, uniform]).astype(STORAGE_DTYPE).astype(np.float64)
    bvh = bvh or Bvh(soup)
    h, _, _ = bvh.query(queries)
    return SampleSet(shape_id, cloud.points, queries, h)
