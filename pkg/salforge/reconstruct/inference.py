import dataclasses
import logging
import typing

import numpy as np

from salforge import seeding
from salforge.autodiff.tensor import Tensor, no_grad
from salforge.geometry.mesh import Normalization, PointCloud, TriangleSoup
from salforge.geometry.sampling import sample_surface, subsample
from salforge.nn.architectures import LATENT_DIM, get_model, sample_latent
from salforge.nn.params import LatentMode
from salforge.reconstruct.grid import evaluate_grid
from salforge.reconstruct.marching_cubes import marching_cubes
from salforge.training.checkpoint import Checkpoint

Scan = typing.Union[TriangleSoup, PointCloud]


@dataclasses.dataclass(eq=False)
class Reconstruction:
    soup: TriangleSoup
    normalization: Normalization
    latent: np.ndarray
    resolution: int

    def comments(self, seed: int) -> typing.List[str]:
        return self.normalization.comments() + [f'seed {seed}', f'resolution {self.resolution}']


def normalized_scan(scan: Scan) -> typing.Tuple[Scan, Normalization]:
    """
    The scan in the normalized frame. Meshes written by preprocessing already are, and carry
    their transform in comments; anything else is normalized here.
    """
    if isinstance(scan, TriangleSoup):
        recorded = Normalization.from_comments(scan.comments)
        if recorded is not None:
            return scan, recorded
        transform = Normalization.fit(scan.vertices)
        return TriangleSoup(transform.apply(scan.vertices), scan.triangles, scan.comments), transform
    transform = Normalization.fit(scan.points)
    return PointCloud(transform.apply(scan.points), tag=scan.tag), transform


def as_scan(soup: TriangleSoup) -> Scan:
    """Meshes without faces are point clouds."""
    return soup if len(soup) else PointCloud(soup.vertices, tag='scan')


class Reconstructor:
    """Encodes scans with a trained checkpoint and meshes the decoder's zero level set."""

    def __init__(self, checkpoint: Checkpoint, resolution: typing.Optional[int] = None, workers: int = 1):
        self.checkpoint = checkpoint
        self.config = checkpoint.config
        self.params = checkpoint.params
        self.model = get_model(self.params.arch)
        self.resolution = resolution or self.config.reconstruct.resolution
        self.workers = workers
        self.seed = self.config.train.seed
        self.dtype = self.params[self.model.decoder.final.weight_name].dtype

    @property
    def decoder_only(self) -> bool:
        return self.config.train.decoder_only

    def input_points(self, scan: Scan, shape_id: str) -> np.ndarray:
        n = self.config.reconstruct.input_points
        rng = seeding.stream(self.seed, seeding.EVAL, 'input', shape_id)
        if isinstance(scan, TriangleSoup):
            return sample_surface(scan, n, rng).points
        return subsample(scan, n, rng).points

    def latent(self, scan: Scan, shape_id: str = 'input') -> Tensor:
        if self.decoder_only:
            return Tensor(np.zeros(LATENT_DIM), dtype=self.dtype)
        with no_grad():
            mu, eta = self.model.encode(self.params, Tensor(self.input_points(scan, shape_id).T, dtype=self.dtype))
            return sample_latent(mu, eta, None, LatentMode.MEAN)

    def reconstruct(self, scan: Scan, shape_id: str = 'input') -> Reconstruction:
        scan, transform = normalized_scan(scan)
        return self.reconstruct_normalized(scan, transform, shape_id)

    def reconstruct_normalized(self, scan: Scan, transform: Normalization, shape_id: str = 'input') -> Reconstruction:
        z = self.latent(scan, shape_id)
        settings = self.config.reconstruct
        grid = evaluate_grid(self.params, z, self.resolution, settings.bound, settings.slab_size, self.workers)
        soup = marching_cubes(grid)
        if not len(soup):
            logging.warning(f'RECONSTRUCT: empty zero level set for {shape_id} at R={self.resolution}')
        else:
            logging.info(f'RECONSTRUCT: {shape_id} at R={self.resolution}, {len(soup)} triangles')
        return Reconstruction(soup, transform, z.numpy().copy(), self.resolution)


def reconstruct(checkpoint: Checkpoint, scan: Scan, resolution: typing.Optional[int] = None, workers: int = 1,
                shape_id: str = 'input') -> Reconstruction:
    return Reconstructor(checkpoint, resolution, workers).reconstruct(scan, shape_id)
