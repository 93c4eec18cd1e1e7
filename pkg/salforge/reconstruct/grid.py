import concurrent.futures
import dataclasses
import typing

import numpy as np

from salforge.autodiff.tensor import ContractError, Tensor, no_grad
from salforge.nn.architectures import get_model
from salforge.nn.params import ModelParams

DEFAULT_BOUND = 1.1
DEFAULT_RESOLUTION = 100
DEFAULT_SLAB = 8

Field = typing.Callable[[np.ndarray], np.ndarray]


@dataclasses.dataclass(eq=False)
class ScalarGrid:
    """
    Field samples on the lattice of the cube [-bound, bound]^3, `resolution` points per axis.
    `values[k, j, i]` is the sample at (x_i, y_j, z_k), so the flattened array is x-fastest.
    """
    resolution: int
    bound: float
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        shape = (self.resolution,) * 3
        if self.values.shape != shape:
            raise ContractError(f'grid values must have shape {shape}, got {self.values.shape}')
        if not np.isfinite(self.values).all():
            raise ContractError('grid values must be finite')

    @property
    def axis(self) -> np.ndarray:
        return lattice_axis(self.resolution, self.bound)

    @property
    def cell_size(self) -> float:
        return 2.0 * self.bound / (self.resolution - 1)

    def points(self) -> np.ndarray:
        return lattice_points(self.resolution, self.bound)


def lattice_axis(resolution: int, bound: float) -> np.ndarray:
    if resolution < 2:
        raise ContractError(f'grid resolution must be at least 2, got {resolution}')
    return np.linspace(-bound, bound, resolution)


def lattice_points(resolution: int, bound: float, first: int = 0, stop: typing.Optional[int] = None) -> np.ndarray:
    """(n, 3) lattice points of the z-layers [first, stop), x fastest."""
    axis = lattice_axis(resolution, bound)
    stop = resolution if stop is None else stop
    z, y, x = np.meshgrid(axis[first:stop], axis, axis, indexing='ij')
    return np.stack([x.reshape(-1), y.reshape(-1), z.reshape(-1)], axis=1)


def evaluate_field(field: Field, resolution: int = DEFAULT_RESOLUTION, bound: float = DEFAULT_BOUND,
                   slab_size: int = DEFAULT_SLAB, workers: int = 1) -> ScalarGrid:
    """Sample `field` on the lattice, `slab_size` z-layers per call."""
    if slab_size < 1:
        raise ContractError(f'slab size must be positive, got {slab_size}')
    lattice_axis(resolution, bound)
    slabs = [(first, min(first + slab_size, resolution)) for first in range(0, resolution, slab_size)]

    def evaluate(slab):
        first, stop = slab
        values = np.asarray(field(lattice_points(resolution, bound, first, stop)), dtype=np.float64)
        return values.reshape(stop - first, resolution, resolution)

    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            layers = list(pool.map(evaluate, slabs))
    else:
        layers = [evaluate(slab) for slab in slabs]
    return ScalarGrid(resolution, bound, np.concatenate(layers, axis=0))


def decoder_field(params: ModelParams, z: Tensor) -> Field:
    model = get_model(params.arch)

    def field(points: np.ndarray) -> np.ndarray:
        with no_grad():
            return model.decode(params, z, Tensor(points.T, dtype=params[model.decoder.final.weight_name].dtype)).data

    return field


def evaluate_grid(params: ModelParams, z: Tensor, resolution: int = DEFAULT_RESOLUTION,
                  bound: float = DEFAULT_BOUND, slab_size: int = DEFAULT_SLAB, workers: int = 1) -> ScalarGrid:
    return evaluate_field(decoder_field(params, z), resolution, bound, slab_size, workers)
