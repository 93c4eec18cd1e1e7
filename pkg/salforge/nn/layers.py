import typing

from salforge.autodiff import functional as F
from salforge.autodiff.tensor import Tensor


class SharedAffine:
    """Kernel-1 convolution: the same affine map applied to every point column."""

    def __init__(self, name: str, c_in: int, c_out: int):
        self.name = name
        self.c_in = c_in
        self.c_out = c_out

    @property
    def weight_name(self) -> str:
        return f'{self.name}.weight'

    @property
    def bias_name(self) -> str:
        return f'{self.name}.bias'

    def param_shapes(self) -> typing.List[typing.Tuple[str, tuple]]:
        return [(self.weight_name, (self.c_out, self.c_in)), (self.bias_name, (self.c_out,))]

    def affines(self) -> typing.List['SharedAffine']:
        return [self]

    def param_count(self) -> int:
        return self.c_out * self.c_in + self.c_out

    def __call__(self, params, x: Tensor) -> Tensor:
        return F.affine_pointwise(x, params[self.weight_name], params[self.bias_name])

    def __repr__(self):
        return f'SharedAffine({self.name}: {self.c_in}->{self.c_out})'


class Equivariant:
    """Per-point branch plus a branch over the kernel-2 max-pooled neighbourhood, summed."""

    def __init__(self, name: str, c_in: int, c_out: int):
        self.name = name
        self.element = SharedAffine(f'{name}.element', c_in, c_out)
        self.pooled = SharedAffine(f'{name}.pooled', c_in, c_out)

    def param_shapes(self):
        return self.element.param_shapes() + self.pooled.param_shapes()

    def affines(self) -> typing.List[SharedAffine]:
        return [self.element, self.pooled]

    def param_count(self) -> int:
        return self.element.param_count() + self.pooled.param_count()

    def __call__(self, params, x: Tensor) -> Tensor:
        return F.add(self.element(params, x), self.pooled(params, F.maxpool_pairs(x)))

    def __repr__(self):
        return f'Equivariant({self.name}: {self.element.c_in}->{self.element.c_out})'


def column(v: Tensor) -> Tensor:
    return F.reshape(v, (v.shape[0], 1))


def flatten(x: Tensor) -> Tensor:
    return F.reshape(x, (x.size,))
