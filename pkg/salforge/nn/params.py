import typing

import numpy as np
from django.db import models

from salforge.autodiff.tensor import Tensor


class ConfigurationError(ValueError):
    pass


class Architecture(models.TextChoices):
    LIGHTSAL = 'lightsal'
    SAL_BASELINE = 'sal-baseline'


class InitScheme(models.TextChoices):
    SCALED_UNIFORM = 'scaled-uniform'
    GEOMETRIC_SPHERE = 'geometric-sphere'


class LatentMode(models.TextChoices):
    STOCHASTIC = 'stochastic'
    MEAN = 'mean'


class ModelParams:
    """
    Named parameter tensors in registration order, tagged with the architecture, init scheme
    and seed they were created from.
    """

    def __init__(self, arch: str, scheme: str, seed: int, tensors: typing.Optional[dict] = None):
        self.arch = arch
        self.scheme = scheme
        self.seed = seed
        self._tensors: typing.Dict[str, Tensor] = {}
        for name, tensor in (tensors or {}).items():
            self.add(name, tensor)

    def add(self, name: str, tensor: Tensor):
        if name in self._tensors:
            raise ConfigurationError(f'duplicate parameter name {name}')
        self._tensors[name] = tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self) -> typing.List[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    def values(self):
        return self._tensors.values()

    def subset(self, prefix: str) -> 'ModelParams':
        return ModelParams(self.arch, self.scheme, self.seed,
                           {name: t for name, t in self._tensors.items() if name.startswith(prefix)})

    def astype(self, dtype) -> 'ModelParams':
        """Independent copy with every tensor converted to `dtype`."""
        return ModelParams(self.arch, self.scheme, self.seed, {
            name: Tensor(t.data, requires_grad=t.requires_grad, dtype=dtype)
            for name, t in self._tensors.items()
        })

    def zero_grad(self):
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def grads(self) -> typing.Dict[str, typing.Optional[np.ndarray]]:
        return {name: t.grad for name, t in self._tensors.items()}

    def __repr__(self):
        return f'ModelParams(arch={self.arch}, scheme={self.scheme}, seed={self.seed}, tensors={len(self)})'


def param_count(params: typing.Optional[ModelParams]) -> int:
    if params is None:
        return 0
    return int(sum(t.size for t in params.values()))
