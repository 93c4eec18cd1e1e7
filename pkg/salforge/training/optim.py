import dataclasses
import typing

import numpy as np

from salforge.autodiff.tensor import DimensionError
from salforge.nn.params import ModelParams

BETA1 = 0.9
BETA2 = 0.999
EPSILON = 1e-8


@dataclasses.dataclass(eq=False)
class AdamState:
    m: typing.Dict[str, np.ndarray]
    v: typing.Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> 'AdamState':
        return cls(
            m={name: np.zeros_like(tensor.data) for name, tensor in params.items()},
            v={name: np.zeros_like(tensor.data) for name, tensor in params.items()},
        )

    def names(self) -> typing.List[str]:
        return list(self.m)


def adam_step(params: ModelParams, grads: typing.Optional[typing.Dict[str, np.ndarray]], state: AdamState, lr: float):
    """
    One Adam update of every parameter in `state`. With `grads` None the `.grad` of each
    tensor is used; a parameter without a gradient keeps its value and moments.
    """
    grads = params.grads() if grads is None else grads
    state.t += 1
    correction1 = 1.0 - BETA1 ** state.t
    correction2 = 1.0 - BETA2 ** state.t

    for name in state.names():
        tensor = params[name]
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != tensor.shape:
            raise DimensionError(f'adam_step: gradient {grad.shape} does not match parameter {name} {tensor.shape}')
        m, v = state.m[name], state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * grad
        v *= BETA2
        v += (1.0 - BETA2) * grad * grad
        tensor.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + EPSILON)


def lr_at(epoch: int, config) -> float:
    """Step schedule: lr0 scaled by schedule_factor after every schedule_period epochs."""
    if epoch < 0:
        raise ValueError(f'epoch must not be negative, got {epoch}')
    return config.lr0 * config.schedule_factor ** (epoch // config.schedule_period)
