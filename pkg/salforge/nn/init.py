import logging
import math

import numpy as np

from salforge import seeding
from salforge.autodiff.tensor import Tensor, default_dtype
from salforge.nn.architectures import get_model, Decoder
from salforge.nn.params import ConfigurationError, InitScheme, ModelParams

SPHERE_RADIUS = 1.0


def scaled_uniform_bound(c_in: int, c_out: int) -> float:
    return math.sqrt(6.0 / (c_in + c_out))


def _scaled_uniform(layer, rng):
    bound = scaled_uniform_bound(layer.c_in, layer.c_out)
    return rng.uniform(-bound, bound, size=(layer.c_out, layer.c_in)), np.zeros(layer.c_out)


def _geometric(decoder: Decoder, layer, rng, radius: float):
    """
    Hidden layers keep feature norms on average, the final layer sums them with equal
    positive weights, so f(x) starts close to |x| - radius for z = 0.
    """
    if layer is decoder.final:
        weight = rng.normal(math.sqrt(math.pi) / math.sqrt(layer.c_in), 1e-6, size=(1, layer.c_in))
        return weight, np.full(1, -radius)
    std = math.sqrt(2.0) / math.sqrt(layer.c_out)
    if layer.name in decoder.skip_targets:
        # the concatenated input doubles the squared feature norm
        std /= math.sqrt(2.0)
    return rng.normal(0.0, std, size=(layer.c_out, layer.c_in)), np.zeros(layer.c_out)


def init_params(arch: str, scheme: str, seed: int, radius: float = SPHERE_RADIUS) -> ModelParams:
    """Deterministic parameters for `arch`; geometric-sphere only changes the decoder."""
    if scheme not in InitScheme.values:
        raise ConfigurationError(f'unknown init scheme {scheme!r}, expected one of {InitScheme.values}')
    model = get_model(arch)
    rng = seeding.stream(seed, seeding.INIT)
    dtype = default_dtype()

    params = ModelParams(model.arch.value, scheme, seed)
    for network in model.networks():
        for layer in network.affines():
            if scheme == InitScheme.GEOMETRIC_SPHERE and isinstance(network, Decoder):
                weight, bias = _geometric(network, layer, rng, radius)
            else:
                weight, bias = _scaled_uniform(layer, rng)
            params.add(layer.weight_name, Tensor(weight, requires_grad=True, dtype=dtype))
            params.add(layer.bias_name, Tensor(bias, requires_grad=True, dtype=dtype))

    logging.info(f'INIT: {params.arch} parameters initialized ({scheme}, seed {seed})')
    return params
