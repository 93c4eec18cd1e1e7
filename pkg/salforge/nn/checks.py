import numpy as np

from salforge.autodiff import functional as F
from salforge.autodiff.gradcheck import gradcheck, register, samples_for
from salforge.autodiff.tensor import Tensor, FLOAT64, precision
from salforge.nn.architectures import get_model, LATENT_DIM
from salforge.nn.init import init_params
from salforge.nn.params import Architecture, InitScheme

NETWORK_EPS = 1e-5
# weight matrices are sampled, bias vectors are checked in full
SAMPLES_PER_WEIGHT = 32
POINTS = 8


def _inputs():
    rng = np.random.default_rng(11)
    with precision(FLOAT64):
        points = Tensor(rng.uniform(-1.0, 1.0, size=(3, POINTS)))
        z = Tensor(rng.normal(scale=0.5, size=LATENT_DIM))
    return points, z


def _params(arch):
    with precision(FLOAT64):
        return init_params(arch, InitScheme.SCALED_UNIFORM, seed=3)


def _check_tensors(params, names, loss):
    errors = {}
    for name in names:
        samples = samples_for(params[name], SAMPLES_PER_WEIGHT)
        errors[name] = gradcheck(loss, params[name], eps=NETWORK_EPS, samples=samples)
        params.zero_grad()
    return errors


def _encoder_case(arch):
    params = _params(arch)
    model = get_model(arch)
    points, _ = _inputs()

    def loss(_):
        mu, eta = model.encode(params, points)
        return F.add(F.mean_all(F.square(mu)), F.mean_all(eta))

    return _check_tensors(params, [name for name, _ in model.encoder.param_shapes()], loss)


def _decoder_case(arch):
    params = _params(arch)
    model = get_model(arch)
    points, z = _inputs()

    def loss(_):
        return F.mean_all(model.decode(params, z, points))

    return _check_tensors(params, [name for name, _ in model.decoder.param_shapes()], loss)


@register('nn')
def lightsal_encoder():
    return _encoder_case(Architecture.LIGHTSAL)


@register('nn')
def lightsal_decoder():
    return _decoder_case(Architecture.LIGHTSAL)


@register('nn')
def baseline_encoder():
    return _encoder_case(Architecture.SAL_BASELINE)


@register('nn')
def baseline_decoder():
    return _decoder_case(Architecture.SAL_BASELINE)
