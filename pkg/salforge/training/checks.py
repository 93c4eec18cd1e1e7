import numpy as np

from salforge.autodiff.gradcheck import gradcheck, register, samples_for
from salforge.autodiff.tensor import Tensor, FLOAT64, precision
from salforge.nn.architectures import get_model, sample_latent
from salforge.nn.init import init_params
from salforge.nn.params import Architecture, InitScheme
from salforge.training.losses import total_loss

EPS = 1e-5
SAMPLES_PER_WEIGHT = 32
POINTS = 8
KL_WEIGHT = 0.1


@register('training')
def total_loss_through_model():
    """total_loss of a stochastic latent, checked against every encoder and decoder tensor."""
    rng = np.random.default_rng(17)
    with precision(FLOAT64):
        params = init_params(Architecture.LIGHTSAL, InitScheme.SCALED_UNIFORM, seed=4)
        cloud = Tensor(rng.uniform(-1.0, 1.0, size=(3, POINTS)))
        queries = Tensor(rng.uniform(-1.0, 1.0, size=(3, POINTS)))
        h = Tensor(rng.uniform(0.05, 0.5, size=POINTS))
    model = get_model(Architecture.LIGHTSAL)

    def loss(_):
        mu, eta = model.encode(params, cloud)
        # same noise for every evaluation
        z = sample_latent(mu, eta, np.random.default_rng(5))
        return total_loss(model.decode(params, z, queries), h, mu, eta, KL_WEIGHT)

    errors = {}
    for name in params.names():
        samples = samples_for(params[name], SAMPLES_PER_WEIGHT)
        errors[name] = gradcheck(loss, params[name], eps=EPS, samples=samples)
        params.zero_grad()
    return errors
