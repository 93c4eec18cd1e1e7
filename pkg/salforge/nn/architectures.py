"""
LightSAL and baseline SAL networks built from shared-affine layers.

Parameters are not owned by the networks: every forward takes a `ModelParams` and looks
tensors up by name, so one network definition serves float32 training, float64 gradient
checks and checkpoints alike.
"""
import typing

import numpy as np

from salforge.autodiff import functional as F
from salforge.autodiff.tensor import Tensor, DimensionError
from salforge.nn.layers import SharedAffine, Equivariant, column, flatten
from salforge.nn.params import Architecture, ConfigurationError, LatentMode, ModelParams

LATENT_DIM = 256
POINT_DIM = 3


class Network:
    prefix = ''

    def __init__(self):
        self.layers = []

    def _layer(self, layer):
        self.layers.append(layer)
        return layer

    def affines(self) -> typing.List[SharedAffine]:
        return [affine for layer in self.layers for affine in layer.affines()]

    def param_shapes(self):
        return [shape for layer in self.layers for shape in layer.param_shapes()]

    def param_count(self) -> int:
        return sum(layer.param_count() for layer in self.layers)

    def __repr__(self):
        return f'{type(self).__name__}({self.param_count():,} parameters)'


class Encoder(Network):
    prefix = 'encoder'

    def _check(self, points: Tensor):
        if points.ndim != 2 or points.shape[0] != POINT_DIM or points.shape[1] < 1:
            raise DimensionError(f'encoder input must be [3, N] with N >= 1, got {points.shape}')


class Decoder(Network):
    prefix = 'decoder'
    # affines fed by a concatenation with the decoder input
    skip_targets: typing.Tuple[str, ...] = ()

    @property
    def final(self) -> SharedAffine:
        return self.layers[-1]

    def _input(self, z: Tensor, points: Tensor) -> Tensor:
        if z.ndim != 1 or z.shape[0] != LATENT_DIM:
            raise DimensionError(f'latent code must have shape ({LATENT_DIM},), got {z.shape}')
        if points.ndim != 2 or points.shape[0] != POINT_DIM or points.shape[1] < 1:
            raise DimensionError(f'decoder queries must be [3, M] with M >= 1, got {points.shape}')
        return F.concat_rows(F.repeat_cols(z, points.shape[1]), points)


class LightSALEncoder(Encoder):

    def __init__(self):
        super().__init__()
        widths = [POINT_DIM, 128, 128, 128, 256, 256]
        self.equivariant = [
            self._layer(Equivariant(f'encoder.e{i + 1}', c_in, c_out))
            for i, (c_in, c_out) in enumerate(zip(widths, widths[1:]))
        ]
        self.c6 = self._layer(SharedAffine('encoder.c6', 256, 512))
        self.head_mu = self._layer(SharedAffine('encoder.head_mu', 512, LATENT_DIM))
        self.head_eta = self._layer(SharedAffine('encoder.head_eta', 512, LATENT_DIM))

    def __call__(self, params: ModelParams, points: Tensor) -> typing.Tuple[Tensor, Tensor]:
        self._check(points)
        h = points
        for layer in self.equivariant:
            h = F.relu(layer(params, h))
        h = F.relu(self.c6(params, h))
        pooled = column(F.global_maxpool(h))
        return flatten(self.head_mu(params, pooled)), flatten(self.head_eta(params, pooled))


class BaselineSALEncoder(Encoder):
    """PointNet encoder: every block sees its per-point features next to their global max."""

    def __init__(self):
        super().__init__()
        self.fc_pos = self._layer(SharedAffine('encoder.fc_pos', POINT_DIM, 1024))
        self.fc_0 = self._layer(SharedAffine('encoder.fc_0', 1024, 512))
        self.blocks = [self._layer(SharedAffine(f'encoder.fc_{i}', 1024, 512)) for i in (1, 2, 3)]
        self.fc_mean = self._layer(SharedAffine('encoder.fc_mean', 512, LATENT_DIM))
        self.fc_std = self._layer(SharedAffine('encoder.fc_std', 512, LATENT_DIM))

    def __call__(self, params: ModelParams, points: Tensor) -> typing.Tuple[Tensor, Tensor]:
        self._check(points)
        n = points.shape[1]
        h = self.fc_pos(params, points)
        h = self.fc_0(params, F.relu(h))
        for block in self.blocks:
            pooled = F.repeat_cols(F.global_maxpool(h), n)
            h = block(params, F.relu(F.concat_rows(h, pooled)))
        pooled = F.relu(column(F.global_maxpool(h)))
        return flatten(self.fc_mean(params, pooled)), flatten(self.fc_std(params, pooled))


class LightSALDecoder(Decoder):
    skip_targets = ('decoder.d4',)

    def __init__(self):
        super().__init__()
        c_in = LATENT_DIM + POINT_DIM
        self.d1 = self._layer(SharedAffine('decoder.d1', c_in, 128))
        self.d2 = self._layer(SharedAffine('decoder.d2', 128, 256))
        self.d3 = self._layer(SharedAffine('decoder.d3', 256, 512 - c_in))
        self.d4 = self._layer(SharedAffine('decoder.d4', 512, 128))
        self.d5 = self._layer(SharedAffine('decoder.d5', 128, 256))
        self.d6 = self._layer(SharedAffine('decoder.d6', 256, 512))
        self.out = self._layer(SharedAffine('decoder.out', 512, 1))

    def __call__(self, params: ModelParams, z: Tensor, points: Tensor) -> Tensor:
        x = self._input(z, points)
        h = F.relu(self.d1(params, x))
        h = F.relu(self.d2(params, h))
        h = F.relu(self.d3(params, h))
        h = F.concat_rows(h, x)
        for layer in (self.d4, self.d5, self.d6):
            h = F.relu(layer(params, h))
        return flatten(self.out(params, h))


class BaselineSALDecoder(Decoder):
    """Eight 512-wide layers, the input re-enters before the fourth."""
    skip_targets = ('decoder.l3',)

    def __init__(self):
        super().__init__()
        c_in = LATENT_DIM + POINT_DIM
        self.hidden = [
            self._layer(SharedAffine('decoder.l0', c_in, 512)),
            self._layer(SharedAffine('decoder.l1', 512, 512)),
            self._layer(SharedAffine('decoder.l2', 512, 512)),
            self._layer(SharedAffine('decoder.l3', 512 + c_in, 512)),
            self._layer(SharedAffine('decoder.l4', 512, 512)),
            self._layer(SharedAffine('decoder.l5', 512, 512)),
            self._layer(SharedAffine('decoder.l6', 512, 512)),
        ]
        self.out = self._layer(SharedAffine('decoder.out', 512, 1))

    def __call__(self, params: ModelParams, z: Tensor, points: Tensor) -> Tensor:
        x = self._input(z, points)
        h = x
        for layer in self.hidden:
            if layer.name in self.skip_targets:
                h = F.concat_rows(h, x)
            h = F.relu(layer(params, h))
        return flatten(self.out(params, h))


class ShapeModel:
    """Encoder/decoder pair registered under one architecture tag."""

    def __init__(self, arch: str, encoder: Encoder, decoder: Decoder):
        self.arch = arch
        self.encoder = encoder
        self.decoder = decoder

    def networks(self) -> typing.List[Network]:
        return [self.encoder, self.decoder]

    def param_shapes(self):
        return self.encoder.param_shapes() + self.decoder.param_shapes()

    def param_count(self) -> int:
        return self.encoder.param_count() + self.decoder.param_count()

    def encode(self, params: ModelParams, points: Tensor):
        return self.encoder(params, points)

    def decode(self, params: ModelParams, z: Tensor, points: Tensor) -> Tensor:
        return self.decoder(params, z, points)


LIGHTSAL_ENCODER = LightSALEncoder()
LIGHTSAL_DECODER = LightSALDecoder()
BASELINE_ENCODER = BaselineSALEncoder()
BASELINE_DECODER = BaselineSALDecoder()

MODELS = {
    Architecture.LIGHTSAL: ShapeModel(Architecture.LIGHTSAL, LIGHTSAL_ENCODER, LIGHTSAL_DECODER),
    Architecture.SAL_BASELINE: ShapeModel(Architecture.SAL_BASELINE, BASELINE_ENCODER, BASELINE_DECODER),
}


def get_model(arch: str) -> ShapeModel:
    try:
        return MODELS[Architecture(arch)]
    except ValueError:
        raise ConfigurationError(f'unknown architecture {arch!r}, expected one of {Architecture.values}')


def encoder_forward(params: ModelParams, points: Tensor) -> typing.Tuple[Tensor, Tensor]:
    return get_model(params.arch).encode(params, points)


def decoder_forward(params: ModelParams, z: Tensor, points: Tensor) -> Tensor:
    return get_model(params.arch).decode(params, z, points)


def baseline_decoder_forward(params: ModelParams, z: Tensor, points: Tensor) -> Tensor:
    return BASELINE_DECODER(params, z, points)


def sample_latent(mu: Tensor, eta: Tensor, rng: typing.Optional[np.random.Generator],
                  mode: str = LatentMode.STOCHASTIC) -> Tensor:
    """Reparameterized draw z = mu + exp(eta / 2) * eps, or mu itself in mean mode."""
    if mu.shape != eta.shape:
        raise DimensionError(f'mu {mu.shape} and eta {eta.shape} must match')
    if mode == LatentMode.MEAN:
        return mu
    if mode != LatentMode.STOCHASTIC:
        raise ConfigurationError(f'unknown latent mode {mode!r}')
    if rng is None:
        raise ConfigurationError('stochastic latent sampling needs a random generator')
    noise = Tensor(rng.standard_normal(mu.shape), dtype=mu.dtype)
    return F.add(mu, F.mul(F.exp(F.scale(eta, 0.5)), noise))
