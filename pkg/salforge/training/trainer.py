import copy
import csv
import dataclasses
import logging
import pathlib
import threading
import time
import typing

import numpy as np

from salforge import seeding
from salforge.autodiff import functional as F
from salforge.autodiff.tensor import Tensor, backward
from salforge.config import Config
from salforge.geometry.mesh import TriangleSoup, normalize
from salforge.nn.architectures import LATENT_DIM, get_model, sample_latent
from salforge.nn.init import init_params
from salforge.nn.params import Architecture, ModelParams, param_count
from salforge.sdfield.archive import read_archive
from salforge.sdfield.manifest import Manifest, Split
from salforge.sdfield.samples import SampleSet, generate_samples
from salforge.training.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from salforge.training.losses import LossTerms, loss_terms
from salforge.training.optim import AdamState, adam_step, lr_at

METRICS_NAME = 'metrics.csv'
METRICS_HEADER = ('epoch', 'step', 'loss', 'sal', 'kl', 'lr', 'seconds')
LATEST_NAME = 'latest.salc'
SMOOTHING_WINDOW = 50


class TrainingError(RuntimeError):

    def __init__(self, message, shape_id=None, epoch=None, step=None):
        self.shape_id = shape_id
        self.epoch = epoch
        self.step = step
        super().__init__(message)


@dataclasses.dataclass
class MetricRow:
    epoch: int
    step: int
    loss: float
    sal: float
    kl: float
    lr: float
    seconds: float

    def as_csv(self) -> typing.List[str]:
        return [str(self.epoch), str(self.step), f'{self.loss:.9g}', f'{self.sal:.9g}', f'{self.kl:.9g}',
                f'{self.lr:.9g}', f'{self.seconds:.4f}']


class MetricsLog:
    """Appends one CSV row per optimizer step; the header is written once per file."""

    def __init__(self, path):
        self.path = pathlib.Path(path)
        self._lock = threading.Lock()
        if not self.path.exists() or self.path.stat().st_size == 0:
            with open(self.path, 'w', newline='') as f:
                csv.writer(f).writerow(METRICS_HEADER)

    def write(self, row: MetricRow):
        with self._lock, open(self.path, 'a', newline='') as f:
            csv.writer(f).writerow(row.as_csv())


def read_metrics(path) -> typing.List[MetricRow]:
    with open(path, newline='') as f:
        reader = csv.DictReader(f)
        return [MetricRow(int(r['epoch']), int(r['step']), float(r['loss']), float(r['sal']), float(r['kl']),
                          float(r['lr']), float(r['seconds'])) for r in reader]


def smoothed(values, window: int = SMOOTHING_WINDOW) -> np.ndarray:
    """Trailing moving average; the first window-1 entries average what is available."""
    values = np.asarray(values, dtype=np.float64)
    sums = np.cumsum(values)
    counts = np.minimum(np.arange(1, len(values) + 1), window)
    shifted = np.concatenate([np.zeros(window), sums])[:len(values)]
    return (sums - shifted) / counts


@dataclasses.dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: typing.List[MetricRow]
    checkpoint_path: typing.Optional[pathlib.Path] = None

    @property
    def initial_sal(self) -> float:
        return self.history[0].sal

    def final_sal(self, window: int = SMOOTHING_WINDOW) -> float:
        return float(smoothed([row.sal for row in self.history], window)[-1])


def load_training_shapes(manifest: Manifest) -> typing.List[SampleSet]:
    shapes = []
    for entry in manifest.split(Split.TRAIN):
        try:
            samples = read_archive(entry.archive)
        except (OSError, ValueError) as e:
            raise TrainingError(f'cannot read archive of shape {entry.shape_id}: {e}', shape_id=entry.shape_id)
        shapes.append(samples)
    return shapes


class Trainer:
    """
    Epoch loop over SampleSets: batches of shapes, one Adam step per batch.

    All randomness comes from two named streams (query/batch draws and latent noise) whose
    states travel with the checkpoint, so a resumed run continues the same trajectory.
    """

    def __init__(self, shapes: typing.List[SampleSet], config: Config, params: ModelParams,
                 out_dir=None, adam: typing.Optional[AdamState] = None, epoch: int = 0, step: int = 0,
                 rng_states: typing.Optional[dict] = None):
        if not shapes:
            raise TrainingError('no train shapes to fit')
        for samples in shapes:
            if not samples.n_queries:
                raise TrainingError(f'shape {samples.shape_id} has no query points', shape_id=samples.shape_id)

        self.shapes = shapes
        self.config = config
        self.settings = config.train
        self.model = get_model(params.arch)
        self.params = params
        self.trainable = params.subset('decoder.') if self.settings.decoder_only else params
        self.adam = adam or AdamState.for_params(self.trainable)
        self.epoch = epoch
        self.step = step
        self.out_dir = pathlib.Path(out_dir) if out_dir is not None else None

        seed = self.settings.seed
        self.data_rng = seeding.stream(seed, seeding.DATA, 'train')
        self.latent_rng = seeding.stream(seed, seeding.LATENT)
        if rng_states:
            self.data_rng.bit_generator.state = rng_states['data']
            self.latent_rng.bit_generator.state = rng_states['latent']

        self.metrics = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            self.metrics = MetricsLog(self.out_dir / METRICS_NAME)

    @classmethod
    def from_checkpoint(cls, checkpoint: Checkpoint, shapes, out_dir=None, epochs: typing.Optional[int] = None):
        config = copy.deepcopy(checkpoint.config)
        if epochs is not None:
            config.train.epochs = epochs
            config.validate()
        return cls(shapes, config, checkpoint.params, out_dir, adam=checkpoint.adam, epoch=checkpoint.epoch,
                   step=checkpoint.step, rng_states=checkpoint.rng_states)

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.config, self.epoch, self.step, self.params, self.adam, {
            'data': self.data_rng.bit_generator.state,
            'latent': self.latent_rng.bit_generator.state,
        })

    def run(self) -> TrainResult:
        settings = self.settings
        history = []
        checkpoint_path = None
        mode = 'decoder-only' if settings.decoder_only else 'encoder-decoder'
        logging.info(f'TRAIN: {self.params.arch} {mode}, {len(self.shapes)} shapes, '
                     f'epochs {self.epoch}->{settings.epochs}, seed {settings.seed}')

        while self.epoch < settings.epochs:
            lr = lr_at(self.epoch, settings)
            order = self.data_rng.permutation(len(self.shapes))
            epoch_rows = []
            for first in range(0, len(order), settings.batch_size):
                batch = [self.shapes[i] for i in order[first:first + settings.batch_size]]
                row = self._step(batch, lr)
                epoch_rows.append(row)
                if self.metrics is not None:
                    self.metrics.write(row)
            history.extend(epoch_rows)
            self.epoch += 1
            logging.info(f'TRAIN: epoch {self.epoch}/{settings.epochs} step {self.step} '
                         f'loss {np.mean([r.loss for r in epoch_rows]):.6g} lr {lr:.6g}')

            if self.out_dir is not None and (self.epoch % settings.checkpoint_every == 0
                                             or self.epoch == settings.epochs):
                checkpoint_path = self._save()
        return TrainResult(self.checkpoint(), history, checkpoint_path)

    def _save(self) -> pathlib.Path:
        checkpoint = self.checkpoint()
        path = self.out_dir / f'checkpoint-{self.epoch:04d}.salc'
        save_checkpoint(checkpoint, path)
        save_checkpoint(checkpoint, self.out_dir / LATEST_NAME)
        return path

    def _step(self, batch: typing.List[SampleSet], lr: float) -> MetricRow:
        started = time.monotonic()
        self.params.zero_grad()
        weight = 1.0 / len(batch)
        totals = np.zeros(3)
        for samples in batch:
            terms = self._shape_terms(samples)
            values = np.array([terms.total.item(), terms.sal.item(), terms.kl.item() if terms.kl is not None else 0.0])
            if not np.isfinite(values).all():
                raise TrainingError(
                    f'non-finite loss on shape {samples.shape_id} at epoch {self.epoch}, step {self.step + 1}',
                    shape_id=samples.shape_id, epoch=self.epoch, step=self.step + 1,
                )
            backward(F.scale(terms.total, weight))
            totals += values * weight

        adam_step(self.trainable, None, self.adam, lr)
        self.step += 1
        return MetricRow(self.epoch, self.step, *totals.tolist(), lr, time.monotonic() - started)

    def _shape_terms(self, samples: SampleSet) -> LossTerms:
        settings = self.settings
        picked = self.data_rng.integers(0, samples.n_queries, size=settings.points_per_shape)
        queries = Tensor(samples.queries[picked].T)
        h = Tensor(samples.h[picked])

        if settings.decoder_only:
            mu = eta = None
            z = Tensor(np.zeros(LATENT_DIM))
        else:
            cloud = samples.input_cloud
            if settings.input_points < len(cloud):
                cloud = cloud[self.data_rng.choice(len(cloud), size=settings.input_points, replace=False)]
            mu, eta = self.model.encode(self.params, Tensor(cloud.T))
            z = sample_latent(mu, eta, self.latent_rng)
        f = self.model.decode(self.params, z, queries)
        return loss_terms(f, h, mu, eta, settings.kl_weight)


def initial_params(config: Config) -> ModelParams:
    model = config.model
    return init_params(model.arch, model.init, config.train.seed, radius=model.sphere_radius)


def train(manifest: Manifest, config: Config, out_dir) -> TrainResult:
    shapes = load_training_shapes(manifest)
    return Trainer(shapes, config, initial_params(config), out_dir).run()


def resume(checkpoint_path, manifest: Manifest, out_dir, epochs: typing.Optional[int] = None) -> TrainResult:
    checkpoint = load_checkpoint(checkpoint_path)
    shapes = load_training_shapes(manifest)
    return Trainer.from_checkpoint(checkpoint, shapes, out_dir, epochs).run()


def overfit_config(config: Config, steps: int, arch: typing.Optional[str] = None) -> Config:
    """Single-shape decoder-only settings: one step per epoch and no learning-rate decay."""
    config = copy.deepcopy(config)
    if arch is not None:
        config.model.arch = arch
    config.train.decoder_only = True
    config.train.batch_size = 1
    config.train.epochs = steps
    config.train.schedule_period = steps
    config.train.checkpoint_every = steps
    return config.validate()


def overfit(samples: SampleSet, config: Config, steps: int, arch: typing.Optional[str] = None,
            out_dir=None) -> TrainResult:
    config = overfit_config(config, steps, arch)
    return Trainer([samples], config, initial_params(config), out_dir).run()


@dataclasses.dataclass
class DecoderComparison:
    arch: str
    decoder_params: int
    total_params: int
    initial_sal: float
    final_sal: float


def compare_decoders(soup: TriangleSoup, steps: int, config: typing.Optional[Config] = None,
                     shape_id: str = 'compare') -> typing.List[DecoderComparison]:
    """Decoder-only overfit of one shape with each architecture under the same step budget."""
    config = config or Config().validate()
    normalized, _, _ = normalize(soup)
    samples = generate_samples(normalized, config.data, seeding.stream(config.train.seed, seeding.DATA, shape_id),
                               shape_id)
    rows = []
    for arch in Architecture.values:
        result = overfit(samples, config, steps, arch)
        params = result.checkpoint.params
        rows.append(DecoderComparison(arch, param_count(params.subset('decoder.')), param_count(params),
                                      result.initial_sal, result.final_sal()))
        logging.info(f'TRAIN: {arch} decoder-only over {steps} steps, sal {rows[-1].initial_sal:.6g} '
                     f'-> {rows[-1].final_sal:.6g}')
    return rows
