from salforge.commands import SalforgeCommand
from salforge.config import ConfigError
from salforge.nn.architectures import get_model
from salforge.sdfield.manifest import load_manifest
from salforge.training.checkpoint import load_checkpoint
from salforge.training.trainer import Trainer, initial_params, load_training_shapes


class Command(SalforgeCommand):
    help = 'Train an encoder/decoder (or a decoder alone) on the train split of a manifest'
    log_tag = 'TRAIN'

    def add_command_arguments(self, parser):
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--out', required=True, help='directory for checkpoints and metrics.csv')
        parser.add_argument('--resume', default=None, help='checkpoint to continue from')
        parser.add_argument('--epochs', type=int, default=None, help='overrides train.epochs')

    def run(self, config, **options):
        if options['epochs'] is not None and options['epochs'] < 1:
            raise ConfigError(f'epochs must be positive, got {options["epochs"]}')

        checkpoint = load_checkpoint(options['resume']) if options['resume'] else None
        if checkpoint is not None:
            config = checkpoint.config
        elif options['epochs'] is not None:
            config.train.epochs = options['epochs']

        manifest = load_manifest(options['manifest'])
        shapes = load_training_shapes(manifest)
        model = get_model(config.model.arch)

        start = f'resuming at epoch {checkpoint.epoch}' if checkpoint else f'{config.model.init} init'
        self.banner(f'Training {config.model.arch} on {len(shapes)} shape(s), {start}', config)
        self.stdout.write(f'encoder: {model.encoder.param_count():,} parameters')
        self.stdout.write(f'decoder: {model.decoder.param_count():,} parameters')

        if checkpoint is not None:
            trainer = Trainer.from_checkpoint(checkpoint, shapes, options['out'], options['epochs'])
        else:
            trainer = Trainer(shapes, config, initial_params(config), options['out'])
        result = trainer.run()

        last = result.history[-1] if result.history else None
        self.stdout.write(f'epochs: {trainer.epoch}, steps: {trainer.step}')
        if last is not None:
            self.stdout.write(f'final loss: {last.loss:.6g} (sal {last.sal:.6g}, kl {last.kl:.6g})')
        if result.checkpoint_path is not None:
            self.stdout.write(f'checkpoint: {result.checkpoint_path}')
