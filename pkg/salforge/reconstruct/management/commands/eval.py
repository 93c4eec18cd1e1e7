from salforge.commands import SalforgeCommand, worker_count
from salforge.config import ConfigError
from salforge.reconstruct.evaluation import evaluate, write_report
from salforge.sdfield.manifest import Split, load_manifest
from salforge.training.checkpoint import load_checkpoint


class Command(SalforgeCommand):
    help = 'Reconstruct every shape of a manifest split and report Chamfer percentiles (x1e3)'
    log_tag = 'EVAL'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--manifest', required=True)
        parser.add_argument('--split', default=Split.TEST, choices=Split.values)
        parser.add_argument('--out', required=True, help='CSV report')
        parser.add_argument('--resolution', type=int, default=None)
        parser.add_argument('--workers', type=int, default=None)

    def run(self, config, **options):
        resolution = options['resolution']
        if resolution is not None and resolution < 2:
            raise ConfigError(f'resolution must be at least 2, got {resolution}')
        checkpoint = load_checkpoint(options['checkpoint'])
        workers = worker_count(options['workers'], checkpoint.config.reconstruct.workers)
        if options['seed'] is not None:
            checkpoint.config.train.seed = config.train.seed
        manifest = load_manifest(options['manifest'])
        self.banner(f'Evaluating {checkpoint.arch} on the {options["split"]} split of {options["manifest"]}',
                    checkpoint.config)

        report = evaluate(checkpoint, manifest, options['split'], resolution, workers)
        path = write_report(report, options['out'])
        for row in report.rows:
            self.stdout.write(f'{row.split} {row.reference} p{row.percentile}: {row.value:.6g}')
        self.stdout.write(f'report: {path}')
