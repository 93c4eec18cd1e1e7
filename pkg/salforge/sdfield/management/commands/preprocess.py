from django.core.management.base import CommandError

from salforge.commands import SalforgeCommand, OPERATION_ERROR, worker_count
from salforge.sdfield.preprocess import ShapeStatus, preprocess_directory


class Command(SalforgeCommand):
    help = 'Normalize meshes, label query points with unsigned distances and write archives plus a manifest'
    log_tag = 'PREPROCESS'

    def add_command_arguments(self, parser):
        parser.add_argument('--mesh-dir', required=True)
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--workers', type=int, default=None)
        parser.add_argument('--verify', type=float, default=0.01,
                            help='fraction of queries re-labelled by exhaustive search')

    def run(self, config, **options):
        workers = worker_count(options['workers'])
        seed = config.train.seed
        self.banner(f'Preprocessing {options["mesh_dir"]} into {options["out_dir"]} with {workers} worker(s)', config)

        report = preprocess_directory(options['mesh_dir'], options['out_dir'], config.data, seed,
                                      workers=workers, verify_fraction=options['verify'])
        self.stdout.write(f'written: {report.count(ShapeStatus.WRITTEN)}')
        self.stdout.write(f'skipped: {report.count(ShapeStatus.SKIPPED)}')
        self.stdout.write(f'failed: {report.count(ShapeStatus.FAILED)}')
        self.stdout.write(f'manifest: {report.manifest_path}')
        if report.failed:
            names = ', '.join(r.shape_id for r in report.failed)
            raise CommandError(f'{len(report.failed)} shape(s) failed: {names}', returncode=OPERATION_ERROR)
