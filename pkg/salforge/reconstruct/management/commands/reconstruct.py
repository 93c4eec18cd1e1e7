from salforge.commands import SalforgeCommand, worker_count
from salforge.config import ConfigError
from salforge.geometry.mesh import load_mesh, write_mesh
from salforge.reconstruct.inference import as_scan, reconstruct
from salforge.training.checkpoint import load_checkpoint


class Command(SalforgeCommand):
    help = 'Reconstruct a surface mesh from a scan (mesh or point cloud) with a trained checkpoint'
    log_tag = 'RECONSTRUCT'

    def add_command_arguments(self, parser):
        parser.add_argument('--checkpoint', required=True)
        parser.add_argument('--input', required=True, help='OBJ/PLY scan; a PLY without faces is a point cloud')
        parser.add_argument('--out', required=True, help='output mesh (.obj or .ply)')
        parser.add_argument('--resolution', type=int, default=None, help='grid points per axis, default 100')
        parser.add_argument('--workers', type=int, default=None)

    def run(self, config, **options):
        resolution = options['resolution']
        if resolution is not None and resolution < 2:
            raise ConfigError(f'resolution must be at least 2, got {resolution}')
        checkpoint = load_checkpoint(options['checkpoint'])
        workers = worker_count(options['workers'], checkpoint.config.reconstruct.workers)
        if options['seed'] is not None:
            checkpoint.config.train.seed = config.train.seed
        resolution = resolution or checkpoint.config.reconstruct.resolution
        self.banner(f'Reconstructing {options["input"]} with {checkpoint.arch} at R={resolution}', checkpoint.config)

        result = reconstruct(checkpoint, as_scan(load_mesh(options['input'])), resolution, workers)
        write_mesh(result.soup, options['out'], comments=result.comments(checkpoint.config.train.seed))
        self.stdout.write(f'vertices: {len(result.soup.vertices)}, triangles: {len(result.soup)}')
        self.stdout.write(f'mesh: {options["out"]}')
