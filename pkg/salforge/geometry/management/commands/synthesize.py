import logging
import pathlib

from salforge import seeding
from salforge.commands import SalforgeCommand
from salforge.geometry.mesh import write_mesh
from salforge.geometry.shapes import SHAPES, punch_holes


class Command(SalforgeCommand):
    help = 'Write synthetic meshes (optionally with holes) for desk-scale runs'
    log_tag = 'SYNTHESIZE'

    def add_command_arguments(self, parser):
        parser.add_argument('--out-dir', required=True)
        parser.add_argument('--shapes', nargs='+', choices=list(SHAPES), default=list(SHAPES))
        parser.add_argument('--holes', type=float, default=0.0, help='fraction of triangles to drop')
        parser.add_argument('--format', choices=['ply', 'obj'], default='ply')

    def run(self, config, **options):
        out_dir = pathlib.Path(options['out_dir'])
        out_dir.mkdir(parents=True, exist_ok=True)
        seed = config.train.seed
        self.banner(f'Writing {len(options["shapes"])} synthetic shape(s) to {out_dir}', config)

        for name in options['shapes']:
            soup = SHAPES[name]()
            if options['holes'] > 0:
                soup = punch_holes(soup, options['holes'], seeding.stream(seed, seeding.DATA, 'holes', name))
            path = out_dir / f'{name}.{options["format"]}'
            write_mesh(soup, path, comments=[f'synthetic {name}', f'seed {seed}'])
            logging.info(f'SYNTHESIZE: {name} with {len(soup)} triangles written to {path}')
            self.stdout.write(f'{path}')
