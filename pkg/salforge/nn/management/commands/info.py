import logging

from salforge.commands import SalforgeCommand
from salforge.nn.architectures import get_model
from salforge.nn.params import Architecture

PUBLISHED_DECODER_COUNT = 363643
SIZE_RATIO_LIMIT = 0.25


class Command(SalforgeCommand):
    help = 'Print encoder and decoder parameter counts of an architecture'
    log_tag = 'INFO'

    def add_command_arguments(self, parser):
        parser.add_argument('--arch', choices=Architecture.values, default=None,
                            help='architecture tag (defaults to model.arch of the config)')

    def run(self, config, **options):
        arch = options['arch'] or config.model.arch
        model = get_model(arch)
        self.banner(f'Architecture {arch}', config)

        self.stdout.write(f'encoder: {model.encoder.param_count():,}')
        self.stdout.write(f'decoder: {model.decoder.param_count():,}')
        self.stdout.write(f'total: {model.param_count():,}')

        if arch == Architecture.LIGHTSAL:
            gap = (model.decoder.param_count() - PUBLISHED_DECODER_COUNT) / PUBLISHED_DECODER_COUNT
            logging.info(f'INFO: lightsal decoder differs from the published {PUBLISHED_DECODER_COUNT:,} '
                         f'by {gap:+.2%}')

        light = get_model(Architecture.LIGHTSAL).param_count()
        baseline = get_model(Architecture.SAL_BASELINE).param_count()
        ratio = light / baseline
        relation = '<' if ratio < SIZE_RATIO_LIMIT else '>='
        self.stdout.write(f'lightsal/sal-baseline total: {light:,}/{baseline:,} = {ratio:.3f} '
                          f'{relation} {SIZE_RATIO_LIMIT}')
