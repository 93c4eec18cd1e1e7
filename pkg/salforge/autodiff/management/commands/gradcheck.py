from django.core.management.base import CommandError

from salforge.autodiff.gradcheck import CHECK_MODULES, run_checks
from salforge.commands import SalforgeCommand, OPERATION_ERROR


class Command(SalforgeCommand):
    help = 'Compare analytic gradients with central finite differences in float64'
    log_tag = 'GRADCHECK'

    def add_command_arguments(self, parser):
        parser.add_argument('--module', choices=['all'] + list(CHECK_MODULES), default='all')

    def run(self, config, **options):
        modules = list(CHECK_MODULES) if options['module'] == 'all' else [options['module']]
        self.banner(f'Gradient checks for {", ".join(modules)}', config)

        results = run_checks(modules)
        failed = [r for r in results if not r.passed]
        worst = max(results, key=lambda r: r.error / r.threshold)
        self.stdout.write(f'checks: {len(results)}, failed: {len(failed)}')
        self.stdout.write(f'worst: {worst.module}.{worst.name} error={worst.error:.3e} '
                          f'threshold={worst.threshold:.0e}')
        if failed:
            raise CommandError(f'{len(failed)} gradient check(s) above threshold', returncode=OPERATION_ERROR)
