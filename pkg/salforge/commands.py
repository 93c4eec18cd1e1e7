import logging
import os
import sys
import traceback

from django.core.management.base import BaseCommand, CommandError

from salforge.config import Config, ConfigError, default_config, load_config
from salforge.nn.params import ConfigurationError

USAGE_ERROR = 2
OPERATION_ERROR = 1


def worker_count(value=None, configured=None) -> int:
    """--workers, then SALFORGE_THREADS, then the config file value, then 1."""
    env = os.getenv('SALFORGE_THREADS', '').strip()
    if value is not None:
        workers = value
    elif env:
        try:
            workers = int(env)
        except ValueError:
            raise ConfigError(f'SALFORGE_THREADS must be an integer, got {env!r}')
    else:
        workers = configured if configured is not None else 1
    if workers < 1:
        raise ConfigError(f'workers must be positive, got {workers}')
    return workers


class SalforgeCommand(BaseCommand):
    """
    Base for pipeline commands: resolves --config and --seed, and maps failures to exit
    codes (2 for usage or configuration problems, 1 for failed operations).
    """
    log_tag = 'SALFORGE'

    def add_arguments(self, parser):
        parser.add_argument('--config', default=None, help='YAML config file (defaults to SALFORGE_CONFIG or built-ins)')
        parser.add_argument('--seed', type=int, default=None, help='overrides train.seed for every random stream')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def resolve_config(self, options) -> Config:
        config = load_config(options['config']) if options.get('config') else default_config()
        if options.get('seed') is not None:
            if options['seed'] < 0:
                raise ConfigError(f'seed must not be negative, got {options["seed"]}')
            config.train.seed = options['seed']
        return config

    def handle(self, *args, **options):
        try:
            config = self.resolve_config(options)
            options.pop('config', None)
            return self.run(config, **options)
        except (ConfigError, ConfigurationError) as e:
            raise CommandError(f'configuration error: {e}', returncode=USAGE_ERROR)
        except CommandError:
            raise
        except Exception as e:
            logging.error(f'{self.log_tag} ERROR: {e}')
            logging.error('\n'.join(traceback.format_exception(*sys.exc_info())))
            raise CommandError(f'{self.log_tag.lower()} failed: {e}', returncode=OPERATION_ERROR)

    def run(self, config: Config, **options):
        raise NotImplementedError

    def banner(self, message: str, config: Config):
        self.stdout.write(self.style.NOTICE(f'{message} (seed {config.train.seed})'))
