"""
Django settings for the salforge project.

The project has no database and no HTTP surface: Django provides the app registry,
the management commands that make up the command line, and the test runner.
"""

import os

import yaml

from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'salforge-local-only')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'salforge.autodiff',
    'salforge.nn',
    'salforge.geometry',
    'salforge.sdfield',
    'salforge.training',
    'salforge.reconstruct',
]

DATABASES = {}

TIME_ZONE = 'UTC'

USE_TZ = True

# Enable logging
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'console': {
            'format': '%(levelname)s [%(name)s:%(lineno)s] %(module)s | %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'console',
        },
    },
    'loggers': {
        '': {
            'level': os.getenv('SALFORGE_LOG_LEVEL', 'INFO'),
            'handlers': ['console'],
        },
    },
}

# Default pipeline config: $SALFORGE_CONFIG, then config.yaml next to manage.py, then built-in defaults
CONFIG_PATH = os.getenv('SALFORGE_CONFIG') or os.path.join(BASE_DIR, 'config.yaml')

CONFIG_DATA = {}
if os.path.exists(CONFIG_PATH):
    with open(CONFIG_PATH) as f:
        CONFIG_DATA = yaml.safe_load(f) or {}

# Extra acceptance runs (long overfits, full-resolution reconstructions) in the test suite
SLOW_TESTS = os.getenv('SALFORGE_SLOW_TESTS', '') == '1'
