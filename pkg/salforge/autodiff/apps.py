from django.apps import AppConfig


class AutodiffConfig(AppConfig):
    name = 'salforge.autodiff'
