from django.apps import AppConfig


class ReconstructConfig(AppConfig):
    name = 'salforge.reconstruct'
