from django.apps import AppConfig


class NnConfig(AppConfig):
    name = 'salforge.nn'
