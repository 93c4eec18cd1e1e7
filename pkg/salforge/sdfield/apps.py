from django.apps import AppConfig


class SdfieldConfig(AppConfig):
    name = 'salforge.sdfield'
