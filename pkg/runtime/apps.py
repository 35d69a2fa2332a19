from django.apps import AppConfig


class RuntimeConfig(AppConfig):
    name = 'runtime'
    verbose_name = 'Unprivileged container runtime'
