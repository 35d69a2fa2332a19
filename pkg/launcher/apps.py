from django.apps import AppConfig


class LauncherConfig(AppConfig):
    name = 'launcher'
    verbose_name = 'Launch lines and Slurm scripts'
