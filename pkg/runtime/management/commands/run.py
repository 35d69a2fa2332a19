import argparse

from django.core.management.base import CommandError

from runtime.container import RUNTIME_FAILURE_STATUS, run
from runtime.exceptions import RuntimeFailure
from runtime.models import Bind, ContainerSpec
from udss.command import UDSSCommand
from udss.serializers import ENV_POLICIES


def bind_argument(text):
    try:
        return Bind.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


class Command(UDSSCommand):
    help = (
        'Run a command inside an unpacked rootfs as the invoking user, '
        'e.g. "run /tmp/tf -- python train.py". Options go before ROOTFS. '
        'Exits with the command\'s status, 125 if the container could not be started.'
    )

    def add_arguments(self, parser):
        parser.add_argument(
            '-w', '--writable', action='store_true',
            help='allow writes into the unpacked image (default: read-only)',
        )
        parser.add_argument(
            '-b', '--bind', action='append', type=bind_argument, default=[],
            metavar='SRC[:DST[:ro]]',
            help='bind-mount host path SRC at DST inside the container (repeatable)',
        )
        parser.add_argument(
            '-c', '--cd', dest='workdir', default=None, metavar='DIR',
            help='initial working directory inside the container (default: the image\'s, else /)',
        )
        parser.add_argument(
            '--env-policy', choices=ENV_POLICIES, default=None,
            help='environment of the contained process (default: inherit-host)',
        )
        parser.add_argument('rootfs', help='unpacked image directory')
        parser.add_argument('command', nargs=argparse.REMAINDER, help='-- CMD [ARGS...]')

    def config_flags(self, options):
        flags = super().config_flags(options)
        flags['DEFAULT_ENV_POLICY'] = options.get('env_policy')
        return flags

    def error_exit_code(self, error):
        if isinstance(error, RuntimeFailure):
            return RUNTIME_FAILURE_STATUS
        return super().error_exit_code(error)

    def handle(self, *args, **options):
        command = list(options['command'])
        if command[:1] == ['--']:
            command = command[1:]
        if not command:
            raise CommandError("missing command: run ROOTFS -- CMD [ARGS...]", returncode=1)
        spec = ContainerSpec(
            rootfs=options['rootfs'],
            command=command,
            binds=options['bind'],
            env_policy=self.config.default_env_policy,
            workdir=options['workdir'],
            writable=options['writable'],
            site_bind_dirs=self.config.site_bind_dirs,
        )
        self.exit_code = run(spec)
