"""
Base class for every udss subcommand.

Adds the global --config flag, resolves GlobalConfig before handle() runs and
turns UDSSError into CommandError with the matching exit code.
"""
from contextlib import contextmanager
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from .conf import configure_verbosity, load_config
from .exceptions import OutputError, UDSSError


@contextmanager
def writing(path):
    """Turn an OSError raised while writing path into OutputError"""
    try:
        yield Path(path)
    except OSError as e:
        raise OutputError(f"Cannot write {path}: {e.strerror or e}") from e


class UDSSCommand(BaseCommand):
    requires_system_checks = []
    suppressed_base_arguments = {
        '--version', '--settings', '--pythonpath', '--traceback',
        '--no-color', '--force-color', '--skip-checks',
    }

    # Exit code set by commands that propagate a child's status (run).
    exit_code = 0

    def create_parser(self, prog_name, subcommand, **kwargs):
        parser = super().create_parser(prog_name, subcommand, **kwargs)
        parser.add_argument(
            '--config', dest='config_file', metavar='PATH', default=None,
            help='key=value config file (default: $UDSS_CONFIG or ~/.config/udss/udss.conf)',
        )
        # None lets UDSS_VERBOSITY and the config file apply when -v is absent.
        parser.set_defaults(verbosity=None)
        return parser

    def config_flags(self, options):
        """Map command-line options onto GlobalConfig keys"""
        return {'VERBOSITY': options.get('verbosity')}

    def write_output(self, path, text, append=False, mode=None):
        """Write text to path, or append to it; mode is applied afterwards"""
        with writing(path) as target:
            with target.open('a' if append else 'w') as handle:
                handle.write(text)
            if mode is not None:
                target.chmod(mode)
        return target

    def error_exit_code(self, error):
        return error.exit_code

    def execute(self, *args, **options):
        try:
            self.config = load_config(
                flags=self.config_flags(options),
                config_file=options.get('config_file'),
            )
            configure_verbosity(self.config.verbosity)
            return super().execute(*args, **options)
        except UDSSError as e:
            raise CommandError(str(e), returncode=self.error_exit_code(e)) from e
