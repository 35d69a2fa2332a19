"""
GlobalConfig: one resolved view of every udss setting.

Each key is looked up as command-line flag, then ``UDSS_<KEY>`` in the
environment, then the key=value config file, then ``settings.UDSS_DEFAULTS``.
"""
import logging
import os
from dataclasses import dataclass
from pathlib import Path

from django.conf import settings
from dotenv import dotenv_values

from .exceptions import ConfigError
from .serializers import GlobalConfigSerializer

logger = logging.getLogger(__name__)

LOG_LEVELS = {
    0: logging.ERROR,
    1: logging.WARNING,
    2: logging.INFO,
    3: logging.DEBUG,
}


@dataclass(frozen=True)
class GlobalConfig:
    site_bind_dirs: tuple
    default_env_policy: str
    verbosity: int
    config_file_path: Path | None
    gzip_level: int
    thread_env_var: str
    mpirun: str
    mpirun_flags: tuple
    runtime_program: tuple
    module_name: str
    overhead_threshold: float
    memory_sample_interval: float


def find_config_file(config_file=None, environ=None):
    """
    Locate the config file: explicit path, then $UDSS_CONFIG, then the
    per-user default if it exists. An explicitly named file must exist.
    """
    environ = os.environ if environ is None else environ
    explicit = config_file or environ.get(f'{settings.UDSS_ENV_PREFIX}CONFIG')
    if explicit:
        path = Path(explicit).expanduser()
        if not path.is_file():
            raise ConfigError(f"Config file not found: {path}")
        return path
    default = Path(settings.UDSS_DEFAULT_CONFIG_FILE)
    return default if default.is_file() else None


def read_config_file(path):
    """Read KEY=value pairs; unknown keys are ignored with a warning"""
    values = {}
    for key, value in dotenv_values(path).items():
        key = key.strip().upper()
        if key.startswith(settings.UDSS_ENV_PREFIX):
            key = key[len(settings.UDSS_ENV_PREFIX):]
        if key not in settings.UDSS_DEFAULTS:
            logger.warning(f"Ignoring unknown config key {key} in {path}")
            continue
        if value is not None:
            values[key] = value
    return values


def load_config(flags=None, config_file=None, environ=None):
    """
    Build a GlobalConfig.

    Args:
        flags: mapping of KEY -> value from the command line; None means unset
        config_file: path given with --config
        environ: environment mapping (defaults to os.environ)

    Returns:
        GlobalConfig
    """
    environ = os.environ if environ is None else environ
    path = find_config_file(config_file, environ)

    layered = dict(settings.UDSS_DEFAULTS)
    if path is not None:
        layered.update(read_config_file(path))
    for key in settings.UDSS_DEFAULTS:
        value = environ.get(f'{settings.UDSS_ENV_PREFIX}{key}')
        if value is not None:
            layered[key] = value
    for key, value in (flags or {}).items():
        if value is not None:
            layered[key.upper()] = value

    serializer = GlobalConfigSerializer(data=layered)
    if not serializer.is_valid():
        details = '; '.join(
            f"{key}: {' '.join(str(m) for m in messages)}"
            for key, messages in serializer.errors.items()
        )
        raise ConfigError(f"Invalid configuration: {details}")
    data = serializer.validated_data

    return GlobalConfig(
        site_bind_dirs=tuple(data['SITE_BIND_DIRS']),
        default_env_policy=data['DEFAULT_ENV_POLICY'],
        verbosity=data['VERBOSITY'],
        config_file_path=path,
        gzip_level=data['GZIP_LEVEL'],
        thread_env_var=data['THREAD_ENV_VAR'],
        mpirun=data['MPIRUN'],
        mpirun_flags=tuple(data['MPIRUN_FLAGS']),
        runtime_program=tuple(data['RUNTIME_PROGRAM']),
        module_name=data['MODULE_NAME'],
        overhead_threshold=data['OVERHEAD_THRESHOLD'],
        memory_sample_interval=data['MEMORY_SAMPLE_INTERVAL'],
    )


def configure_verbosity(verbosity):
    """Apply -v 0..3 to every project logger"""
    level = LOG_LEVELS.get(verbosity, logging.DEBUG)
    for name in settings.UDSS_LOGGERS:
        logging.getLogger(name).setLevel(level)
