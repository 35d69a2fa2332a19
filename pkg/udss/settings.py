"""
Django settings for the udss toolchain.

udss never opens a database or serves HTTP; Django supplies the settings
layer, the management-command CLI, the template engine and the test runner.
"""

from pathlib import Path
import os

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Only used for signing, which udss never does.
SECRET_KEY = os.getenv('UDSS_SECRET_KEY', 'udss-offline-toolchain-no-signing')

DEBUG = os.getenv('UDSS_DEBUG', 'False') == 'True'

ALLOWED_HOSTS = []

# Application definition
INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'django.contrib.auth',
    # Third party apps
    'rest_framework',
    # Local apps
    'images',
    'archive',
    'runtime',
    'launcher',
    'bench',
]

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [],
        },
    },
]

# No database: every test is a SimpleTestCase.
DATABASES = {}

# Internationalization
LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = False
USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

# REST Framework settings (serializers and JSON rendering only)
REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'DEFAULT_PARSER_CLASSES': [
        'rest_framework.parsers.JSONParser',
    ],
    'UNAUTHENTICATED_USER': None,
}

# Logging: everything goes to stderr so contained-process stdout stays clean.
UDSS_LOGGERS = ['udss', 'images', 'archive', 'runtime', 'launcher', 'bench']

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '[{levelname}] {message}',
            'style': '{',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'stream': 'ext://sys.stderr',
            'formatter': 'plain',
        },
    },
    'loggers': {
        name: {
            'handlers': ['console'],
            # raised or lowered by VERBOSITY once GlobalConfig is loaded
            'level': 'WARNING',
            'propagate': False,
        }
        for name in UDSS_LOGGERS
    },
}

# Built-in defaults for GlobalConfig. Precedence on top of these:
# flag > UDSS_<KEY> environment variable > config file.
UDSS_ENV_PREFIX = 'UDSS_'

UDSS_DEFAULT_CONFIG_FILE = Path(
    os.getenv('XDG_CONFIG_HOME', Path.home() / '.config')
) / 'udss' / 'udss.conf'

UDSS_DEFAULTS = {
    'SITE_BIND_DIRS': '',
    'DEFAULT_ENV_POLICY': 'inherit-host',
    'VERBOSITY': 1,
    'GZIP_LEVEL': 6,
    'THREAD_ENV_VAR': 'OMP_NUM_THREADS',
    'MPIRUN': 'mpirun',
    'MPIRUN_FLAGS': '',
    'RUNTIME_PROGRAM': 'udss',
    'MODULE_NAME': 'udss',
    'OVERHEAD_THRESHOLD': 0.02,
    'MEMORY_SAMPLE_INTERVAL': 0.05,
}
