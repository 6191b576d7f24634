# kcstudio/settings.py
"""
Django settings for the kcstudio project.

The project has no web surface: Django provides settings, the management
command CLI, the experiment ledger (SQLite) and the test runner.

Values are read with python-decouple from the environment or a local .env file.
"""

from pathlib import Path
from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing is served; the key only satisfies Django's startup checks.
SECRET_KEY = config('SECRET_KEY', default='kcstudio-local-only')

DEBUG = config('DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'django.contrib.contenttypes',
    'karl',
]

MIDDLEWARE = []


# Database (experiment ledger)

DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': config('KARL_LEDGER_DB', default=str(BASE_DIR / 'db.sqlite3')),
    }
}

LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = False

USE_TZ = True

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# --- KARL runtime ---

# Deterministic-mode toggle for training and evaluation.
KARL_DETERMINISTIC = config('KARL_DETERMINISTIC', default=True, cast=bool)

# Every command writes under its own run directory inside this root.
KARL_RUNS_ROOT = Path(config('KARL_RUNS_ROOT', default=str(BASE_DIR / 'runs')))

KARL_DEVICE = config('KARL_DEVICE', default='cpu')

KARL_LOG_LEVEL = config('KARL_LOG_LEVEL', default='INFO')


LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'karl': {
            'handlers': ['console'],
            'level': KARL_LOG_LEVEL,
            'propagate': False,
        },
    },
}
