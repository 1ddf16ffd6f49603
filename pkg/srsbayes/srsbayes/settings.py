"""
Django settings for the srsbayes project.

This file contains the core configuration for the project: installed apps,
logging, and the numerical defaults used by the empirical Bayes commands in
the `ebayes` app.

Environment-specific variables are loaded from a .env file (see `manage.py`)
and read here through python-decouple.
For more information on this file, see
https://docs.djangoproject.com/en/5.2/topics/settings/
"""

from pathlib import Path

from decouple import config

# --- Core Paths and Security ---

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Nothing is signed or served, but Django refuses to start without a key.
SECRET_KEY = config('DJANGO_SECRET_KEY', default="django-insecure-srsbayes-local-only")

DEBUG = config('DJANGO_DEBUG', default=False, cast=bool)

ALLOWED_HOSTS = []


# --- Application Definitions ---

INSTALLED_APPS = [
    # Third-party apps
    'rest_framework',

    # Local apps
    'ebayes',
]

# The commands work on files only; Django falls back to its dummy backend.
DATABASES = {}

USE_TZ = True
TIME_ZONE = "UTC"


# --- Empirical Bayes Defaults ---

# Default seed for every command; `--seed` overrides it.
SRSBAYES_SEED = config('SRSBAYES_SEED', default=1, cast=int)

# Worker processes for tuning grids and simulation replicates (1 = sequential).
SRSBAYES_N_JOBS = config('SRSBAYES_N_JOBS', default=1, cast=int)

# Optional path to the statin2025_44 table for the dataset-conditional tests.
SRSBAYES_STATIN44_CSV = config('SRSBAYES_STATIN44_CSV', default='')

# Runs the desk-scale simulation study in the test suite (about half an hour).
SRSBAYES_SLOW_TESTS = config('SRSBAYES_SLOW_TESTS', default=False, cast=bool)

SRSBAYES = {
    'ECM_TOL': 1e-8,
    'ECM_MAX_ITER': 5000,
    'INIT_EPS': 1e-6,
    'MAX_COMPONENTS': 200,
    'KM_SUPPORT_SIZE': 100,
    'EFRON_SUPPORT_SIZE': 120,
    'N_POSTERIOR_DRAWS': 10000,
    'DETECTION_CUTOFF': 1.001,
    'DETECTION_PROB': 0.95,
    'CREDIBLE_LEVEL': 0.90,
    'ALPHA_GRID': [0.0, 0.1, 0.3, 0.5, 0.7, 0.9],
    'EFRON_P_GRID': [40, 60, 80, 100, 120],
    'EFRON_C0_GRID': [1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
}


# --- Logging ---
# Command results go to stdout; diagnostics go to stderr through this config.

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'stderr': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'ebayes': {
            'handlers': ['stderr'],
            'level': config('SRSBAYES_LOG_LEVEL', default='INFO'),
            'propagate': False,
        },
    },
}
