"""
Shared plumbing for the management commands.

Every command subclasses `SrsBayesCommand`, which turns library exceptions
into `CommandError`s with the project's exit codes:

    0  success
    2  usage error (bad option combination, invalid hyperparameter or config)
    3  data error (unreadable table, invalid fit file, digest mismatch)
    4  non-convergence (the result is still written)

Results go to stdout with 6 significant digits; files are written
atomically (temporary file in the target directory, then rename) with full
precision.
"""

import io
import json
import logging
import os
import tempfile
import zipfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from .discrete_models import efron_aic, efron_fit, km_fit
from .exceptions import DataError, ModelSpecError, SelectionError, SrsBayesError, TableFormatError
from .gamma_mixture import fit_general_gamma, fit_gps, fit_kgamma
from .selection import aic_general_gamma, bic_general_gamma
from .serializers import FitSerializer
from .tables import EXPECTED_METHODS, expected_counts_for, load_table

# Standard logger for this module
logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NOT_CONVERGED = 4

DEFAULT_EFRON_P = 40
DEFAULT_EFRON_C0 = 1e-3


class UsageError(SrsBayesError):
    """An option combination the command does not accept."""


class NotConverged(SrsBayesError):
    """Raised after the outputs are written when a fit did not converge."""


def fmt(value):
    """Formats a number with 6 significant digits."""
    return f"{value:.6g}"


def defaults():
    return settings.SRSBAYES


def write_atomic(path, content, mode='w'):
    """Writes `content` to `path` through a temporary file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_path = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix='.tmp')
    try:
        with os.fdopen(handle, mode, **({} if 'b' in mode else {'encoding': 'utf-8'})) as stream:
            stream.write(content)
        os.replace(temp_path, path)
    except BaseException:
        if os.path.exists(temp_path):
            os.remove(temp_path)
        raise
    logger.debug(f"wrote {path}")


def write_json(path, payload):
    write_atomic(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def write_frame(path, frame, index=True):
    write_atomic(path, frame.to_csv(index=index, lineterminator="\n"))


def npz_bytes(arrays):
    """A compressed .npz archive with fixed entry timestamps, so equal arrays give equal bytes."""
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, 'w', compression=zipfile.ZIP_DEFLATED) as archive:
        for name, array in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            with archive.open(info, 'w', force_zip64=True) as stream:
                np.lib.format.write_array(stream, np.asanyarray(array), allow_pickle=False)
    return buffer.getvalue()


def matrix_frame(matrix, table):
    """An I x J matrix as a frame with AE rows and drug columns."""
    frame = pd.DataFrame(matrix, index=list(table.ae_names), columns=list(table.drug_names))
    frame.index.name = 'AE'
    return frame


def table_frame(table):
    return matrix_frame(table.counts, table)


def read_json(path, what):
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{what} not found: {path}")
    try:
        return json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} {path} is not valid JSON: {exc}")


def load_fit(path):
    """
    Reads a fit file.

    Returns:
        tuple: (FitResult, ContingencyTable, ExpectedCounts)

    Raises:
        DataError: If the file is invalid or its table does not match the digest.
    """
    serializer = FitSerializer(data=read_json(path, 'fit file'))
    if not serializer.is_valid():
        raise DataError(f"invalid fit file {path}: {serializer.errors}")
    return serializer.save()


class SrsBayesCommand(BaseCommand):
    """
    Base class for the srsbayes commands; subclasses implement `run(**options)`.
    """

    def add_seed_argument(self, parser):
        parser.add_argument('--seed', type=int, default=None,
                            help="Random seed (default: SRSBAYES_SEED).")

    def seed(self, options):
        return options['seed'] if options.get('seed') is not None else settings.SRSBAYES_SEED

    def n_jobs(self, options):
        return options['n_jobs'] if options.get('n_jobs') is not None else settings.SRSBAYES_N_JOBS

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except (UsageError, ModelSpecError) as exc:
            raise CommandError(str(exc), returncode=EXIT_USAGE)
        except (TableFormatError, DataError) as exc:
            logger.error(f"{self.__module__.rsplit('.', 1)[-1]} failed: {exc}", exc_info=True)
            raise CommandError(str(exc), returncode=EXIT_DATA)
        except (NotConverged, SelectionError) as exc:
            raise CommandError(str(exc), returncode=EXIT_NOT_CONVERGED)

    def run(self, **options):
        raise NotImplementedError('subclasses of SrsBayesCommand must provide a run() method')


def add_table_arguments(parser):
    """The table CSV and the expected-count options shared by fit and tune."""
    parser.add_argument('table', help="Contingency table CSV (AE rows, drug columns).")
    parser.add_argument('--expected', choices=EXPECTED_METHODS, default='subtable',
                        help="Null expected-count estimator (default: subtable).")
    parser.add_argument('--fallback-marginal', action='store_true',
                        help="Use marginal expected counts when the subtable estimator is undefined.")
    parser.add_argument('--reference-row', default=None, help="AE to use as the reference row.")
    parser.add_argument('--reference-col', default=None, help="Drug to use as the reference column.")


def load_table_and_expected(options):
    table = load_table(options['table'], reference_row=options['reference_row'],
                       reference_col=options['reference_col'])
    return table, expected_counts_for(table, options['expected'], fallback_marginal=options['fallback_marginal'])


MODEL_OPTIONS = {
    'GPS': set(),
    'k-gamma': {'K'},
    'general-gamma': {'alpha', 'K'},
    'KM': {'support_size'},
    'efron': {'p', 'c0', 'support_size'},
}
OPTION_FLAGS = {'alpha': '--alpha', 'K': '--K', 'p': '--p', 'c0': '--c0', 'support_size': '--support-size'}


def check_model_options(model, options):
    """Rejects hyperparameters that do not belong to `model` (e.g. --alpha with KM)."""
    given = {name for name in OPTION_FLAGS if options.get(name) is not None}
    extra = sorted(given - MODEL_OPTIONS[model])
    if extra:
        raise UsageError(f"{OPTION_FLAGS[extra[0]]} does not apply to --model {model}")
    if model == 'general-gamma' and options.get('alpha') is None:
        raise UsageError("--model general-gamma needs --alpha")


def fit_model(table, E, model, options, seed):
    """Fits `model` with the command-line hyperparameters, falling back to the settings defaults."""
    d = defaults()
    ecm = {
        'tol': options.get('tol') or d['ECM_TOL'],
        'max_iter': options.get('max_iter') or d['ECM_MAX_ITER'],
        'eps': d['INIT_EPS'],
        'seed': seed,
    }
    if model == 'GPS':
        return fit_gps(table, E, **ecm)
    if model == 'k-gamma':
        return fit_kgamma(table, E, K=options.get('K') or 3, **ecm)
    if model == 'general-gamma':
        return fit_general_gamma(table, E, alpha=options['alpha'], K=options.get('K'), **ecm)
    limits = {'max_iter': options['max_iter']} if options.get('max_iter') else {}
    if model == 'KM':
        if options.get('tol'):
            limits['tol'] = options['tol']
        return km_fit(table, E, K=options.get('support_size') or d['KM_SUPPORT_SIZE'], **limits)
    c0 = options.get('c0')
    return efron_fit(
        table, E, p=options.get('p') or DEFAULT_EFRON_P, c0=DEFAULT_EFRON_C0 if c0 is None else c0,
        K=options.get('support_size') or d['EFRON_SUPPORT_SIZE'], **limits,
    )


def criteria_for(fit, table, E):
    """AIC and BIC for gamma-mixture fits; AIC_E for converged Efron fits; nothing for KM."""
    if fit.is_gamma_mixture:
        return {'AIC': aic_general_gamma(fit), 'BIC': bic_general_gamma(fit)}
    if fit.model == 'efron' and fit.converged:
        try:
            return {'AIC': efron_aic(fit, table, E), 'BIC': None}
        except ModelSpecError as exc:
            logger.warning(f"AIC_E unavailable: {exc}")
    return {}
