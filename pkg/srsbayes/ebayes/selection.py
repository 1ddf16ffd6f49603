"""
Information criteria and hyperparameter tuning.

- General-gamma: AIC(alpha) = 2 (3 K*) - 2 log L and BIC(alpha) =
  3 K* log(I J) - 2 log L, where K* counts retained non-empty components and
  log L is the unpenalized marginal likelihood at the estimate. Every alpha on
  the grid is fitted from the same initialization seed.
- Efron: AIC_E(p, c0) = 2 trace(F) - 2 log L over the Cartesian (p, c0) grid,
  all on one shared support.

Non-converged rows stay in the report but are never selected.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .discrete_models import efron_aic, efron_fit, make_support
from .exceptions import ModelSpecError, SelectionError
from .gamma_mixture import fit_general_gamma

# Standard logger for this module
logger = logging.getLogger(__name__)

CRITERIA = ('AIC', 'BIC')
DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
DEFAULT_P_GRID = (40, 60, 80, 100, 120)
DEFAULT_C0_GRID = (1e-5, 1e-4, 1e-3, 1e-2, 1e-1)


def _require_gamma_fit(fit):
    if not fit.is_gamma_mixture:
        raise ModelSpecError(f"information criteria need a gamma-mixture fit, got '{fit.model}'")


def aic_general_gamma(fit):
    """AIC = 2 (3 K*) - 2 log L."""
    _require_gamma_fit(fit)
    return 2.0 * 3 * fit.K_star - 2.0 * fit.log_marginal_likelihood


def bic_general_gamma(fit, n_cells=None):
    """
    BIC = (3 K*) log(I J) - 2 log L.

    Args:
        n_cells (float, optional): I * J; defaults to the cell count recorded on the fit.
    """
    _require_gamma_fit(fit)
    if n_cells is None:
        n_cells = fit.diagnostics['n_cells']
    return 3 * fit.K_star * math.log(n_cells) - 2.0 * fit.log_marginal_likelihood


@dataclass
class TuneReport:
    """
    One row per grid point.

    Attributes:
        model (str): 'general-gamma' or 'efron'.
        rows (list[dict]): Hyperparameters, AIC, BIC (general-gamma only),
            num_mixture or trace_F, logL and converged, in grid order.
        selected_by_AIC (int | None): Row index minimizing AIC among converged rows.
        selected_by_BIC (int | None): Same for BIC.
    """
    model: str
    rows: list = field(default_factory=list)
    selected_by_AIC: int = None
    selected_by_BIC: int = None

    def __post_init__(self):
        self.selected_by_AIC = _argmin(self.rows, 'AIC')
        self.selected_by_BIC = _argmin(self.rows, 'BIC')

    def selected(self, criterion):
        return self.selected_by_AIC if criterion == 'AIC' else self.selected_by_BIC

    def to_frame(self):
        return pd.DataFrame(self.rows)

    def to_table(self):
        """The printed tuning table, one line per grid point."""
        if self.model == 'efron':
            lines = ['p c0 AIC trace_F']
            for row in self.rows:
                lines.append(f"{row['p']} {row['c0']:g} {_fixed(row['AIC'])} {_fixed(row['trace_F'])}")
        else:
            lines = ['alpha AIC BIC num_mixture']
            for row in self.rows:
                lines.append(f"{row['alpha']:g} {_fixed(row['AIC'])} {_fixed(row['BIC'])} {row['num_mixture']}")
        return "\n".join(lines)


@dataclass
class TuneResult:
    """A tuning report with the selected fit and every fitted model, in grid order."""
    report: TuneReport
    best_fit: object
    all_fits: list
    criterion: str

    @property
    def best_aic_fit(self):
        return _pick(self.all_fits, self.report.selected_by_AIC)

    @property
    def best_bic_fit(self):
        return _pick(self.all_fits, self.report.selected_by_BIC)


def _pick(fits, index):
    return None if index is None else fits[index]


def _fixed(value):
    return 'NA' if value is None or not np.isfinite(value) else f"{value:.3f}"


def _argmin(rows, key):
    candidates = [
        (row[key], index) for index, row in enumerate(rows)
        if row['converged'] and row.get(key) is not None and np.isfinite(row[key])
    ]
    return min(candidates)[1] if candidates else None


def run_grid(worker, tasks, n_jobs=1):
    """Applies `worker` to every task, in a process pool when n_jobs > 1; results keep task order."""
    tasks = list(tasks)
    if n_jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(n_jobs, len(tasks))) as executor:
            return list(executor.map(worker, tasks))
    return [worker(task) for task in tasks]


def _fit_alpha(task):
    table, E, alpha, options = task
    return fit_general_gamma(table, E, alpha=alpha, **options)


def _fit_efron(task):
    table, E, p, c0, support, options = task
    fit = efron_fit(table, E, p=p, c0=c0, support=support, **options)
    if fit.converged:
        try:
            efron_aic(fit, table, E)
        except ModelSpecError as exc:
            logger.warning(f"AIC_E undefined at p={p}, c0={c0}: {exc}")
    return fit


def _finish(report, fits, criterion):
    index = report.selected(criterion)
    if index is None:
        raise SelectionError(f"no fit on the grid converged; nothing to select under {criterion}", report=report)
    logger.info(f"{criterion} selects row {index}: {report.rows[index]}")
    return TuneResult(report=report, best_fit=fits[index], all_fits=fits, criterion=criterion)


def tune_general_gamma(table, E, alpha_vec=DEFAULT_ALPHA_GRID, criterion='AIC', n_jobs=1, **fit_options):
    """
    Fits general-gamma at every alpha with a shared seed and selects by AIC or BIC.

    Args:
        alpha_vec (list[float]): Nonempty grid of values in [0, 1].
        criterion (str): 'AIC' or 'BIC'.
        n_jobs (int): Worker processes for the grid.
        **fit_options: Passed to `fit_general_gamma` (K, tol, max_iter, eps, seed).

    Returns:
        TuneResult

    Raises:
        SelectionError: If no grid point converged; carries the report.
    """
    alpha_vec = [float(alpha) for alpha in alpha_vec]
    if not alpha_vec:
        raise ModelSpecError("the alpha grid is empty")
    if criterion not in CRITERIA:
        raise ModelSpecError(f"unknown criterion '{criterion}'; choose AIC or BIC")
    for alpha in alpha_vec:
        if not 0.0 <= alpha <= 1.0:
            raise ModelSpecError(f"alpha must lie in [0, 1], got {alpha}")

    fits = run_grid(_fit_alpha, [(table, E, alpha, fit_options) for alpha in alpha_vec], n_jobs=n_jobs)
    rows = []
    for alpha, fit in zip(alpha_vec, fits):
        rows.append({
            'alpha': alpha,
            'AIC': aic_general_gamma(fit),
            'BIC': bic_general_gamma(fit),
            'num_mixture': fit.K_star,
            'logL': fit.log_marginal_likelihood,
            'converged': fit.converged,
        })
        logger.info(f"tuning alpha={alpha}: AIC={rows[-1]['AIC']:.3f} BIC={rows[-1]['BIC']:.3f} K*={fit.K_star}")
    return _finish(TuneReport(model='general-gamma', rows=rows), fits, criterion)


def tune_efron(table, E, p_vec=DEFAULT_P_GRID, c0_vec=DEFAULT_C0_GRID, criterion='AIC', n_jobs=1,
               K=120, **fit_options):
    """
    Fits Efron's model over the (p, c0) grid and selects by AIC_E.

    All grid points share one support of max(K, max(p) + 1) points.

    Returns:
        TuneResult
    """
    p_vec = [int(p) for p in p_vec]
    c0_vec = [float(c0) for c0 in c0_vec]
    if not p_vec or not c0_vec:
        raise ModelSpecError("the (p, c0) grid is empty")
    if criterion != 'AIC':
        raise ModelSpecError("Efron's model is tuned by AIC only")
    support = make_support(table, E, K=max(K, max(p_vec) + 1))
    grid = [(p, c0) for p in p_vec for c0 in c0_vec]
    fits = run_grid(_fit_efron, [(table, E, p, c0, support, fit_options) for p, c0 in grid], n_jobs=n_jobs)
    rows = []
    for (p, c0), fit in zip(grid, fits):
        rows.append({
            'p': p,
            'c0': c0,
            'AIC': fit.diagnostics.get('aic_e'),
            'BIC': None,
            'trace_F': fit.diagnostics.get('trace_F'),
            'logL': fit.log_marginal_likelihood,
            'converged': fit.converged,
        })
        logger.info(f"tuning p={p} c0={c0}: AIC_E={_fixed(rows[-1]['AIC'])}")
    return _finish(TuneReport(model='efron', rows=rows), fits, criterion)
