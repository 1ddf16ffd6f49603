"""
Simulated SRS tables and the replication-based evaluation of fitted models.

Tables are generated from a reference table by a multinomial draw with the
reference grand total and cell probabilities

    p_ij proportional to (1 - z_ij) lambda_ij p_i* p_j*,

where p_i* and p_j* are the reference row and column shares, lambda_ij the
true signal strengths and z_ij the structural-zero indicators. Structural
zeros never fall on the reference row or column.

Fitted models are scored on the signal cells with the scaled Wasserstein
distance between each posterior and a point mass at the true lambda_ij:
its mean and max over signal cells, averaged over replicates.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .exceptions import DataError, ModelSpecError
from .gamma_mixture import fit_general_gamma
from .posterior import posterior_draws, wasserstein_from_draws
from .selection import DEFAULT_ALPHA_GRID, run_grid, tune_general_gamma
from .tables import ContingencyTable, expected_counts_for, load_table

# Standard logger for this module
logger = logging.getLogger(__name__)

SYNTHETIC_REFERENCE = Path(__file__).resolve().parent / 'fixtures' / 'synthetic_reference.csv'
DEFAULT_SIGNAL_CELLS = ((0, 0), (6, 0), (8, 0))
DEFAULT_LAMBDA_GRID = (1.2, 1.4, 1.6, 2.0, 2.5, 3.0, 4.0)
DEFAULT_ZI_GRID = (0.0, 0.25, 0.5)
DEFAULT_POLICIES = ('fix_0', 'fix_0.5', 'fix_0.9', 'AIC', 'BIC')
METRIC_NAMES = {2: ('average_scaled_rmse', 'max_scaled_rmse'), 1: ('average_scaled_w1', 'max_scaled_w1')}


def _reference_mask(shape):
    mask = np.zeros(shape, dtype=bool)
    mask[-1, :] = True
    mask[:, -1] = True
    return mask


@dataclass(frozen=True, eq=False)
class SignalMatrix:
    """
    True signal strengths lambda_ij: 0 for a structural zero, 1 for a
    non-signal and > 1 for a signal. The reference row and column are 1.
    """
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2 or min(values.shape) < 2:
            raise ModelSpecError("a signal matrix must be a 2-d matrix with at least 2 rows and columns")
        if not np.all(np.isfinite(values)) or np.any((values != 0) & (values < 1)):
            raise ModelSpecError("signal strengths must be 0 or at least 1")
        if np.any(values[_reference_mask(values.shape)] != 1):
            raise ModelSpecError("the reference row and column of a signal matrix must equal 1")
        values.flags.writeable = False
        object.__setattr__(self, 'values', values)

    @classmethod
    def homogeneous(cls, shape, signal_cells, strength):
        """All ones except `strength` at each (i, j) in `signal_cells`."""
        values = np.ones(shape)
        for i, j in signal_cells:
            values[i, j] = strength
        return cls(values)

    @property
    def signal_cells(self):
        return [tuple(int(k) for k in cell) for cell in np.argwhere(self.values > 1)]


@dataclass(frozen=True, eq=False)
class ZeroIndicator:
    """
    Structural-zero positions; always false on the reference row and column.

    Attributes:
        z (np.ndarray): Boolean I x J matrix.
        origin (str): 'bernoulli', 'quantile' or 'explicit'.
    """
    z: np.ndarray
    origin: str = 'explicit'

    def __post_init__(self):
        z = np.array(self.z, dtype=bool)
        if z.ndim != 2:
            raise ModelSpecError("a zero indicator must be a 2-d matrix")
        z[_reference_mask(z.shape)] = False
        z.flags.writeable = False
        object.__setattr__(self, 'z', z)

    @classmethod
    def none(cls, shape):
        return cls(np.zeros(shape, dtype=bool))

    def excluding(self, cells):
        """A copy with the given cells forced to non-zero."""
        z = self.z.copy()
        for i, j in cells:
            z[i, j] = False
        return ZeroIndicator(z, origin=self.origin)


def zero_indicator_from_E(E, q):
    """
    Marks cells whose expected count is at most the q-th empirical quantile of
    all E_ij (linear interpolation, ties at the threshold included). q = 0
    means no structural zeros.
    """
    if not 0.0 <= q < 1.0:
        raise ModelSpecError(f"the zero quantile must lie in [0, 1), got {q}")
    values = np.asarray(E.values)
    if q == 0:
        return ZeroIndicator(np.zeros(values.shape, dtype=bool), origin='quantile')
    return ZeroIndicator(values <= np.quantile(values, q), origin='quantile')


def zero_indicator_bernoulli(shape, omega, seed=1):
    """Independent Bernoulli(omega) structural zeros."""
    if not 0.0 <= omega <= 1.0:
        raise ModelSpecError(f"omega must lie in [0, 1], got {omega}")
    rng = np.random.default_rng(seed)
    return ZeroIndicator(rng.random(shape) < omega, origin='bernoulli')


def cell_probabilities(ref_table, signal, zeros):
    """The normalized I x J matrix p_ij used by the multinomial draw."""
    if not (ref_table.shape == signal.values.shape == zeros.z.shape):
        raise DataError(
            f"reference table {ref_table.shape}, signal matrix {signal.values.shape} and "
            f"zero indicator {zeros.z.shape} must have the same shape"
        )
    total = ref_table.grand_total
    if total <= 0:
        raise DataError("the reference table is empty")
    row_share = ref_table.row_totals / total
    col_share = ref_table.col_totals / total
    weights = (~zeros.z) * signal.values * np.outer(row_share, col_share)
    if weights.sum() <= 0:
        raise DataError("every cell probability is zero; check the signal matrix and structural zeros")
    return weights / weights.sum()


def generate_contin_table(ref_table, signal, zeros, n_tables=1, seed=1):
    """
    Draws `n_tables` tables from Multinomial(N.., p), N.. being the reference grand total.

    Table t uses its own generator seeded by SeedSequence(seed, spawn_key=(t,)).

    Returns:
        list[ContingencyTable]: Tables with the reference table's names.
    """
    if n_tables < 1:
        raise ModelSpecError(f"n_tables must be positive, got {n_tables}")
    probabilities = cell_probabilities(ref_table, signal, zeros)
    flat = probabilities.ravel()
    tables = []
    for index in range(n_tables):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))
        counts = rng.multinomial(ref_table.grand_total, flat).reshape(ref_table.shape)
        tables.append(ContingencyTable(counts=counts, ae_names=ref_table.ae_names,
                                       drug_names=ref_table.drug_names))
    return tables


def replicate_metrics(draws, signal, signal_cells, p=2):
    """Mean and max over signal cells of the scaled W_p distance for one replicate."""
    distances = [
        wasserstein_from_draws(draws.draws[:, i, j], signal.values[i, j], p=p) for i, j in signal_cells
    ]
    return float(np.mean(distances)), float(np.max(distances))


def aggregate_metrics(draws_per_replicate, signal, signal_cells, p=2):
    """
    Average-scaled and max-scaled W_p, each averaged over replicates.

    Returns:
        dict: {'average_scaled': float, 'max_scaled': float}
    """
    signal_cells = [tuple(cell) for cell in signal_cells]
    if not signal_cells:
        raise ModelSpecError("aggregate_metrics needs at least one signal cell")
    for i, j in signal_cells:
        if signal.values[i, j] <= 1:
            raise ModelSpecError(f"cell ({i}, {j}) is not a signal cell (lambda = {signal.values[i, j]})")
    per_replicate = np.array([replicate_metrics(draws, signal, signal_cells, p=p) for draws in draws_per_replicate])
    if per_replicate.size == 0:
        raise ModelSpecError("aggregate_metrics needs at least one replicate")
    return {'average_scaled': float(per_replicate[:, 0].mean()), 'max_scaled': float(per_replicate[:, 1].mean())}


@dataclass
class SimulationConfig:
    """
    One simulation study.

    Attributes:
        reference (str | None): Reference table CSV; None uses the synthetic fixture.
        signal_cells (list[tuple[int, int]]): Zero-based (AE, drug) positions of the signals.
        lambda_grid (list[float]): Homogeneous signal strengths, each > 1.
        zi_grid (list[float]): Quantile levels for structural zeros (0 = none).
        n_sim (int): Replicates per (lambda, zi) configuration.
        seed (int): Seed for tables, fits and draws.
        policies (list[str]): 'fix_<alpha>', 'AIC' or 'BIC'.
        alpha_grid (list[float]): Grid searched by the AIC and BIC policies.
        n_posterior_draws (int): Draws per fitted model.
        metrics_p (list[int]): Wasserstein orders to report (1 and/or 2).
        expected_method (str): 'subtable' or 'marginal'.
    """
    reference: str = None
    signal_cells: list = field(default_factory=lambda: [list(cell) for cell in DEFAULT_SIGNAL_CELLS])
    lambda_grid: list = field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    zi_grid: list = field(default_factory=lambda: list(DEFAULT_ZI_GRID))
    n_sim: int = 50
    seed: int = 1
    policies: list = field(default_factory=lambda: list(DEFAULT_POLICIES))
    alpha_grid: list = field(default_factory=lambda: list(DEFAULT_ALPHA_GRID))
    n_posterior_draws: int = 10000
    metrics_p: list = field(default_factory=lambda: [2])
    expected_method: str = 'subtable'

    def __post_init__(self):
        self.signal_cells = [tuple(int(k) for k in cell) for cell in self.signal_cells]
        for policy in self.policies:
            policy_alpha(policy)
        if self.n_sim < 1:
            raise ModelSpecError(f"n_sim must be positive, got {self.n_sim}")
        if any(value <= 1 for value in self.lambda_grid):
            raise ModelSpecError("every signal strength in lambda_grid must exceed 1")
        if any(p not in (1, 2) for p in self.metrics_p):
            raise ModelSpecError("metrics_p may only contain 1 and 2")

    def reference_table(self):
        return load_table(self.reference if self.reference else SYNTHETIC_REFERENCE)


def policy_alpha(policy):
    """The fixed alpha of a 'fix_<alpha>' policy, or None for 'AIC' / 'BIC'."""
    if policy in ('AIC', 'BIC'):
        return None
    if policy.startswith('fix_'):
        try:
            alpha = float(policy[len('fix_'):])
        except ValueError:
            alpha = None
        if alpha is not None and 0.0 <= alpha <= 1.0:
            return alpha
    raise ModelSpecError(f"unknown policy '{policy}'; use fix_<alpha> with alpha in [0, 1], AIC or BIC")


def _fit_policy(policy, table, E, config):
    alpha = policy_alpha(policy)
    if alpha is not None:
        return fit_general_gamma(table, E, alpha=alpha, seed=config.seed)
    return tune_general_gamma(table, E, alpha_vec=config.alpha_grid, criterion=policy, seed=config.seed).best_fit


def _run_replicate(task):
    """Fits every policy on one simulated table; returns per-policy metrics and draws."""
    table, signal, config, keep_draws = task
    E = expected_counts_for(table, config.expected_method, fallback_marginal=True)
    results = {}
    for policy in config.policies:
        fit = _fit_policy(policy, table, E, config)
        draws = posterior_draws(fit, table, E, S=config.n_posterior_draws, seed=config.seed)
        metrics = {p: replicate_metrics(draws, signal, config.signal_cells, p=p) for p in config.metrics_p}
        results[policy] = (metrics, draws if keep_draws else None)
    return results


def run_simulation(config, n_jobs=1, keep_draws=False):
    """
    Runs every (zi, lambda) configuration for n_sim replicates and every policy.

    Returns:
        tuple[pd.DataFrame, dict]: The tidy metrics frame with columns policy,
        zi, lambda, metric_name, value; and, when `keep_draws` is set, the
        posterior draws keyed by (policy, zi, lambda) as lists over replicates.
    """
    ref_table = config.reference_table()
    ref_E = expected_counts_for(ref_table, config.expected_method, fallback_marginal=True)
    records = []
    stored = {}
    for zi in config.zi_grid:
        zeros = zero_indicator_from_E(ref_E, zi).excluding(config.signal_cells)
        for strength in config.lambda_grid:
            signal = SignalMatrix.homogeneous(ref_table.shape, config.signal_cells, strength)
            tables = generate_contin_table(ref_table, signal, zeros, n_tables=config.n_sim, seed=config.seed)
            logger.info(f"simulating zi={zi} lambda={strength}: {config.n_sim} replicate(s)")
            replicates = run_grid(_run_replicate, [(table, signal, config, keep_draws) for table in tables],
                                  n_jobs=n_jobs)
            for policy in config.policies:
                for p in config.metrics_p:
                    values = np.array([replicate[policy][0][p] for replicate in replicates])
                    average_name, max_name = METRIC_NAMES[p]
                    records.append({'policy': policy, 'zi': zi, 'lambda': strength,
                                    'metric_name': average_name, 'value': float(values[:, 0].mean())})
                    records.append({'policy': policy, 'zi': zi, 'lambda': strength,
                                    'metric_name': max_name, 'value': float(values[:, 1].mean())})
                if keep_draws:
                    stored[(policy, zi, strength)] = [replicate[policy][1] for replicate in replicates]
    frame = pd.DataFrame.from_records(records, columns=['policy', 'zi', 'lambda', 'metric_name', 'value'])
    return frame, stored
