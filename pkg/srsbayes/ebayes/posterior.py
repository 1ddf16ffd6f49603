"""
Per-cell posteriors of the signal strength lambda_ij, and everything derived
from them: posterior draws, signal detection, credible intervals and scaled
Wasserstein distances to a true value.

Two posterior families arise:

- Gamma-mixture priors give a gamma-mixture posterior. Component k has
  weight proportional to w_k f_NB(N_ij | r_k, theta_ijk) and is
  Gamma(shape=r_k + N_ij, rate=1/h_k + E_ij).
- Discrete priors (KM, Efron) give a discrete posterior on the same support
  with mass proportional to g_k f_pois(N_ij | v_k E_ij).

Detection and summaries use the closed-form CDFs and never consume draws.
Draws use one counter-based substream per cell, keyed by (seed, cell index),
so the output does not depend on the order cells are visited.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats
from scipy.special import gammainc, gammaincc, logsumexp

from .exceptions import ModelSpecError
from .gamma_mixture import cell_vectors, nb_log_pmf
from .results import GAMMA_MODELS

# Standard logger for this module
logger = logging.getLogger(__name__)

QUANTILE_TOL = 1e-10
QUANTILE_MAX_ITER = 400
BRACKET_SDS = 40.0
MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class GammaMixturePosterior:
    """
    A gamma-mixture posterior for one cell.

    Attributes:
        weights (np.ndarray): Posterior component weights (simplex).
        shapes (np.ndarray): r_k + N_ij.
        rates (np.ndarray): 1/h_k + E_ij.
    """
    weights: np.ndarray
    shapes: np.ndarray
    rates: np.ndarray

    kind = 'gamma_mixture'

    def component_means(self):
        return self.shapes / self.rates

    def component_variances(self):
        return self.shapes / self.rates ** 2

    def mean(self):
        return float(np.dot(self.weights, self.component_means()))

    def second_moment_about(self, value):
        """E(lambda - value)^2 = sum_k w_k [Var_k + (mean_k - value)^2]."""
        means = self.component_means()
        return float(np.dot(self.weights, self.component_variances() + (means - value) ** 2))

    def cdf(self, x):
        return float(np.dot(self.weights, gammainc(self.shapes, self.rates * x)))

    def sf(self, x):
        return float(np.dot(self.weights, gammaincc(self.shapes, self.rates * x)))

    def quantile(self, q):
        return float(_gamma_mixture_quantiles(
            self.weights[None, :], self.shapes[None, :], self.rates[None, :], q,
        )[0])

    def sample(self, rng, size):
        components = rng.choice(self.weights.size, size=size, p=self.weights)
        return rng.gamma(self.shapes[components], 1.0 / self.rates[components])


@dataclass(frozen=True, eq=False)
class DiscretePosterior:
    """
    A discrete posterior for one cell.

    Attributes:
        support (np.ndarray): Support points v_k.
        masses (np.ndarray): Posterior masses (simplex).
    """
    support: np.ndarray
    masses: np.ndarray

    kind = 'discrete'

    def mean(self):
        return float(np.dot(self.masses, self.support))

    def second_moment_about(self, value):
        return float(np.dot(self.masses, (self.support - value) ** 2))

    def cdf(self, x):
        return float(self.masses[self.support <= x].sum())

    def sf(self, x):
        """Pr(lambda >= x), the tail used by the detection rule."""
        return float(self.masses[self.support >= x].sum())

    def quantile(self, q):
        return float(_discrete_quantiles(self.support, self.masses[None, :], q)[0])

    def sample(self, rng, size):
        return rng.choice(self.support, size=size, p=self.masses)


@dataclass(frozen=True, eq=False)
class PosteriorDraws:
    """
    Posterior draws for every cell of a table.

    Attributes:
        draws (np.ndarray): Shape (S, I, J), all finite and nonnegative.
        seed (int): Seed the draws were generated from.
        model (str): Model tag of the fit.
    """
    draws: np.ndarray
    seed: int
    model: str

    @property
    def S(self):
        return self.draws.shape[0]


@dataclass(frozen=True, eq=False)
class _PosteriorTable:
    """Posterior parameters for all cells at once, one row per cell (row-major)."""
    kind: str
    weights: np.ndarray
    shapes: np.ndarray = None
    rates: np.ndarray = None
    support: np.ndarray = None

    def cell(self, index):
        if self.kind == 'gamma_mixture':
            return GammaMixturePosterior(
                weights=self.weights[index], shapes=self.shapes[index], rates=self.rates[index],
            )
        return DiscretePosterior(support=self.support, masses=self.weights[index])


def _posterior_table(fit, table, E):
    counts, expected = cell_vectors(table, E)
    prior = fit.prior
    if fit.model in GAMMA_MODELS:
        active = prior.weights > 0
        shapes, scales = prior.shapes[active], prior.scales[active]
        log_joint = np.log(prior.weights[active])[None, :] + nb_log_pmf(counts, expected, shapes, scales)
        weights = np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])
        return _PosteriorTable(
            kind='gamma_mixture',
            weights=weights,
            shapes=shapes[None, :] + counts[:, None],
            rates=1.0 / scales[None, :] + expected[:, None],
        )
    masses = np.asarray(prior.masses)
    active = masses > 0
    support = np.asarray(prior.support)[active]
    log_joint = np.log(masses[active])[None, :] + stats.poisson.logpmf(
        counts[:, None], expected[:, None] * support[None, :],
    )
    weights = np.exp(log_joint - logsumexp(log_joint, axis=1)[:, None])
    return _PosteriorTable(kind='discrete', weights=weights, support=support)


def cell_posterior(fit, table, E, i, j):
    """
    The posterior of lambda_ij under a fitted prior.

    Returns:
        GammaMixturePosterior | DiscretePosterior
    """
    n_rows, n_cols = table.shape
    if not (0 <= i < n_rows and 0 <= j < n_cols):
        raise IndexError(f"cell ({i}, {j}) is outside a {n_rows} x {n_cols} table")
    return _posterior_table(fit, table, E).cell(i * n_cols + j)


def posterior_mean(fit, table, E):
    """The I x J matrix of posterior means E(lambda_ij | N_ij)."""
    post = _posterior_table(fit, table, E)
    if post.kind == 'gamma_mixture':
        means = np.sum(post.weights * post.shapes / post.rates, axis=1)
    else:
        means = post.weights @ post.support
    return means.reshape(table.shape)


def _gamma_mixture_cdf(weights, shapes, rates, x):
    return np.sum(weights * gammainc(shapes, rates * x[:, None]), axis=1)


def _gamma_mixture_quantiles(weights, shapes, rates, q):
    """Vectorised bisection of the mixture CDF, one row per cell."""
    n_cells = weights.shape[0]
    lower = np.zeros(n_cells)
    upper = np.max(shapes / rates + BRACKET_SDS * np.sqrt(shapes) / rates, axis=1)
    for _ in range(QUANTILE_MAX_ITER):
        short = _gamma_mixture_cdf(weights, shapes, rates, upper) < q
        if not short.any():
            break
        upper = np.where(short, upper * 2.0, upper)
    for _ in range(QUANTILE_MAX_ITER):
        mid = (lower + upper) / 2.0
        below = _gamma_mixture_cdf(weights, shapes, rates, mid) < q
        lower = np.where(below, mid, lower)
        upper = np.where(below, upper, mid)
        if np.all(upper - lower <= QUANTILE_TOL * np.maximum(upper, 1.0)):
            break
    return (lower + upper) / 2.0


def _discrete_quantiles(support, masses, q):
    """The left-continuous inverse min{v_k : F(v_k) >= q}, one row per cell."""
    cumulative = np.cumsum(masses, axis=1)
    index = np.argmax(cumulative >= q - MASS_TOL, axis=1)
    return support[index]


def _check_probability(name, value):
    if not 0.0 < value < 1.0:
        raise ModelSpecError(f"{name} must lie strictly between 0 and 1, got {value}")


def tail_probabilities(fit, table, E, cutoff=1.001):
    """The I x J matrix of Pr(lambda_ij >= cutoff | N_ij) from the closed-form CDFs."""
    post = _posterior_table(fit, table, E)
    if post.kind == 'gamma_mixture':
        tails = np.sum(post.weights * gammaincc(post.shapes, post.rates * cutoff), axis=1)
    else:
        tails = post.weights[:, post.support >= cutoff].sum(axis=1)
    return np.clip(tails, 0.0, 1.0).reshape(table.shape)


def detect_signals(fit, table, E, cutoff=1.001, prob=0.95):
    """
    Flags cell (i, j) when Pr(lambda_ij >= cutoff | data) > prob.

    Returns:
        tuple[np.ndarray, np.ndarray]: The boolean I x J detection matrix and
        the tail-probability matrix it was thresholded from.
    """
    if cutoff <= 1.0:
        raise ModelSpecError(f"the detection cutoff must be greater than 1, got {cutoff}")
    _check_probability('prob', prob)
    tails = tail_probabilities(fit, table, E, cutoff=cutoff)
    detected = tails > prob
    logger.info(f"{int(detected.sum())} signal(s) detected (model={fit.model}, cutoff={cutoff}, prob={prob})")
    return detected, tails


def detect_signals_from_draws(posterior_draws, cutoff=1.001, prob=0.95):
    """The draw-based detection rule: the share of draws >= cutoff exceeds prob."""
    if cutoff <= 1.0:
        raise ModelSpecError(f"the detection cutoff must be greater than 1, got {cutoff}")
    _check_probability('prob', prob)
    tails = np.mean(posterior_draws.draws >= cutoff, axis=0)
    return tails > prob, tails


def posterior_summary(fit, table, E, level=0.90):
    """
    Posterior medians and equi-tailed credible intervals for every cell.

    Returns:
        dict: 'median', 'lower' and 'upper', each an I x J matrix.
    """
    _check_probability('level', level)
    post = _posterior_table(fit, table, E)
    tail = (1.0 - level) / 2.0
    summary = {}
    for name, q in (('lower', tail), ('median', 0.5), ('upper', 1.0 - tail)):
        if post.kind == 'gamma_mixture':
            values = _gamma_mixture_quantiles(post.weights, post.shapes, post.rates, q)
        else:
            values = _discrete_quantiles(post.support, post.weights, q)
        summary[name] = values.reshape(table.shape)
    summary['lower'] = np.minimum(summary['lower'], summary['median'])
    summary['upper'] = np.maximum(summary['upper'], summary['median'])
    return summary


def posterior_draws(fit, table, E, S=10000, seed=1):
    """
    S posterior draws of every lambda_ij.

    Each cell draws from its own generator seeded by SeedSequence(seed,
    spawn_key=(cell,)): a component (or support point) index from the
    posterior weights, then a value from that component.
    """
    if S < 1:
        raise ModelSpecError(f"the number of posterior draws must be positive, got {S}")
    post = _posterior_table(fit, table, E)
    n_cells = post.weights.shape[0]
    draws = np.empty((S, n_cells))
    for cell in range(n_cells):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(cell,)))
        draws[:, cell] = post.cell(cell).sample(rng, S)
    logger.debug(f"drew {S} posterior sample(s) for {n_cells} cell(s) (model={fit.model}, seed={seed})")
    return PosteriorDraws(draws=draws.reshape((S,) + table.shape), seed=seed, model=fit.model)


def _mean_absolute_deviation(posterior, value):
    """E|lambda - value| as the integral of F below value plus the integral of 1 - F above it."""
    if posterior.kind == 'discrete':
        return float(np.dot(posterior.masses, np.abs(posterior.support - value)))
    below, _ = integrate.quad(posterior.cdf, 0.0, value, limit=200)
    above, _ = integrate.quad(posterior.sf, value, np.inf, limit=200)
    return below + above


def scaled_wasserstein(posterior, lambda_true, p=2, mode='closed_form', S=10000, seed=1):
    """
    W_p(posterior, point mass at lambda_true) / lambda_true.

    Args:
        posterior (GammaMixturePosterior | DiscretePosterior): One cell's posterior.
        lambda_true (float): The true signal strength, > 0.
        p (int): 1 or 2; p = 2 is the scaled posterior root mean squared error.
        mode (str): 'closed_form' or 'monte_carlo' (S draws from `seed`).
    """
    if lambda_true <= 0:
        raise ModelSpecError(f"lambda_true must be positive, got {lambda_true}")
    if p not in (1, 2):
        raise ModelSpecError(f"p must be 1 or 2, got {p}")
    if mode == 'monte_carlo':
        rng = np.random.default_rng(seed)
        draws = posterior.sample(rng, S)
        return wasserstein_from_draws(draws, lambda_true, p=p)
    if mode != 'closed_form':
        raise ModelSpecError(f"unknown mode '{mode}'; choose 'closed_form' or 'monte_carlo'")
    if p == 2:
        return float(np.sqrt(max(posterior.second_moment_about(lambda_true), 0.0)) / lambda_true)
    return _mean_absolute_deviation(posterior, lambda_true) / lambda_true


def wasserstein_from_draws(draws, lambda_true, p=2):
    """(mean |draw - lambda_true|^p)^(1/p) / lambda_true over all draws given."""
    if lambda_true <= 0:
        raise ModelSpecError(f"lambda_true must be positive, got {lambda_true}")
    deviation = np.mean(np.abs(np.asarray(draws, dtype=float) - lambda_true) ** p)
    return float(deviation ** (1.0 / p) / lambda_true)


def wasserstein_matrix(fit, table, E, lambda_value=1.0, p=2):
    """Closed-form scaled W_p of every cell's posterior against `lambda_value`, as an I x J matrix."""
    post = _posterior_table(fit, table, E)
    n_cells = post.weights.shape[0]
    if p == 2:
        if post.kind == 'gamma_mixture':
            means = post.shapes / post.rates
            second = np.sum(post.weights * (post.shapes / post.rates ** 2 + (means - lambda_value) ** 2), axis=1)
        else:
            second = post.weights @ (post.support - lambda_value) ** 2
        values = np.sqrt(np.maximum(second, 0.0)) / lambda_value
    else:
        values = np.array([
            scaled_wasserstein(post.cell(cell), lambda_value, p=p) for cell in range(n_cells)
        ])
    return values.reshape(table.shape)
