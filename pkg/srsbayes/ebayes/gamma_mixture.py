"""
Gamma-mixture priors: the GPS, K-gamma and general-gamma models.

Under N_ij ~ Poisson(E_ij lambda_ij) with a K-component gamma mixture prior
on lambda, the marginal of N_ij is a mixture of negative binomials with size
r_k and probability theta_ijk = 1 / (1 + E_ij h_k). The prior is fitted with a
bi-level ECM algorithm:

- E step: responsibilities tau_ijk and the expected latent Poisson count
  delta_ijk of the Poisson-logarithmic representation of the negative binomial.
- CM step 1: Dirichlet-shrunk weights (components whose weight hits zero are
  pruned) and shapes r_k = sum(tau * delta) / sum(tau * -log theta).
- CM step 2: scales h_k from the score equation, solved by fixed-point iteration.
- CM step 3: each shape is rescaled along the line r_k h_k = const when a
  coarse grid of factors raises the expected complete-data log-likelihood.

GPS is the K = 2, alpha = 1 case, K-gamma any fixed K with alpha = 1, and
general-gamma starts overfitted (K = min(200, I*J)) with alpha in [0, 1).
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .exceptions import DataError, ModelSpecError
from .results import FitResult

# Standard logger for this module
logger = logging.getLogger(__name__)

ZERO_RATIO_FLOOR = 1e-4
SCALE_FLOOR = 1e-12
INNER_MAX_ITER = 50
INNER_TOL = 1e-10
MAX_COMPONENTS = 200
ASYMPTOTIC_SHAPE = 1e4
PARAMETER_TOL = 1e-3
SHAPE_FACTORS = np.array([1.0, 1e-3, 1e-2, 0.1, 0.5, 0.8, 1.25, 2.0, 10.0, 1e2, 1e3])
SHAPE_BOUNDS = (1e-6, 1e15)
SHAPE_GAIN_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class GammaMixturePrior:
    """
    A finite mixture of gamma distributions; component k is
    Gamma(shape=r_k, rate=1/h_k).

    Attributes:
        weights (np.ndarray): Mixture weights on the simplex.
        shapes (np.ndarray): Shapes r_k > 0.
        scales (np.ndarray): Scales h_k > 0.
    """
    weights: np.ndarray
    shapes: np.ndarray
    scales: np.ndarray

    kind = 'gamma_mixture'

    def __post_init__(self):
        weights = np.atleast_1d(np.asarray(self.weights, dtype=float))
        shapes = np.atleast_1d(np.asarray(self.shapes, dtype=float))
        scales = np.atleast_1d(np.asarray(self.scales, dtype=float))
        if not (weights.shape == shapes.shape == scales.shape) or weights.ndim != 1:
            raise ModelSpecError("weights, shapes and scales must be vectors of the same length")
        if weights.size == 0:
            raise ModelSpecError("a gamma mixture needs at least one component")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ModelSpecError("mixture weights must be nonnegative and sum to 1")
        if np.any(~np.isfinite(shapes)) or np.any(shapes <= 0):
            raise ModelSpecError("gamma shapes must be positive and finite")
        if np.any(~np.isfinite(scales)) or np.any(scales <= 0):
            raise ModelSpecError("gamma scales must be positive and finite")
        for name, value in (('weights', weights), ('shapes', shapes), ('scales', scales)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def n_components(self):
        return int(np.count_nonzero(self.weights > 0))

    @property
    def rates(self):
        return 1.0 / self.scales

    def mean(self):
        return float(np.sum(self.weights * self.shapes * self.scales))

    def to_dict(self):
        return {
            'kind': self.kind,
            'weights': self.weights.tolist(),
            'shapes': self.shapes.tolist(),
            'scales': self.scales.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(weights=payload['weights'], shapes=payload['shapes'], scales=payload['scales'])


@dataclass
class EcmState:
    """
    Quantities computed by one E step.

    Attributes:
        prior (GammaMixturePrior): The parameters the expectations were taken at.
        responsibilities (np.ndarray): tau, shape (cells, K); rows sum to 1.
        latent_counts (np.ndarray): delta = E(M | N, S = k), shape (cells, K).
        theta (np.ndarray): 1 / (1 + E h_k), shape (cells, K).
        log_marginal (np.ndarray): log p(N_ij) per cell.
        iteration (int): Index u of the parameters.
    """
    prior: GammaMixturePrior
    responsibilities: np.ndarray
    latent_counts: np.ndarray
    theta: np.ndarray
    log_marginal: np.ndarray
    iteration: int = 0


def cell_vectors(table, E):
    if table.shape != E.values.shape:
        raise DataError(f"table shape {table.shape} does not match expected-count shape {E.values.shape}")
    return table.counts.ravel().astype(float), E.values.ravel()


def log_rising_factorial(shapes, counts):
    """
    log Gamma(r + N) - log Gamma(r), elementwise.

    For r >= 1e4 the difference of the Stirling series is taken term by term,
    (r - 1/2) log(1 + N/r) + N log(r + N) - N + ..., so the result keeps its
    absolute precision when r is in the millions and N is small.
    """
    r, n = np.broadcast_arrays(np.asarray(shapes, dtype=float), np.asarray(counts, dtype=float))
    large = r >= ASYMPTOTIC_SHAPE
    safe_r = np.where(large, r, ASYMPTOTIC_SHAPE)
    y = safe_r + n
    stirling = (
        (safe_r - 0.5) * np.log1p(n / safe_r) + n * np.log(y) - n
        - n / (12.0 * safe_r * y)
        + n * (safe_r ** 2 + safe_r * y + y ** 2) / (360.0 * safe_r ** 3 * y ** 3)
    )
    small_r = np.where(large, 1.0, r)
    direct = gammaln(small_r + n) - gammaln(small_r)
    return np.where(large, stirling, direct)


def nb_log_pmf(counts, expected, shapes, scales):
    """
    log f_NB(N | r_k, theta = 1 / (1 + E h_k)) for every cell and component.

    Args:
        counts (np.ndarray): Counts, shape (cells,).
        expected (np.ndarray): Expected counts, shape (cells,).
        shapes, scales (np.ndarray): Component parameters, shape (K,).

    Returns:
        np.ndarray: Shape (cells, K).
    """
    counts = np.asarray(counts, dtype=float)[:, None]
    eh = np.asarray(expected, dtype=float)[:, None] * np.asarray(scales, dtype=float)[None, :]
    shapes = np.asarray(shapes, dtype=float)[None, :]
    return (
        log_rising_factorial(shapes, counts) - gammaln(counts + 1.0)
        + counts * np.log(eh) - (counts + shapes) * np.log1p(eh)
    )


def digamma_difference(shapes, counts):
    """
    psi(r + N) - psi(r), elementwise.

    For r >= 1e4 the difference of the asymptotic expansions is used, so the
    result keeps its relative precision when N is small next to r.
    """
    r, n = np.broadcast_arrays(np.asarray(shapes, dtype=float), np.asarray(counts, dtype=float))
    large = r >= ASYMPTOTIC_SHAPE
    safe_r = np.where(large, r, ASYMPTOTIC_SHAPE)
    y = safe_r + n
    asymptotic = (
        np.log1p(n / safe_r)
        + n / (2.0 * safe_r * y)
        + n * (safe_r + y) / (12.0 * safe_r ** 2 * y ** 2)
        - n * (safe_r + y) * (safe_r ** 2 + y ** 2) / (120.0 * safe_r ** 4 * y ** 4)
    )
    small_r = np.where(large, 1.0, r)
    direct = digamma(small_r + n) - digamma(small_r)
    return np.where(large, asymptotic, direct)


def _log_joint(counts, expected, prior):
    with np.errstate(divide='ignore'):
        log_weights = np.log(prior.weights)
    return log_weights[None, :] + nb_log_pmf(counts, expected, prior.shapes, prior.scales)


def nb_mixture_log_marginal(table, E, prior):
    """
    The log marginal likelihood sum_ij log sum_k w_k f_NB(N_ij | r_k, theta_ijk).

    Raises:
        DataError: If a term is not finite; the message names the cell and component.
    """
    counts, expected = cell_vectors(table, E)
    active = prior.weights > 0
    log_pmf = nb_log_pmf(counts, expected, prior.shapes[active], prior.scales[active])
    bad = ~np.isfinite(log_pmf)
    if bad.any():
        cell, k = np.argwhere(bad)[0]
        i, j = np.unravel_index(cell, table.shape)
        raise DataError(
            f"non-finite negative binomial term at cell ({table.ae_names[i]}, {table.drug_names[j]}), "
            f"component {int(np.flatnonzero(active)[k]) + 1}",
            row=table.ae_names[i], column=table.drug_names[j],
        )
    log_marginal = logsumexp(np.log(prior.weights[active])[None, :] + log_pmf, axis=1)
    return float(log_marginal.sum())


def default_components(table):
    """K = min(200, I*J), the overfitted starting size for general-gamma."""
    return min(MAX_COMPONENTS, table.n_cells)


def init_prior(table, E, K, eps=1e-6, seed=1):
    """
    The "mean-variance" initialization.

    A grid v_1..v_K is drawn with replacement from the observed O/E ratios
    N_ij / E_ij, and each component is centred at v_k with variance eps:
    r_k h_k = v_k and r_k h_k^2 = eps. Weights start uniform. Zero ratios are
    clamped to 1e-4 so every component is a proper gamma.
    """
    if K < 1:
        raise ModelSpecError(f"K must be at least 1, got {K}")
    if eps <= 0:
        raise ModelSpecError(f"eps must be positive, got {eps}")
    counts, expected = cell_vectors(table, E)
    ratios = counts / expected
    if not np.any(ratios > 0):
        raise DataError("every observed-to-expected ratio is zero; cannot initialize the gamma mixture")
    rng = np.random.default_rng(seed)
    grid = rng.choice(ratios, size=K, replace=True)
    grid = np.where(grid == 0, ZERO_RATIO_FLOOR, grid)
    return GammaMixturePrior(
        weights=np.full(K, 1.0 / K),
        shapes=grid ** 2 / eps,
        scales=eps / grid,
    )


def e_step(counts, expected, prior, iteration=0):
    """Responsibilities tau_ijk and latent-count expectations delta_ijk at `prior`."""
    log_joint = _log_joint(counts, expected, prior)
    log_marginal = logsumexp(log_joint, axis=1)
    responsibilities = np.exp(log_joint - log_marginal[:, None])
    shapes = prior.shapes[None, :]
    latent_counts = shapes * digamma_difference(shapes, counts[:, None])
    theta = 1.0 / (1.0 + expected[:, None] * prior.scales[None, :])
    return EcmState(
        prior=prior,
        responsibilities=responsibilities,
        latent_counts=latent_counts,
        theta=theta,
        log_marginal=log_marginal,
        iteration=iteration,
    )


def _update_scales(counts, expected, responsibilities, shapes, scales):
    """
    Solves sum_ij tau_ijk [N_ij / h - E_ij (N_ij + r_k) / (1 + E_ij h)] = 0 for
    every component by the fixed point h <- sum(tau N) / sum(tau E (N + r) / (1 + E h)).
    """
    numerator = responsibilities.T @ counts
    scales = scales.copy()
    for _ in range(INNER_MAX_ITER):
        denominator = np.sum(
            responsibilities * expected[:, None] * (counts[:, None] + shapes[None, :])
            / (1.0 + expected[:, None] * scales[None, :]),
            axis=0,
        )
        with np.errstate(divide='ignore', invalid='ignore'):
            updated = np.where(denominator > 0, numerator / denominator, scales)
        updated = np.maximum(updated, SCALE_FLOOR)
        change = np.max(np.abs(updated - scales) / scales)
        scales = updated
        if change < INNER_TOL:
            break
    return scales


def _update_shapes_at_fixed_mean(counts, expected, responsibilities, prior):
    """
    Rescales each shape by the factor in SHAPE_FACTORS that maximizes
    sum_ij tau_ijk log f_NB(N_ij | r, m_k / r), holding the component mean
    m_k = r_k h_k fixed. A component moves only when the gain exceeds
    SHAPE_GAIN_TOL relative to its current term.

    Returns:
        tuple: The updated prior and a boolean mask of the components that moved.
    """
    means = prior.shapes * prior.scales
    candidates = np.clip(prior.shapes[None, :] * SHAPE_FACTORS[:, None], *SHAPE_BOUNDS)
    candidates[0] = prior.shapes
    scores = np.empty_like(candidates)
    for row, shapes in enumerate(candidates):
        with np.errstate(divide='ignore', invalid='ignore', over='ignore'):
            log_pmf = nb_log_pmf(counts, expected, shapes, means / shapes)
            score = np.sum(responsibilities * log_pmf, axis=0)
        scores[row] = np.where(np.isfinite(score), score, -np.inf)
    best = np.argmax(scores, axis=0)
    columns = np.arange(candidates.shape[1])
    current = scores[0]
    gain = scores[best, columns] - current
    moved = np.isfinite(current) & (gain > SHAPE_GAIN_TOL * np.maximum(np.abs(current), 1.0))
    if not moved.any():
        return prior, moved
    shapes = np.where(moved, candidates[best, columns], prior.shapes)
    return GammaMixturePrior(weights=prior.weights, shapes=shapes, scales=means / shapes), moved


def _parameter_change(previous, current):
    return float(max(
        np.max(np.abs(np.log(current.shapes) - np.log(previous.shapes))),
        np.max(np.abs(np.log(current.scales) - np.log(previous.scales))),
        np.max(np.abs(current.weights - previous.weights)),
    ))


def _objective(log_marginal, weights, alpha):
    return float(log_marginal.sum() + (alpha - 1.0) * np.sum(np.log(weights)))


def ecm_fit(table, E, alpha, K=None, tol=1e-8, max_iter=5000, eps=1e-6, seed=1,
            init=None, model='general-gamma'):
    """
    Fits a gamma-mixture prior by the bi-level ECM algorithm.

    Args:
        table (ContingencyTable): Report counts.
        E (ExpectedCounts): Null baseline expected counts.
        alpha (float): Dirichlet hyperparameter in [0, 1]; 1 disables shrinkage and pruning.
        K (int, optional): Starting number of components; defaults to min(200, I*J).
        tol (float): Stop when the relative change of the penalized objective is below tol,
            no shape was rescaled in CM step 3 and no log-shape, log-scale or weight
            moved by more than PARAMETER_TOL.
        max_iter (int): Iteration cap; hitting it returns converged=False.
        eps (float): Component variance used by `init_prior`.
        seed (int): Seed for the initialization grid.
        init (GammaMixturePrior, optional): Starting prior instead of `init_prior`.
        model (str): Label stored on the result.

    Returns:
        FitResult: With `objective_trace` holding the penalized objective
        log L + (alpha - 1) sum_k log w_k over the retained components.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ModelSpecError(f"alpha must lie in [0, 1], got {alpha}")
    counts, expected = cell_vectors(table, E)
    if not np.any(counts > 0):
        raise DataError("every count in the table is zero; there is nothing to fit")
    if K is None:
        K = default_components(table)
    prior = init if init is not None else init_prior(table, E, K, eps=eps, seed=seed)
    prune = alpha < 1.0
    n_cells = counts.size

    state = e_step(counts, expected, prior)
    objective_trace = [_objective(state.log_marginal, prior.weights, alpha)]
    k_trace = [prior.n_components]
    converged = False
    iteration = 0
    logger.info(f"ECM start: model={model} alpha={alpha} K={prior.n_components} cells={n_cells}")

    for iteration in range(1, max_iter + 1):
        previous_prior = prior
        tau = state.responsibilities
        tau_sums = tau.sum(axis=0)

        # CM step 1: weights (with Dirichlet shrinkage) and shapes, given h^(u)
        if prune:
            numerators = np.maximum(0.0, alpha - 1.0 + tau_sums)
            if not np.any(numerators > 0):
                numerators = np.where(tau_sums == tau_sums.max(), tau_sums, 0.0)
        else:
            numerators = np.maximum(tau_sums, np.finfo(float).tiny)
        retained = numerators > 0
        weights = numerators[retained] / numerators[retained].sum()

        with np.errstate(divide='ignore', invalid='ignore'):
            shapes = np.sum(tau * state.latent_counts, axis=0) / np.sum(tau * -np.log(state.theta), axis=0)
        shapes = np.where(np.isfinite(shapes) & (shapes > 0), shapes, prior.shapes)[retained]

        # CM step 2: scales, given r^(u+1)
        scales = _update_scales(counts, expected, tau[:, retained], shapes, prior.scales[retained])

        prior = GammaMixturePrior(weights=weights, shapes=shapes, scales=scales)
        state = e_step(counts, expected, prior, iteration=iteration)

        # CM step 3: shapes along the fixed-mean direction, given tau at the new parameters
        prior, moved = _update_shapes_at_fixed_mean(counts, expected, state.responsibilities, prior)
        if moved.any():
            logger.debug(f"ECM iteration {iteration}: rescaled the shape of {int(moved.sum())} component(s)")
            state = e_step(counts, expected, prior, iteration=iteration)

        objective = _objective(state.log_marginal, prior.weights, alpha)
        objective_trace.append(objective)
        k_trace.append(prior.n_components)
        logger.debug(f"ECM iteration {iteration}: objective={objective:.10g} K={k_trace[-1]}")

        if k_trace[-1] != k_trace[-2]:
            logger.debug(f"ECM iteration {iteration}: pruned to {k_trace[-1]} component(s)")
            continue
        previous = objective_trace[-2]
        objective_settled = abs(objective - previous) <= tol * max(abs(previous), 1.0)
        if objective_settled and not moved.any() and _parameter_change(previous_prior, prior) <= PARAMETER_TOL:
            converged = True
            break

    log_likelihood = float(state.log_marginal.sum())
    if converged:
        logger.info(f"ECM converged: model={model} alpha={alpha} K*={prior.n_components} "
                    f"iterations={iteration} logL={log_likelihood:.6f}")
    else:
        logger.warning(f"ECM did not converge within {max_iter} iterations (model={model}, alpha={alpha})")

    return FitResult(
        model=model,
        prior=prior,
        log_marginal_likelihood=log_likelihood,
        objective_trace=objective_trace,
        converged=converged,
        iterations=iteration,
        seed=seed,
        alpha=alpha,
        k_trace=k_trace,
        diagnostics={'penalized_log_likelihood': objective_trace[-1], 'n_cells': n_cells},
    )


def fit_gps(table, E, tol=1e-8, max_iter=5000, eps=1e-6, seed=1):
    """The GPS model: a two-component gamma mixture with no shrinkage."""
    return ecm_fit(table, E, alpha=1.0, K=2, tol=tol, max_iter=max_iter, eps=eps, seed=seed, model='GPS')


def fit_kgamma(table, E, K=3, tol=1e-8, max_iter=5000, eps=1e-6, seed=1):
    """The K-gamma model: a fixed-size gamma mixture with no shrinkage (K >= 3 is typical)."""
    return ecm_fit(table, E, alpha=1.0, K=K, tol=tol, max_iter=max_iter, eps=eps, seed=seed, model='k-gamma')


def fit_general_gamma(table, E, alpha, K=None, tol=1e-8, max_iter=5000, eps=1e-6, seed=1):
    """The general-gamma model: an overfitted mixture pruned by Dirichlet(alpha) shrinkage."""
    return ecm_fit(table, E, alpha=alpha, K=K, tol=tol, max_iter=max_iter, eps=eps, seed=seed,
                   model='general-gamma')
