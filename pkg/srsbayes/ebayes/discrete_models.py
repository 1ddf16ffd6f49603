"""
Discrete-support priors: the Koenker-Mizera NPMLE and Efron's penalized
exponential-family prior.

Both put the prior on a finite grid v_1 < ... < v_K, so the marginal of N_ij
is a finite Poisson mixture and the likelihood matrix
L_ijk = f_pois(N_ij | v_k E_ij) drives everything. All pmf work is done in
log space.

- KM maximizes sum_ij log sum_k g_k L_ijk over the simplex. It is solved by
  the multiplicative EM fixed point and certified with the KKT condition
  max_k mean_ij(L_ijk / p_ij) <= 1.
- Efron sets g(alpha) = exp(Q alpha - phi(alpha)) with Q a natural spline
  basis and maximizes the log likelihood minus c0 * ||alpha||, with an
  analytic gradient and Hessian.
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats
from scipy.special import logsumexp

from .exceptions import DataError, ModelSpecError
from .results import FitResult
from .splines import natural_spline_basis

# Standard logger for this module
logger = logging.getLogger(__name__)

SUPPORT_FLOOR = 1e-4
SUPPORT_HEADROOM = 1.2
PENALTY_SMOOTHING = 1e-12
KKT_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class DiscretePrior:
    """
    A prior with masses g_k on support points v_k.

    Attributes:
        support (np.ndarray): Strictly increasing nonnegative points.
        masses (np.ndarray): Probabilities on the simplex.
    """
    support: np.ndarray
    masses: np.ndarray

    kind = 'discrete'

    def __post_init__(self):
        support = np.atleast_1d(np.asarray(self.support, dtype=float))
        masses = np.atleast_1d(np.asarray(self.masses, dtype=float))
        _check_support(support)
        if masses.shape != support.shape:
            raise ModelSpecError("support and masses must have the same length")
        if np.any(masses < 0) or abs(masses.sum() - 1.0) > 1e-9:
            raise ModelSpecError("prior masses must be nonnegative and sum to 1")
        for name, value in (('support', support), ('masses', masses)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def n_components(self):
        return int(np.count_nonzero(self.masses > 0))

    def mean(self):
        return float(np.dot(self.support, self.masses))

    def to_dict(self):
        return {'kind': self.kind, 'support': self.support.tolist(), 'masses': self.masses.tolist()}

    @classmethod
    def from_dict(cls, payload):
        return cls(support=payload['support'], masses=payload['masses'])


@dataclass(frozen=True, eq=False)
class EfronPrior:
    """
    Efron's prior g(alpha) = exp(Q alpha - phi(alpha)) on a finite support.

    Attributes:
        support (np.ndarray): Strictly increasing nonnegative points v_1..v_K.
        basis (np.ndarray): The K x p structure matrix Q.
        coefficients (np.ndarray): alpha, length p.
        c0 (float): Penalty weight used in the fit.
    """
    support: np.ndarray
    basis: np.ndarray
    coefficients: np.ndarray
    c0: float

    kind = 'efron'

    def __post_init__(self):
        support = np.atleast_1d(np.asarray(self.support, dtype=float))
        basis = np.asarray(self.basis, dtype=float)
        coefficients = np.atleast_1d(np.asarray(self.coefficients, dtype=float))
        _check_support(support)
        if basis.shape != (support.size, coefficients.size):
            raise ModelSpecError(
                f"basis shape {basis.shape} does not match {support.size} support points "
                f"and {coefficients.size} coefficients"
            )
        if self.c0 < 0:
            raise ModelSpecError(f"c0 must be nonnegative, got {self.c0}")
        for name, value in (('support', support), ('basis', basis), ('coefficients', coefficients)):
            value.flags.writeable = False
            object.__setattr__(self, name, value)

    @property
    def p(self):
        return self.coefficients.size

    @property
    def normalizer(self):
        """phi(alpha) = log sum_k exp((Q alpha)_k)."""
        return float(logsumexp(self.basis @ self.coefficients))

    @property
    def masses(self):
        eta = self.basis @ self.coefficients
        return np.exp(eta - logsumexp(eta))

    @property
    def n_components(self):
        return int(np.count_nonzero(self.masses > 0))

    def mean(self):
        return float(np.dot(self.support, self.masses))

    def to_dict(self):
        return {
            'kind': self.kind,
            'support': self.support.tolist(),
            'basis': self.basis.tolist(),
            'coefficients': self.coefficients.tolist(),
            'c0': self.c0,
            'masses': self.masses.tolist(),
        }

    @classmethod
    def from_dict(cls, payload):
        return cls(
            support=payload['support'],
            basis=payload['basis'],
            coefficients=payload['coefficients'],
            c0=payload['c0'],
        )


def _check_support(support):
    if support.ndim != 1 or support.size == 0:
        raise ModelSpecError("support must be a non-empty vector")
    if np.any(~np.isfinite(support)) or np.any(support < 0):
        raise ModelSpecError("support points must be finite and nonnegative")
    if np.any(np.diff(support) <= 0):
        raise ModelSpecError("support points must be strictly increasing")


def _ratios(table, E):
    if table.shape != E.values.shape:
        raise DataError(f"table shape {table.shape} does not match expected-count shape {E.values.shape}")
    return table.counts.ravel() / E.values.ravel()


def make_support(table, E, K=100, scale='log'):
    """
    K grid points spanning [max(1e-4, min O/E), 1.2 * max O/E], plus the value 1.

    Args:
        scale (str): 'log' (geometric spacing) or 'linear'.

    Returns:
        np.ndarray: Sorted unique support points (K or K + 1 of them).
    """
    if K < 2:
        raise ModelSpecError(f"a support grid needs K >= 2 points, got {K}")
    ratios = _ratios(table, E)
    if ratios.max() <= 0 or ratios.min() == ratios.max():
        raise DataError("the observed-to-expected ratios have a degenerate range; pass an explicit support")
    lower = max(SUPPORT_FLOOR, float(ratios.min()))
    upper = float(ratios.max()) * SUPPORT_HEADROOM
    if scale == 'log':
        grid = np.geomspace(lower, upper, K)
    elif scale == 'linear':
        grid = np.linspace(lower, upper, K)
    else:
        raise ModelSpecError(f"unknown support scale '{scale}'; choose 'log' or 'linear'")
    return np.union1d(grid, [1.0])


def poisson_log_likelihood(table, E, support):
    """
    log f_pois(N_ij | v_k E_ij), shape (cells, K); f_pois(0 | 0) = 1.

    Raises:
        DataError: If some cell has zero likelihood under every support point.
    """
    counts = table.counts.ravel()
    means = E.values.ravel()[:, None] * np.asarray(support, dtype=float)[None, :]
    log_lik = stats.poisson.logpmf(counts[:, None], means)
    empty = ~np.any(np.isfinite(log_lik), axis=1)
    if empty.any():
        i, j = np.unravel_index(int(np.flatnonzero(empty)[0]), table.shape)
        raise DataError(
            f"cell ({table.ae_names[i]}, {table.drug_names[j]}) has zero likelihood at every support "
            "point; use a wider support",
            row=table.ae_names[i], column=table.drug_names[j],
        )
    return log_lik


def km_fit(table, E, support=None, tol=1e-10, max_iter=20000, K=100):
    """
    The Koenker-Mizera NPMLE on a fixed support.

    Iterates g_k <- g_k * mean_ij(L_ijk / p_ij) until the relative objective
    change is below `tol` and the KKT certificate max_k mean_ij(L_ijk / p_ij)
    <= 1 + 1e-6 holds, or `max_iter` is reached.

    Returns:
        FitResult: model 'KM' with a DiscretePrior; diagnostics hold the KKT
        residual (certificate minus one) and whether it passed.
    """
    if support is None:
        support = make_support(table, E, K=K)
    support = np.asarray(support, dtype=float)
    log_lik = poisson_log_likelihood(table, E, support)
    n_cells = log_lik.shape[0]

    masses = np.full(support.size, 1.0 / support.size)
    objective_trace = []
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        with np.errstate(divide='ignore'):
            log_masses = np.log(masses)
        log_mixture = logsumexp(log_lik + log_masses[None, :], axis=1)
        objective_trace.append(float(log_mixture.sum()))
        # d_k = mean_ij L_ijk / p_ij; the EM update is g * d and the KKT certificate is max d
        ratio = np.exp(log_lik - log_mixture[:, None]).sum(axis=0) / n_cells
        kkt = float(ratio.max())
        small_change = (
            len(objective_trace) > 1
            and abs(objective_trace[-1] - objective_trace[-2]) <= tol * abs(objective_trace[-2])
        )
        if small_change and kkt <= 1.0 + KKT_TOL:
            converged = True
            break
        if iteration < max_iter:
            masses = masses * ratio
            masses = masses / masses.sum()

    log_likelihood = objective_trace[-1]
    kkt_residual = kkt - 1.0
    if not converged:
        logger.warning(f"KM did not converge within {max_iter} iterations")
    if kkt_residual > KKT_TOL:
        logger.warning(f"KM KKT certificate failed: residual {kkt_residual:.3g} > {KKT_TOL}")
    logger.info(f"KM fit: support={support.size} iterations={iteration} logL={log_likelihood:.6f}")
    return FitResult(
        model='KM',
        prior=DiscretePrior(support=support, masses=masses),
        log_marginal_likelihood=log_likelihood,
        objective_trace=objective_trace,
        converged=converged,
        iterations=iteration,
        diagnostics={'kkt_residual': kkt_residual, 'kkt_passed': kkt_residual <= KKT_TOL},
    )


def _posterior_weights(alpha, basis, log_lik):
    eta = basis @ alpha
    log_g = eta - logsumexp(eta)
    log_joint = log_lik + log_g[None, :]
    log_marginal = logsumexp(log_joint, axis=1)
    weights = np.exp(log_joint - log_marginal[:, None])
    return np.exp(log_g), weights, log_marginal


def _penalty_norm(alpha):
    return np.sqrt(np.dot(alpha, alpha) + PENALTY_SMOOTHING)


def efron_objective(alpha, basis, log_lik, c0):
    """Penalized log likelihood sum_ij log(P_ij' g(alpha)) - c0 * sqrt(||alpha||^2 + 1e-12)."""
    _, _, log_marginal = _posterior_weights(alpha, basis, log_lik)
    return float(log_marginal.sum() - c0 * _penalty_norm(alpha))


def efron_gradient(alpha, basis, log_lik, c0):
    """Q' (sum_ij w_ij - n g) - c0 alpha / ||alpha||, with w_ij the posterior weights of cell ij."""
    g, weights, _ = _posterior_weights(alpha, basis, log_lik)
    n_cells = weights.shape[0]
    return basis.T @ (weights.sum(axis=0) - n_cells * g) - c0 * alpha / _penalty_norm(alpha)


def efron_hessian(alpha, basis, log_lik, c0):
    """
    Q' [diag(sum w) - W'W - n (diag(g) - g g')] Q minus the penalty Hessian
    c0 (I / s - alpha alpha' / s^3), s = sqrt(||alpha||^2 + 1e-12).
    """
    g, weights, _ = _posterior_weights(alpha, basis, log_lik)
    n_cells = weights.shape[0]
    inner = (
        np.diag(weights.sum(axis=0)) - weights.T @ weights
        - n_cells * (np.diag(g) - np.outer(g, g))
    )
    hessian = basis.T @ inner @ basis
    if c0 > 0:
        s = _penalty_norm(alpha)
        hessian -= c0 * (np.eye(alpha.size) / s - np.outer(alpha, alpha) / s ** 3)
    return hessian


def efron_fit(table, E, p=40, c0=1e-3, support=None, K=120, max_iter=2000, gtol=1e-6):
    """
    Efron's penalized exponential-family prior on a fixed support.

    Maximizes sum_ij log(P_ij' g(alpha)) - c0 ||alpha|| by BFGS from alpha = 0
    with the analytic gradient.

    Returns:
        FitResult: model 'efron' with an EfronPrior; diagnostics hold p, c0 and
        the penalized log likelihood. `log_marginal_likelihood` is unpenalized.
    """
    if p < 2:
        raise ModelSpecError(f"Efron's model needs p >= 2, got {p}")
    if c0 < 0:
        raise ModelSpecError(f"c0 must be nonnegative, got {c0}")
    if support is None:
        support = make_support(table, E, K=max(K, p + 1))
    support = np.asarray(support, dtype=float)
    if support.size <= p:
        raise ModelSpecError(f"Efron's model needs more support points ({support.size}) than p ({p})")
    basis = natural_spline_basis(support, p)
    log_lik = poisson_log_likelihood(table, E, support)

    objective_trace = []

    def negative_objective(alpha):
        value = efron_objective(alpha, basis, log_lik, c0)
        return -value, -efron_gradient(alpha, basis, log_lik, c0)

    def record(alpha):
        objective_trace.append(efron_objective(alpha, basis, log_lik, c0))

    start = np.zeros(p)
    record(start)
    result = optimize.minimize(
        negative_objective, start, jac=True, method='BFGS', callback=record,
        options={'maxiter': max_iter, 'gtol': gtol},
    )
    alpha_hat = result.x
    prior = EfronPrior(support=support, basis=basis, coefficients=alpha_hat, c0=c0)
    _, _, log_marginal = _posterior_weights(alpha_hat, basis, log_lik)
    log_likelihood = float(log_marginal.sum())
    penalized = log_likelihood - c0 * float(_penalty_norm(alpha_hat))
    if not result.success:
        logger.warning(f"Efron fit (p={p}, c0={c0}) did not converge: {result.message}")
    logger.info(f"Efron fit: p={p} c0={c0} iterations={result.nit} logL={log_likelihood:.6f}")
    return FitResult(
        model='efron',
        prior=prior,
        log_marginal_likelihood=log_likelihood,
        objective_trace=objective_trace,
        converged=bool(result.success),
        iterations=int(result.nit),
        diagnostics={'p': p, 'c0': c0, 'penalized_log_likelihood': penalized, 'n_cells': log_lik.shape[0]},
    )


def efron_degrees_of_freedom(fit, table, E):
    """
    trace(F) with F = H(alpha_hat; c0)^-1 H(alpha_hat; 0), the effective
    number of parameters of a penalized Efron fit.

    Raises:
        ModelSpecError: If the penalized Hessian is not negative definite.
    """
    prior = fit.prior
    if prior.c0 == 0:
        return float(prior.p)
    log_lik = poisson_log_likelihood(table, E, prior.support)
    alpha_hat = np.asarray(prior.coefficients)
    penalized = efron_hessian(alpha_hat, prior.basis, log_lik, prior.c0)
    unpenalized = efron_hessian(alpha_hat, prior.basis, log_lik, 0.0)
    penalized = (penalized + penalized.T) / 2.0
    unpenalized = (unpenalized + unpenalized.T) / 2.0
    if np.linalg.eigvalsh(penalized).max() >= 0:
        raise ModelSpecError(
            f"the penalized Hessian at c0={prior.c0} is not negative definite; try a larger c0"
        )
    return float(np.trace(np.linalg.solve(penalized, unpenalized)))


def efron_aic(fit, table, E):
    """AIC_E(c0, p) = 2 trace(F) - 2 log L(alpha_hat) with the unpenalized log likelihood."""
    if fit.model != 'efron':
        raise ModelSpecError(f"efron_aic needs an Efron fit, got '{fit.model}'")
    if not fit.converged:
        raise ModelSpecError("efron_aic needs a converged fit")
    trace_f = efron_degrees_of_freedom(fit, table, E)
    aic = 2.0 * trace_f - 2.0 * fit.log_marginal_likelihood
    fit.diagnostics['trace_F'] = trace_f
    fit.diagnostics['aic_e'] = aic
    return aic
