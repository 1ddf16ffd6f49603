"""
The fit result shared by every model.

A `FitResult` wraps the estimated prior (a `GammaMixturePrior`, a
`DiscretePrior` or an `EfronPrior`) together with the likelihood, the
iteration trace and convergence metadata. The table and expected counts a
fit was computed from are not stored here; the commands embed them in the
fit JSON instead (see `ebayes.serializers`).
"""

from dataclasses import dataclass, field

GAMMA_MODELS = ('GPS', 'k-gamma', 'general-gamma')
DISCRETE_MODELS = ('KM', 'efron')
MODELS = GAMMA_MODELS + DISCRETE_MODELS


@dataclass
class FitResult:
    """
    The outcome of fitting one empirical Bayes model.

    Attributes:
        model (str): One of MODELS.
        prior: The estimated prior.
        log_marginal_likelihood (float): Unpenalized log marginal likelihood at the estimate.
        objective_trace (list[float]): Objective value after each iteration
            (penalized for general-gamma and Efron); entry 0 is the starting point.
        converged (bool): Whether the stopping rule was met within max_iter.
        iterations (int): Iterations performed.
        seed (int | None): Seed of the random initialization, if any.
        alpha (float | None): Dirichlet hyperparameter (gamma-mixture models).
        k_trace (list[int]): Retained component count after each iteration.
        diagnostics (dict): Model-specific extras (KKT residual, trace(F), c0, p, ...).
    """
    model: str
    prior: object
    log_marginal_likelihood: float
    objective_trace: list = field(default_factory=list)
    converged: bool = True
    iterations: int = 0
    seed: int = None
    alpha: float = None
    k_trace: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def is_gamma_mixture(self):
        return self.model in GAMMA_MODELS

    @property
    def K_star(self):
        """Number of retained non-empty components (support points for discrete priors)."""
        return self.prior.n_components

    def describe(self):
        """A short multi-line text summary, used by the `fit` and `summarize` commands."""
        lines = [f"model: {self.model}"]
        if self.alpha is not None:
            lines.append(f"alpha: {self.alpha:.6g}")
        lines.append(f"components retained (K*): {self.K_star}")
        lines.append(f"log marginal likelihood: {self.log_marginal_likelihood:.6g}")
        for name in ('penalized_log_likelihood', 'p', 'c0', 'trace_F', 'aic_e', 'kkt_residual'):
            if name in self.diagnostics and self.diagnostics[name] is not None:
                lines.append(f"{name}: {self.diagnostics[name]:.6g}")
        status = 'converged' if self.converged else 'NOT converged'
        lines.append(f"{status} after {self.iterations} iteration(s)")
        return "\n".join(lines)
