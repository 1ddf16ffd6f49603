"""Natural cubic spline basis for Efron's exponential-family prior."""

import numpy as np
from scipy.interpolate import CubicSpline

from .exceptions import ModelSpecError

LOG_FLOOR = 1e-8


def natural_spline_basis(support, p):
    """
    A K x p natural cubic spline basis on log(support).

    p + 1 knots are placed at equally spaced quantiles of log(support). Each
    column is the natural cubic spline interpolating one knot indicator; the
    first column is dropped so the basis cannot represent a constant (the
    prior's normalizer absorbs it), and the columns are centred.
    """
    support = np.asarray(support, dtype=float)
    if p < 1:
        raise ModelSpecError(f"the spline basis needs p >= 1 degrees of freedom, got {p}")
    x = np.log(np.maximum(support, LOG_FLOOR))
    if np.unique(x).size <= p:
        raise ModelSpecError(f"a basis with p={p} needs more than {p} distinct support points")
    knots = np.quantile(x, np.linspace(0.0, 1.0, p + 1))
    cardinal = CubicSpline(knots, np.eye(p + 1), bc_type='natural')(x)
    basis = cardinal[:, 1:]
    return basis - basis.mean(axis=0)
