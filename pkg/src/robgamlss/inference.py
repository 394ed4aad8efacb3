"""Covariance matrices, effective degrees of freedom and pointwise intervals
for a converged fit.

The curvature matrix M is the negative Hessian of the transformed (unpenalized)
objective, Q the sum of per-observation score outer products.  The sandwich
covariance (M+S)^-1 Q (M+S)^-T approximates the frequentist covariance of the
penalized estimator; (M+S)^-1 is the posterior covariance under the improper
Gaussian prior reading of the penalty.  tr((M+S)^-1 Q) measures the realized
model complexity and doubles as the information-criterion penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import norm

__all__ = [
    "CovarianceBundle",
    "EdfReport",
    "NotPositiveDefiniteError",
    "covariances",
    "edf",
    "pointwise_ci",
]


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CovarianceBundle:
    M: np.ndarray  # negative Hessian of the transformed log-likelihood
    Mp: np.ndarray  # M + S
    Q: np.ndarray  # sum of per-observation score outer products
    sandwich: np.ndarray  # Mp^-1 Q Mp^-T
    posterior: np.ndarray  # Mp^-1


def _mp_factor(fit):
    Mp = -fit.state.hess  # penalized negative Hessian, equals M + S
    try:
        return Mp, cho_factor(0.5 * (Mp + Mp.T), lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(0.5 * (Mp + Mp.T))[0])
        raise NotPositiveDefiniteError(
            f"penalized curvature matrix is not positive definite "
            f"(smallest eigenvalue {smallest:.3e})"
        ) from None


def covariances(fit) -> CovarianceBundle:
    """Sandwich and posterior covariances from a converged fit."""

    state = fit.state
    if state.score_matrix is None or state.hess_unpenalized is None:
        raise ValueError("fit state lacks second-order information")
    Mp, factor = _mp_factor(fit)
    M = -state.hess_unpenalized
    Q = state.score_matrix.T @ state.score_matrix
    posterior = cho_solve(factor, np.eye(Mp.shape[0]), check_finite=False)
    posterior = 0.5 * (posterior + posterior.T)
    half = cho_solve(factor, Q, check_finite=False)
    sandwich = cho_solve(factor, half.T, check_finite=False)
    sandwich = 0.5 * (sandwich + sandwich.T)
    return CovarianceBundle(
        M=0.5 * (M + M.T), Mp=0.5 * (Mp + Mp.T), Q=Q, sandwich=sandwich, posterior=posterior
    )


@dataclass(frozen=True)
class EdfReport:
    total: float
    per_param: dict[str, float]


def edf(fit) -> EdfReport:
    """Effective degrees of freedom tr((M+S)^-1 Q), with the trace split over
    the coefficient blocks of each modeled parameter."""

    state = fit.state
    Mp, factor = _mp_factor(fit)
    Q = state.score_matrix.T @ state.score_matrix
    T = cho_solve(factor, Q, check_finite=False)
    diag = np.diag(T)
    names = fit.design.family.param_names[: fit.design.family.n_params]
    per_param = {
        name: float(diag[sl].sum())
        for name, sl in zip(names, fit.design.param_slices)
    }
    return EdfReport(total=float(diag.sum()), per_param=per_param)


def pointwise_ci(fit, cov: str = "posterior", level: float = 0.95):
    """Pointwise intervals eta_hat +- z * se for every predictor and datum.

    Returns a dict with ``eta`` (n, d), ``se``, ``lower`` and ``upper`` of the
    same shape.  ``cov`` selects the posterior or sandwich covariance.
    """

    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    bundle = covariances(fit)
    C = {"posterior": bundle.posterior, "sandwich": bundle.sandwich}[cov]
    eta = fit.design.eta(fit.delta)
    se = np.empty_like(eta)
    for d, (X_d, sl) in enumerate(zip(fit.design.X_per_param, fit.design.param_slices)):
        block = C[sl, sl]
        se[:, d] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X_d, block, X_d), 0.0))
    z = norm.ppf(0.5 * (1.0 + level))
    return {"eta": eta, "se": se, "lower": eta - z * se, "upper": eta + z * se}
