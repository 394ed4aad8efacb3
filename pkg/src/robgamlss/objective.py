"""Penalized robustified log-likelihood: value, gradient and Hessian in the
stacked coefficient vector, plus per-observation scores and weights.

The objective is sum_i rho(ll_i) - sum_i b_i - 0.5 * delta' S(lambda) delta,
where b_i is the consistency correction of :mod:`robgamlss.robust`.  With
``rho=None`` the same machinery evaluates the classical penalized
log-likelihood (no transform, no correction).  Evaluation failures (overflow,
inadmissible parameters, quadrature budget) are reported through the ``ok``
flag so optimizers can reject the step instead of aborting.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .families import DomainError
from .robust import CorrectionIntegrator, LogLogisticRho, QuadratureError, correction_bundle
from .smooth import ModelDesign

__all__ = ["ObjectiveState", "RobustObjective", "FitResult", "robustness_weights"]


@dataclass
class ObjectiveState:
    """Objective value and derivatives at one coefficient vector."""

    value: float
    ok: bool = True
    message: str = ""
    raw_value: float = np.nan  # transformed log-likelihood before penalty
    penalty: float = np.nan  # 0.5 * delta' S delta
    loglik: np.ndarray | None = None  # per-observation ll_i
    weights: np.ndarray | None = None  # rho'(ll_i), ones for the classical fit
    grad: np.ndarray | None = None  # penalized gradient g - S delta
    hess: np.ndarray | None = None  # penalized Hessian H - S
    grad_unpenalized: np.ndarray | None = None
    hess_unpenalized: np.ndarray | None = None
    score_matrix: np.ndarray | None = None  # (n, p), rows are per-obs scores


def _failure(message: str) -> ObjectiveState:
    return ObjectiveState(value=-np.inf, ok=False, message=message)


class RobustObjective:
    """Evaluator bound to one design, response and robustness configuration."""

    def __init__(
        self,
        design: ModelDesign,
        y,
        rho: LogLogisticRho | None = None,
        integrator: CorrectionIntegrator | None = None,
    ):
        self.design = design
        self.family = design.family
        self.y = np.asarray(y, dtype=float)
        if self.y.shape[0] != design.n:
            raise ValueError("response length does not match the design")
        if not np.all(self.family.support.contains(self.y)):
            raise DomainError(
                f"{self.family.code}: response outside the family support"
            )
        self.rho = rho
        self.integrator = integrator or CorrectionIntegrator()

    @property
    def is_robust(self) -> bool:
        return self.rho is not None

    def evaluate(self, delta, lam, order: int = 2) -> ObjectiveState:
        design = self.design
        delta = np.asarray(delta, dtype=float)
        if not np.all(np.isfinite(delta)):
            return _failure("non-finite coefficients")
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            eta = design.eta(delta)
            if not np.all(np.isfinite(eta)):
                return _failure("non-finite predictor")
            ll = self.family.log_density_eta(self.y, eta)
            if not np.all(np.isfinite(ll)):
                return _failure("non-finite log-likelihood")

            if self.is_robust:
                try:
                    corr = correction_bundle(
                        self.family, eta, self.rho, self.integrator, order=order
                    )
                except (QuadratureError, DomainError, FloatingPointError) as exc:
                    return _failure(f"correction term failed: {exc}")
                if not np.all(np.isfinite(corr.value)):
                    return _failure("non-finite correction term")
                raw = float(self.rho.rho(ll).sum() - corr.value.sum())
                weights = self.rho.rho_prime(ll)
            else:
                corr = None
                raw = float(ll.sum())
                weights = np.ones_like(ll)

            S = design.S(lam)
            penalty = 0.5 * float(delta @ S @ delta)
            value = raw - penalty
            if not np.isfinite(value):
                return _failure("non-finite objective value")
            state = ObjectiveState(
                value=value,
                raw_value=raw,
                penalty=penalty,
                loglik=ll,
                weights=weights,
            )
            if order == 0:
                return state

            s_eta = self.family.score_eta(self.y, eta)  # (n, d)
            if self.is_robust:
                v = weights[:, None] * s_eta - corr.grad
            else:
                v = s_eta
            if not np.all(np.isfinite(v)):
                return _failure("non-finite score")

            n_par = self.family.n_params
            g_unpen = np.zeros(design.p)
            score_matrix = np.zeros((design.n, design.p))
            for d in range(n_par):
                X_d = design.X_per_param[d]
                sl = design.param_slices[d]
                g_unpen[sl] = X_d.T @ v[:, d]
                score_matrix[:, sl] = X_d * v[:, d, None]
            state.grad_unpenalized = g_unpen
            state.grad = g_unpen - S @ delta
            state.score_matrix = score_matrix
            if order == 1:
                return state

            h_eta = self.family.hessian_eta(self.y, eta)  # (n, d, d)
            if self.is_robust:
                w2 = self.rho.rho_second(ll)
                W = (
                    w2[:, None, None] * s_eta[:, :, None] * s_eta[:, None, :]
                    + weights[:, None, None] * h_eta
                    - corr.hess
                )
            else:
                W = h_eta
            if not np.all(np.isfinite(W)):
                return _failure("non-finite Hessian weights")

            H_unpen = np.zeros((design.p, design.p))
            for d in range(n_par):
                X_d = design.X_per_param[d]
                sl_d = design.param_slices[d]
                for h in range(d, n_par):
                    X_h = design.X_per_param[h]
                    sl_h = design.param_slices[h]
                    block = X_d.T @ (W[:, d, h, None] * X_h)
                    H_unpen[sl_d, sl_h] = block
                    if h != d:
                        H_unpen[sl_h, sl_d] = block.T
            state.hess_unpenalized = H_unpen
            state.hess = H_unpen - S
            return state


def robustness_weights(state: ObjectiveState) -> np.ndarray:
    """Multiplicative weights rho'(ll_i) in [0, 1]; 1 means untouched."""

    if state.weights is None:
        raise ValueError("state was not evaluated successfully")
    return state.weights


@dataclass
class FitResult:
    """A converged fit: coefficients, smoothing parameters and diagnostics."""

    design: ModelDesign
    y: np.ndarray
    rho: LogLogisticRho | None
    integrator: CorrectionIntegrator
    lam: np.ndarray
    delta: np.ndarray
    state: ObjectiveState
    converged: bool
    select: str
    outer_iterations: int = 0
    trace: list = field(default_factory=list)
    message: str = ""

    @property
    def family(self):
        return self.design.family

    @property
    def weights(self) -> np.ndarray:
        return self.state.weights

    @property
    def eta(self) -> np.ndarray:
        return self.design.eta(self.delta)

    def objective(self) -> RobustObjective:
        return RobustObjective(self.design, self.y, self.rho, self.integrator)
