"""Smoothing-parameter selection for the robustified objective.

Two routes are provided: multiplicative fixed-point updates driven by the
Laplace-approximated marginal likelihood (usable with any number of smoothing
parameters), and information-criterion grid searches (one or two smoothing
parameters) with golden-section refinement.  Both operate purely through the
penalty layout's ``S(lam)`` / ``dS(j)`` builders, so quadratic toy problems
can exercise them directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .objective import FitResult, RobustObjective
from .robust import CorrectionIntegrator, LogLogisticRho
from .smooth import ModelDesign
from .trustregion import TrustRegionOptions, maximize
from . import inference

__all__ = [
    "EfsOptions",
    "EfsConditionError",
    "SmoothingError",
    "CriterionValue",
    "laplace_marginal",
    "efs_update",
    "fit_efs",
    "raic",
    "rbic",
    "grid_search",
    "fit_model",
]


class SmoothingError(RuntimeError):
    """Factorization failure or invalid smoothing state."""


class EfsConditionError(SmoothingError):
    """A positivity requirement of the multiplicative update was violated,
    typically signalling a non positive definite curvature matrix."""


@dataclass(frozen=True)
class EfsOptions:
    lam0: float = 1.0
    lam_tol: float = 1e-4  # on log(lambda)
    max_outer: int = 200
    ratio_low: float = 0.1
    ratio_high: float = 10.0
    lam_min: float = 1e-8
    lam_max: float = 1e7
    ridge: float = 1e-10
    # per-component step acceleration: exponent doubles while the update
    # direction persists, resets once steps are small, so the fixed point
    # is untouched but diverging-to-infinity components reach the cap fast
    accel_reset: float = 0.05
    accel_max: int = 16


def _penalized_submatrix(layout, A: np.ndarray) -> np.ndarray:
    mask = layout.penalized_mask
    return A[np.ix_(mask, mask)]


def _penalty_inverse_pieces(layout, lam, ridge: float):
    """log|S| on the penalized subspace and its (pseudo-)inverse there.

    When S is numerically rank deficient a ``ridge * I`` enters the
    determinant only; the inverse zeroes the null directions instead, since
    the penalty derivatives vanish there exactly and dividing the float-level
    residue by the ridge would amplify pure noise into the traces.
    """

    Sp = _penalized_submatrix(layout, layout.S(lam))
    evals, vecs = np.linalg.eigh(Sp)
    tol = ridge * max(1.0, float(evals.max(initial=0.0)))
    null = evals <= tol
    if np.any(null):
        logdet = float(np.sum(np.log(np.maximum(evals, 0.0) + ridge)))
    else:
        logdet = float(np.sum(np.log(evals)))
    inv_vals = np.where(null, 0.0, 1.0 / np.where(null, 1.0, evals))
    Sp_inv = (vecs * inv_vals) @ vecs.T
    return logdet, Sp_inv


def penalized_logdet(layout, lam, ridge: float = 1e-10) -> float:
    """log-determinant of S(lam) restricted to the penalized coefficients."""

    return _penalty_inverse_pieces(layout, lam, ridge)[0]


def _chol_logdet(A: np.ndarray):
    try:
        factor = cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError as exc:
        raise SmoothingError(f"matrix not positive definite: {exc}") from exc
    return factor, 2.0 * float(np.sum(np.log(np.diag(factor[0]))))


def laplace_marginal(raw_value: float, delta, layout, lam, M_hat, ridge: float = 1e-10) -> float:
    """Laplace approximation of the marginal objective in lambda:
    raw_value - 0.5 d'Sd + 0.5 log|S| - 0.5 log|M_hat + S|."""

    delta = np.asarray(delta, dtype=float)
    S = layout.S(lam)
    logdet_S, _ = _penalty_inverse_pieces(layout, lam, ridge)
    try:
        _, logdet_Mp = _chol_logdet(M_hat + S)
    except SmoothingError as exc:
        raise SmoothingError(
            "penalized curvature matrix not positive definite at this lambda"
        ) from exc
    return float(raw_value - 0.5 * delta @ S @ delta + 0.5 * logdet_S - 0.5 * logdet_Mp)


def efs_terms(lam, delta, layout, M_hat, ridge: float = 1e-10):
    """Numerators and denominators of the multiplicative update for each
    smoothing parameter: tr(S^-1 dS_j) - tr((M+S)^-1 dS_j) and d' dS_j d.

    The curvature matrix is projected onto its positive semi-definite part
    first (a no-op whenever the positivity conditions of the update hold),
    which keeps every numerator nonnegative up to roundoff even when
    near-flat directions push the raw curvature marginally indefinite.
    """

    lam = np.asarray(lam, dtype=float).reshape(-1)
    delta = np.asarray(delta, dtype=float)
    if np.any(lam <= 0):
        raise SmoothingError("smoothing parameters must be strictly positive")
    evals, vecs = np.linalg.eigh(0.5 * (M_hat + M_hat.T))
    M_psd = (vecs * np.maximum(evals, 0.0)) @ vecs.T
    Mp = M_psd + layout.S(lam)
    factor, _ = _chol_logdet(Mp)
    Mp_inv = cho_solve(factor, np.eye(Mp.shape[0]), check_finite=False)
    _, Sp_inv = _penalty_inverse_pieces(layout, lam, ridge)
    numerators = np.empty(lam.size)
    denominators = np.empty(lam.size)
    for j in range(lam.size):
        P = layout.dS(j)
        Pp = _penalized_submatrix(layout, P)
        numerators[j] = float((Sp_inv * Pp).sum()) - float((Mp_inv * P).sum())
        denominators[j] = float(delta @ P @ delta)
    return numerators, denominators


def efs_update(lam, delta, layout, M_hat, options: EfsOptions | None = None) -> np.ndarray:
    """One multiplicative update of every smoothing parameter.

    lam_j <- lam_j * (tr(S^-1 dS_j) - tr(Mp^-1 dS_j)) / (d' dS_j d), with the
    ratio clamped to [ratio_low, ratio_high] in lieu of a line search and the
    result kept inside [lam_min, lam_max].  The numerator is positive under
    the positivity conditions of the update; a materially non-positive one
    raises :class:`EfsConditionError`.
    """

    opts = options or EfsOptions()
    lam = np.asarray(lam, dtype=float).reshape(-1)
    delta = np.asarray(delta, dtype=float)
    numerators, denominators = efs_terms(lam, delta, layout, M_hat, opts.ridge)

    new_lam = np.empty_like(lam)
    for j in range(lam.size):
        numerator, denominator = numerators[j], denominators[j]
        if numerator <= 0:
            if numerator < -1e-8 * max(1.0, float(np.abs(numerators).max())):
                raise EfsConditionError(
                    f"non-positive update numerator {numerator:.3e} for "
                    f"lambda[{j}]: curvature condition violated"
                )
            new_lam[j] = lam[j]  # zero gradient signal at roundoff level
            continue
        if denominator <= 0:
            ratio = opts.ratio_high
        else:
            ratio = numerator / denominator
        ratio = min(max(ratio, opts.ratio_low), opts.ratio_high)
        new_lam[j] = min(max(lam[j] * ratio, opts.lam_min), opts.lam_max)
    return new_lam


def fit_efs(
    design: ModelDesign,
    y,
    rho: LogLogisticRho | None = None,
    integrator: CorrectionIntegrator | None = None,
    lam0=None,
    delta0=None,
    efs_options: EfsOptions | None = None,
    tr_options: TrustRegionOptions | None = None,
) -> FitResult:
    """Alternate coefficient fits with multiplicative lambda updates until the
    log-lambda change falls below tolerance."""

    opts = efs_options or EfsOptions()
    objective = RobustObjective(design, y, rho, integrator)
    lam = (
        np.full(design.n_lambda, opts.lam0)
        if lam0 is None
        else np.asarray(lam0, dtype=float).reshape(-1).copy()
    )
    if lam.size != design.n_lambda:
        raise SmoothingError(
            f"expected {design.n_lambda} initial smoothing parameters, got {lam.size}"
        )
    delta = design.initial_delta(y) if delta0 is None else np.asarray(delta0, float).copy()

    trace = []
    inner_converged = False
    outer_converged = design.n_lambda == 0
    outer = 0
    state = None
    kappa = np.ones(design.n_lambda)
    prev_sign = np.zeros(design.n_lambda)
    for outer in range(1, opts.max_outer + 1):
        delta, state, report = maximize(
            lambda d, order: objective.evaluate(d, lam, order), delta, tr_options
        )
        inner_converged = report.converged
        trace.append({"lam": lam.copy(), "value": state.value, "inner": report.iterations})
        if design.n_lambda == 0:
            break
        M_hat = -state.hess_unpenalized
        proposal = efs_update(lam, delta, design, M_hat, opts)
        log_step = np.log(proposal) - np.log(lam)
        sign = np.sign(log_step)
        sustained = (sign == prev_sign) & (np.abs(log_step) >= opts.accel_reset)
        kappa = np.where(sustained, np.minimum(kappa * 2.0, opts.accel_max), 1.0)
        prev_sign = sign
        applied = np.clip(
            np.exp(kappa * log_step), opts.ratio_low, opts.ratio_high
        )
        new_lam = np.clip(lam * applied, opts.lam_min, opts.lam_max)
        change = float(np.max(np.abs(np.log(new_lam) - np.log(lam))))
        if change < opts.lam_tol:
            outer_converged = True
            break
        lam = new_lam

    return FitResult(
        design=design,
        y=np.asarray(y, dtype=float),
        rho=rho,
        integrator=objective.integrator,
        lam=lam,
        delta=delta,
        state=state,
        converged=inner_converged and outer_converged,
        select="efs",
        outer_iterations=outer,
        trace=trace,
        message="" if (inner_converged and outer_converged) else "not converged",
    )


# ---------------------------------------------------------------------------
# information criteria


@dataclass(frozen=True)
class CriterionValue:
    kind: str  # "raic" | "rbic"
    value: float
    trace_term: float  # equals the effective degrees of freedom


def _criterion(fit: FitResult, kind: str) -> CriterionValue:
    trace_term = inference.edf(fit).total
    coef = 2.0 if kind == "raic" else float(np.log(fit.design.n))
    return CriterionValue(kind, -2.0 * fit.state.raw_value + coef * trace_term, trace_term)


def raic(fit: FitResult) -> CriterionValue:
    """-2 * transformed log-likelihood + 2 * tr((M+S)^-1 Q)."""

    return _criterion(fit, "raic")


def rbic(fit: FitResult) -> CriterionValue:
    """Same penalty trace as the AIC variant, scaled by log(n)."""

    return _criterion(fit, "rbic")


# ---------------------------------------------------------------------------
# grid search with golden-section refinement


_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f, lo: float, hi: float, tol: float) -> float:
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def grid_search(
    criterion: str,
    design: ModelDesign,
    y,
    rho: LogLogisticRho | None = None,
    integrator: CorrectionIntegrator | None = None,
    grid=(1e-4, 1e4, 20),
    tr_options: TrustRegionOptions | None = None,
    refine_tol: float = 1e-5,
) -> FitResult:
    """Minimize RAIC/RBIC over a log-spaced lambda grid, then refine by
    golden section on log(lambda) to the requested relative tolerance.

    Only one or two smoothing parameters are supported; with more, the
    automatic (EFS) route is the practical choice and an error says so.
    """

    if criterion not in ("raic", "rbic"):
        raise ValueError("criterion must be 'raic' or 'rbic'")
    n_lam = design.n_lambda
    if n_lam == 0:
        raise SmoothingError("grid search needs at least one smoothing parameter")
    if n_lam > 2:
        raise SmoothingError(
            f"grid search over {n_lam} smoothing parameters is impractical; "
            "use the automatic EFS selection instead"
        )

    lo, hi, num = grid
    if not (0 < lo < hi) or num < 3:
        raise ValueError("grid must satisfy 0 < lo < hi with at least 3 points")
    log_grid = np.linspace(np.log(lo), np.log(hi), int(num))

    objective = RobustObjective(design, y, rho, integrator)
    warm = {"delta": design.initial_delta(y)}
    cache: dict[tuple, tuple] = {}

    def fit_at(log_lam) -> tuple:
        key = tuple(np.round(np.asarray(log_lam, dtype=float), 12))
        if key in cache:
            return cache[key]
        lam = np.exp(np.asarray(log_lam, dtype=float))
        delta, state, report = maximize(
            lambda d, order: objective.evaluate(d, lam, order),
            warm["delta"],
            tr_options,
        )
        warm["delta"] = delta
        fit = FitResult(
            design=design,
            y=objective.y,
            rho=rho,
            integrator=objective.integrator,
            lam=lam,
            delta=delta,
            state=state,
            converged=report.converged,
            select=criterion,
        )
        crit = _criterion(fit, criterion)
        cache[key] = (crit.value, fit)
        return cache[key]

    if n_lam == 1:
        values = [fit_at([g])[0] for g in log_grid]
        best = int(np.argmin(values))
        if best in (0, len(log_grid) - 1):
            warnings.warn(
                f"{criterion} minimized at the edge of the lambda grid; "
                "widen the grid bounds",
                stacklevel=2,
            )
        a = log_grid[max(best - 1, 0)]
        b = log_grid[min(best + 1, len(log_grid) - 1)]
        log_best = _golden_min(lambda g: fit_at([g])[0], a, b, refine_tol)
        return fit_at([log_best])[1]

    # two smoothing parameters: coarse product grid then coordinate refinement
    values = {}
    for g1 in log_grid:
        for g2 in log_grid:
            values[(g1, g2)] = fit_at([g1, g2])[0]
    (b1, b2) = min(values, key=values.get)
    if b1 in (log_grid[0], log_grid[-1]) or b2 in (log_grid[0], log_grid[-1]):
        warnings.warn(
            f"{criterion} minimized at the edge of the lambda grid; "
            "widen the grid bounds",
            stacklevel=2,
        )
    current = np.array([b1, b2])
    span = np.diff(log_grid).max()
    for _ in range(2):
        for axis in range(2):
            def f(g, axis=axis):
                point = current.copy()
                point[axis] = g
                return fit_at(point)[0]

            current[axis] = _golden_min(
                f, current[axis] - span, current[axis] + span, refine_tol
            )
    return fit_at(current)[1]


# ---------------------------------------------------------------------------
# facade


def fit_model(
    design: ModelDesign,
    y,
    c: float | None = None,
    select: str = "efs",
    integrator: CorrectionIntegrator | None = None,
    grid=(1e-4, 1e4, 20),
    lam0=None,
    delta0=None,
    efs_options: EfsOptions | None = None,
    tr_options: TrustRegionOptions | None = None,
) -> FitResult:
    """Fit a model: classical (``c=None``) or robust with tuning constant c,
    selecting smoothing parameters by 'efs', 'raic' or 'rbic'."""

    rho = None if c is None else LogLogisticRho(c)
    if select == "efs":
        return fit_efs(
            design,
            y,
            rho,
            integrator,
            lam0=lam0,
            delta0=delta0,
            efs_options=efs_options,
            tr_options=tr_options,
        )
    if select in ("raic", "rbic"):
        return grid_search(
            select, design, y, rho, integrator, grid=grid, tr_options=tr_options
        )
    raise ValueError(f"unknown selection method {select!r}")
