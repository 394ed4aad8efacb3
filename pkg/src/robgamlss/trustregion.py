"""Trust-region maximization of the penalized robustified objective.

Each iteration maximizes the local quadratic model over a ball of adaptive
radius.  The subproblem is solved exactly through an eigendecomposition
(cheap at the moderate coefficient counts used here), including the hard
case.  Steps where the objective is not finite are rejected and the radius
shrunk, so the optimizer never needs admissibility safeguards of its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

__all__ = ["TrustRegionOptions", "FitReport", "solve_subproblem", "maximize"]


@dataclass(frozen=True)
class TrustRegionOptions:
    init_radius: float = 1.0
    max_radius: float = 1e8
    min_radius: float = 1e-13
    max_iter: int = 500
    grad_tol: float = 1e-7  # scaled by (1 + |objective|)
    eta_low: float = 0.25
    eta_high: float = 0.75
    shrink: float = 0.5
    expand: float = 2.0

    def __post_init__(self):
        if not (0.0 < self.eta_low < self.eta_high < 1.0):
            raise ValueError("need 0 < eta_low < eta_high < 1")
        if not (self.shrink < 1.0 < self.expand):
            raise ValueError("need shrink < 1 < expand")


@dataclass
class FitReport:
    converged: bool = False
    iterations: int = 0
    rejected_steps: int = 0
    grad_norm: float = np.inf
    objective_trace: list = field(default_factory=list)
    step_log: list = field(default_factory=list)  # (radius, step_norm, ratio, accepted)
    message: str = ""


def solve_subproblem(grad, hess, radius: float, bound_tol: float = 1e-8):
    """Maximize g'e + 0.5 e'He over the ball ||e|| <= radius.

    Equivalent to the minimization of the negated model; the boundary
    solution satisfies (-H + nu I) e = g with nu >= 0 and nu (radius - ||e||)
    = 0 up to ``bound_tol``.  Always returns a feasible step.
    """

    g = np.asarray(grad, dtype=float)
    B = -0.5 * (np.asarray(hess, dtype=float) + np.asarray(hess, dtype=float).T)
    b = -g
    evals, Q = np.linalg.eigh(B)
    bt = Q.T @ b
    lam_min = evals[0]
    scale = max(1.0, float(np.abs(evals).max()))

    if lam_min > 0:
        p = -bt / evals
        if np.linalg.norm(p) <= radius * (1.0 + bound_tol):
            return Q @ p

    nu_floor = max(0.0, -lam_min)
    on_min = evals - lam_min <= 1e-12 * scale

    def coords(nu):
        return -bt / (evals + nu)

    # hard case: no gradient component along the most negative curvature
    if np.linalg.norm(bt[on_min]) <= 1e-13 * max(1.0, np.linalg.norm(bt)):
        safe = ~on_min
        p0 = np.zeros_like(bt)
        p0[safe] = -bt[safe] / (evals[safe] + nu_floor)
        norm0 = np.linalg.norm(p0)
        if norm0 <= radius:
            tau = np.sqrt(max(radius**2 - norm0**2, 0.0))
            p0[np.argmax(on_min)] += tau
            return Q @ p0

    # secular equation on (nu_floor, inf); phi is decreasing in nu
    def norm_at(nu):
        return np.linalg.norm(coords(nu))

    def psi(nu):
        return 1.0 / radius - 1.0 / norm_at(nu)

    lo = nu_floor + 1e-14 * scale
    for _ in range(200):
        if norm_at(lo) > radius:
            break
        lo = nu_floor + max((lo - nu_floor) * 0.01, 1e-300)
        if lo == nu_floor:
            break
    hi = nu_floor + scale + np.linalg.norm(bt) / radius
    for _ in range(200):
        if norm_at(hi) < radius:
            break
        hi *= 2.0
    nu = brentq(psi, lo, hi, xtol=1e-15 * max(1.0, hi), rtol=8.9e-16, maxiter=300)
    p = coords(nu)
    nrm = np.linalg.norm(p)
    if nrm > 0:
        p *= min(1.0, radius / nrm)  # enforce feasibility exactly
    return Q @ p


def maximize(evaluate, delta0, options: TrustRegionOptions | None = None):
    """Iterate trust-region steps on ``evaluate(delta, order)``.

    ``evaluate`` must return an object with ``value``, ``ok``, ``grad`` and
    ``hess`` attributes (order 2) as produced by
    :meth:`robgamlss.objective.RobustObjective.evaluate`.
    Returns ``(delta, state, report)``; non-convergence is reported, never
    silent.
    """

    opts = options or TrustRegionOptions()
    delta = np.asarray(delta0, dtype=float).copy()
    state = evaluate(delta, 2)
    if not state.ok:
        raise RuntimeError(f"objective not evaluable at the starting point: {state.message}")

    report = FitReport()
    report.objective_trace.append(state.value)
    radius = opts.init_radius

    for iteration in range(1, opts.max_iter + 1):
        report.iterations = iteration
        gnorm = float(np.abs(state.grad).max()) if state.grad.size else 0.0
        report.grad_norm = gnorm
        tol = opts.grad_tol * (1.0 + abs(state.value))
        if gnorm < tol:
            report.converged = True
            report.message = "gradient tolerance reached"
            return delta, state, report

        step = solve_subproblem(state.grad, state.hess, radius)
        step_norm = float(np.linalg.norm(step))
        predicted = float(step @ state.grad + 0.5 * step @ state.hess @ step)
        if predicted <= 1e-15 * (1.0 + abs(state.value)):
            # the model cannot improve within the ball: first-order stationary
            report.converged = gnorm < max(tol, 1e-5 * (1.0 + abs(state.value)))
            report.message = "no model improvement available"
            return delta, state, report

        trial_state = evaluate(delta + step, 2)
        if not trial_state.ok or not np.isfinite(trial_state.value):
            report.rejected_steps += 1
            report.step_log.append((radius, step_norm, np.nan, False))
            radius *= opts.shrink
            if radius < opts.min_radius:
                report.message = "radius collapsed while rejecting non-finite steps"
                return delta, state, report
            continue

        actual = trial_state.value - state.value
        ratio = actual / predicted
        accepted = ratio > opts.eta_low and actual > 0.0
        report.step_log.append((radius, step_norm, ratio, accepted))
        if accepted:
            delta = delta + step
            state = trial_state
            report.objective_trace.append(state.value)
            if ratio > opts.eta_high and step_norm >= 0.999 * radius:
                radius = min(radius * opts.expand, opts.max_radius)
        else:
            report.rejected_steps += 1
            radius *= opts.shrink
            if radius < opts.min_radius:
                report.message = "radius collapsed without further progress"
                return delta, state, report

    report.message = "iteration limit reached"
    return delta, state, report
