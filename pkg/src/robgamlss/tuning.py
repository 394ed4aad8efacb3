"""Selection of the robustness constant by the median downweighting
proportion (MDP).

For a candidate c the model is fitted (including its smoothing parameters),
responses are simulated from the fitted model, and the average robustness
weight of each simulated sample is recorded without any refitting; the median
of those averages is the MDP.  Since the MDP increases with c empirically,
the constant matching a target (e.g. 0.95) is found by bisection, with common
random numbers across candidates so the MDP-vs-c curve stays smooth.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .objective import FitResult
from .robust import CorrectionIntegrator, LogLogisticRho
from .smooth import ModelDesign
from .smoothsel import EfsOptions, fit_model
from .trustregion import TrustRegionOptions

__all__ = ["MdpConfig", "TuneResult", "mdp", "tune_c"]


@dataclass(frozen=True)
class MdpConfig:
    target: float = 0.95
    replications: int = 100
    bracket: tuple[float, float] = (0.5, 20.0)
    mdp_tol: float = 0.005
    bracket_tol: float = 0.05
    max_expansions: int = 5

    def __post_init__(self):
        if not 0.0 < self.target < 1.0:
            raise ValueError("target MDP must lie in (0, 1)")
        if self.replications < 20:
            raise ValueError("need at least 20 Monte Carlo replications")
        if not self.bracket[0] < self.bracket[1]:
            raise ValueError("bracket must satisfy c_lo < c_hi")


def mdp(fit: FitResult, replications: int = 100, seed: int = 0) -> float:
    """Median over simulated samples of the average robustness weight.

    Simulates responses from the fitted model at the fitted coefficients and
    evaluates the weights there; no parameters are re-estimated.  Replicate b
    uses the b-th spawned seed, so the same replicate sees the same draws
    whatever c is being probed.
    """

    if fit.rho is None:
        raise ValueError("MDP is defined for robust fits only")
    family = fit.family
    params = family.params_from_eta(fit.design.eta(fit.delta))
    seeds = np.random.SeedSequence(seed).spawn(replications)
    fractions = np.empty(replications)
    for b in range(replications):
        rng = np.random.default_rng(seeds[b])
        y_b = family.sample(*params, rng=rng)
        ll = family.log_density_eta(y_b, fit.design.eta(fit.delta))
        weights = fit.rho.rho_prime(ll)
        fractions[b] = float(weights.sum()) / weights.size
    return float(np.median(fractions))


@dataclass
class TuneResult:
    c: float
    fit: FitResult
    trace: list[tuple[float, float]] = field(default_factory=list)  # (c, MDP)
    target: float = 0.95
    boundary: bool = False
    expansions: int = 0


def tune_c(
    design: ModelDesign,
    y,
    config: MdpConfig | None = None,
    integrator: CorrectionIntegrator | None = None,
    select: str = "efs",
    seed: int = 0,
    efs_options: EfsOptions | None = None,
    tr_options: TrustRegionOptions | None = None,
) -> TuneResult:
    """Bisect on c until the MDP matches the target.

    Every probed c triggers a full refit (coefficients and smoothing
    parameters), warm-started from the previous probe.  If the initial
    bracket does not straddle the target it is expanded geometrically; when
    the MDP saturates below an extreme target the upper bound is returned
    with a boundary warning rather than failing.
    """

    cfg = config or MdpConfig()
    warm: dict = {"delta": None, "lam": None}
    trace: list[tuple[float, float]] = []
    fits: dict[float, FitResult] = {}

    def probe(c: float) -> float:
        fit = fit_model(
            design,
            y,
            c=c,
            select=select,
            integrator=integrator,
            lam0=warm["lam"],
            delta0=warm["delta"],
            efs_options=efs_options,
            tr_options=tr_options,
        )
        warm["delta"], warm["lam"] = fit.delta, fit.lam
        fits[c] = fit
        value = mdp(fit, cfg.replications, seed)
        trace.append((c, value))
        return value

    lo, hi = cfg.bracket
    m_lo, m_hi = probe(lo), probe(hi)
    expansions = 0
    boundary = False
    while m_lo > cfg.target and expansions < cfg.max_expansions:
        lo /= 4.0
        m_lo = probe(lo)
        expansions += 1
    while m_hi < cfg.target and expansions < cfg.max_expansions:
        hi *= 4.0
        m_hi = probe(hi)
        expansions += 1

    if m_hi < cfg.target:
        warnings.warn(
            f"MDP saturated at {m_hi:.6f} below the target {cfg.target}; "
            f"returning the bracket upper bound c={hi:g}",
            stacklevel=2,
        )
        boundary = True
        result_c = hi
    elif m_lo > cfg.target:
        warnings.warn(
            f"MDP stayed above the target down to c={lo:g}; returning it",
            stacklevel=2,
        )
        boundary = True
        result_c = lo
    else:
        result_c = hi if abs(m_hi - cfg.target) < abs(m_lo - cfg.target) else lo
        best_gap = min(abs(m_hi - cfg.target), abs(m_lo - cfg.target))
        while hi - lo > cfg.bracket_tol and best_gap >= cfg.mdp_tol:
            mid = float(np.sqrt(lo * hi))
            m_mid = probe(mid)
            gap = abs(m_mid - cfg.target)
            if gap < best_gap:
                best_gap, result_c = gap, mid
            if gap < cfg.mdp_tol:
                break
            if m_mid > cfg.target:
                hi = mid
            else:
                lo = mid

    ordered = sorted(trace)
    drops = [
        ordered[i + 1][1] - ordered[i][1]
        for i in range(len(ordered) - 1)
        if ordered[i + 1][1] - ordered[i][1] < -0.01
    ]
    if drops:
        warnings.warn(
            "MDP was not monotone in c over the probed values "
            f"(largest drop {min(drops):.3f}); treat the tuned c with care",
            stacklevel=2,
        )

    return TuneResult(
        c=result_c,
        fit=fits[result_c],
        trace=trace,
        target=cfg.target,
        boundary=boundary,
        expansions=expansions,
    )
