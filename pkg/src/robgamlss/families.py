"""Response distribution families parameterized by location, scale and shape.

Each family exposes its log-density together with analytic first and second
derivatives in the canonical parameters (mu, sigma, nu), the link functions
mapping parameters to unconstrained predictors, the support, a sampler and a
quantile function.  Derivatives on the predictor scale are obtained by chaining
with the inverse-link derivatives, so optimization never has to constrain or
clip parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special, stats

__all__ = [
    "DomainError",
    "Link",
    "Support",
    "Family",
    "FAMILIES",
    "get_family",
    "log_link",
    "identity_link",
    "shifted_log_link",
    "logit_link",
]

_LOG_2PI = math.log(2.0 * math.pi)


class DomainError(ValueError):
    """Observation outside the support or parameter outside its range."""


# ---------------------------------------------------------------------------
# link functions


@dataclass(frozen=True)
class Link:
    """Monotone map eta = forward(theta) between a parameter and its predictor.

    ``inverse_d1`` and ``inverse_d2`` are the first and second derivatives of
    theta = inverse(eta) with respect to eta; they carry density derivatives
    from the canonical parameter scale to the predictor scale.
    """

    name: str
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    inverse_d1: Callable[[np.ndarray], np.ndarray]
    inverse_d2: Callable[[np.ndarray], np.ndarray]


def log_link() -> Link:
    return Link("log", np.log, np.exp, np.exp, np.exp)


def identity_link() -> Link:
    return Link(
        "identity",
        np.asarray,
        np.asarray,
        lambda eta: np.ones_like(np.asarray(eta, dtype=float)),
        lambda eta: np.zeros_like(np.asarray(eta, dtype=float)),
    )


def shifted_log_link(eps: float = 1e-8) -> Link:
    """log(theta - eps) link for parameters bounded below by ``eps``."""

    return Link(
        f"shifted-log({eps:g})",
        lambda theta: np.log(np.asarray(theta, dtype=float) - eps),
        lambda eta: eps + np.exp(eta),
        np.exp,
        np.exp,
    )


def logit_link() -> Link:
    """Inverse of the standardized logistic CDF, for parameters in (0, 1)."""

    def d1(eta):
        s = special.expit(eta)
        return s * special.expit(-np.asarray(eta, dtype=float))

    def d2(eta):
        s = special.expit(eta)
        return s * special.expit(-np.asarray(eta, dtype=float)) * (1.0 - 2.0 * s)

    return Link("logit", special.logit, special.expit, d1, d2)


LINKS = {
    "log": log_link,
    "identity": identity_link,
    "shifted-log": shifted_log_link,
    "logit": logit_link,
}


# ---------------------------------------------------------------------------
# support


@dataclass(frozen=True)
class Support:
    """Support of the response: a continuous interval or an integer lattice."""

    kind: str  # "continuous-interval" | "nonnegative-integers" | "positive-integers"
    lower: float
    upper: float

    def __post_init__(self):
        if self.lower >= self.upper:
            raise ValueError("support lower bound must be below upper bound")

    @property
    def is_discrete(self) -> bool:
        return self.kind != "continuous-interval"

    def contains(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        ok = (y >= self.lower) & (y <= self.upper)
        if self.kind == "continuous-interval":
            if np.isneginf(self.lower):
                pass
            else:
                ok &= y > self.lower  # open at a finite lower boundary
        else:
            ok &= y == np.floor(y)
        return ok


# ---------------------------------------------------------------------------
# family base class


class Family:
    """A response distribution with derivative oracles, links and a sampler.

    Instances are immutable and safe to share; samplers draw from an
    externally supplied :class:`numpy.random.Generator`.
    """

    code: str = ""
    name: str = ""
    n_params: int = 2
    support: Support
    links: tuple[Link, ...]
    # open parameter ranges as (lower, upper) per parameter
    param_ranges: tuple[tuple[float, float], ...]
    param_names = ("mu", "sigma", "nu")

    def __repr__(self):  # pragma: no cover - cosmetic
        return f"<Family {self.code}>"

    # -- subclass API (no validation, broadcastable arrays) ------------------

    def _log_density(self, y, *params):
        raise NotImplementedError

    def _score(self, y, *params):
        """Stacked d log f / d(mu, sigma, nu), shape (..., n_params)."""
        raise NotImplementedError

    def _hessian(self, y, *params):
        """Second derivatives, shape (..., n_params, n_params), symmetric."""
        raise NotImplementedError

    def _sample(self, rng, *params):
        raise NotImplementedError

    def _quantile(self, q, *params):
        raise NotImplementedError

    def initial_params(self, y) -> tuple[float, ...]:
        """Crude moment-based parameter estimates used to start optimizers."""
        raise NotImplementedError

    # -- validated public API -------------------------------------------------

    def _check_params(self, params):
        if len(params) != self.n_params:
            raise DomainError(
                f"{self.code} expects {self.n_params} parameters, got {len(params)}"
            )
        for value, (lo, hi), name in zip(params, self.param_ranges, self.param_names):
            arr = np.asarray(value, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr <= lo) or np.any(arr >= hi):
                raise DomainError(
                    f"{self.code}: parameter {name} outside its admissible range"
                )

    def _check_support(self, y):
        if not np.all(self.support.contains(y)):
            raise DomainError(f"{self.code}: observation outside the support")

    def log_density(self, y, *params):
        self._check_params(params)
        self._check_support(y)
        return self._log_density(np.asarray(y, dtype=float), *params)

    def score(self, y, *params):
        self._check_params(params)
        self._check_support(y)
        return self._score(np.asarray(y, dtype=float), *params)

    def hessian(self, y, *params):
        self._check_params(params)
        self._check_support(y)
        return self._hessian(np.asarray(y, dtype=float), *params)

    def sample(self, *params, rng: np.random.Generator, size=None):
        self._check_params(params)
        if size is not None:
            params = tuple(np.broadcast_to(p, size) for p in params)
        return self._sample(rng, *params)

    def quantile(self, q, *params):
        self._check_params(params)
        return self._quantile(np.asarray(q, dtype=float), *params)

    # -- predictor (eta) scale ------------------------------------------------

    def params_from_eta(self, eta) -> tuple[np.ndarray, ...]:
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        return tuple(
            link.inverse(eta[:, d]) for d, link in enumerate(self.links)
        )

    def log_density_eta(self, y, eta):
        params = self.params_from_eta(eta)
        return self._log_density(np.asarray(y, dtype=float), *params)

    def score_eta(self, y, eta):
        """d log f / d eta, shape (n, n_params)."""
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        params = self.params_from_eta(eta)
        s = self._score(np.asarray(y, dtype=float), *params)
        t1 = np.stack(
            [link.inverse_d1(eta[:, d]) for d, link in enumerate(self.links)], axis=-1
        )
        return s * t1

    def hessian_eta(self, y, eta):
        """d2 log f / d eta d eta', shape (n, n_params, n_params)."""
        eta = np.atleast_2d(np.asarray(eta, dtype=float))
        params = self.params_from_eta(eta)
        y = np.asarray(y, dtype=float)
        s = self._score(y, *params)
        h = self._hessian(y, *params)
        t1 = np.stack(
            [link.inverse_d1(eta[:, d]) for d, link in enumerate(self.links)], axis=-1
        )
        t2 = np.stack(
            [link.inverse_d2(eta[:, d]) for d, link in enumerate(self.links)], axis=-1
        )
        out = h * t1[..., :, None] * t1[..., None, :]
        idx = np.arange(self.n_params)
        out[..., idx, idx] += s * t2
        return out


# ---------------------------------------------------------------------------
# continuous location-scale families: log f = -log(sigma) + h(z), z=(y-mu)/sigma


class _LocationScale(Family):
    n_params = 2
    support = Support("continuous-interval", -np.inf, np.inf)
    param_ranges = ((-np.inf, np.inf), (0.0, np.inf))

    def __init__(self):
        self.links = (identity_link(), log_link())

    def _h(self, z):
        raise NotImplementedError

    def _h1(self, z):
        raise NotImplementedError

    def _h2(self, z):
        raise NotImplementedError

    def _log_density(self, y, mu, sigma):
        z = (y - mu) / sigma
        return self._h(z) - np.log(sigma)

    def _score(self, y, mu, sigma):
        z = (y - mu) / sigma
        h1 = self._h1(z)
        d_mu = -h1 / sigma
        d_sigma = -(1.0 + z * h1) / sigma
        return np.stack(np.broadcast_arrays(d_mu, d_sigma), axis=-1)

    def _hessian(self, y, mu, sigma):
        z = (y - mu) / sigma
        h1 = self._h1(z)
        h2 = self._h2(z)
        s2 = sigma**2
        h_mm = h2 / s2
        h_ms = (z * h2 + h1) / s2
        h_ss = (1.0 + 2.0 * z * h1 + z * z * h2) / s2
        h_mm, h_ms, h_ss = np.broadcast_arrays(h_mm, h_ms, h_ss)
        out = np.empty(h_mm.shape + (2, 2))
        out[..., 0, 0] = h_mm
        out[..., 0, 1] = out[..., 1, 0] = h_ms
        out[..., 1, 1] = h_ss
        return out


class Gaussian(_LocationScale):
    code = "N"
    name = "normal"

    def _h(self, z):
        return -0.5 * z * z - 0.5 * _LOG_2PI

    def _h1(self, z):
        return -z

    def _h2(self, z):
        return -np.ones_like(z)

    def _sample(self, rng, mu, sigma):
        return rng.normal(mu, sigma)

    def _quantile(self, q, mu, sigma):
        return stats.norm.ppf(q, loc=mu, scale=sigma)

    def initial_params(self, y):
        return float(np.mean(y)), max(float(np.std(y)), 1e-3)


class Gumbel(_LocationScale):
    """Minimum Gumbel: mean mu - 0.57722*sigma, variance (pi*sigma)^2/6."""

    code = "GU"
    name = "Gumbel"

    def _h(self, z):
        return z - np.exp(z)

    def _h1(self, z):
        return 1.0 - np.exp(z)

    def _h2(self, z):
        return -np.exp(z)

    def _sample(self, rng, mu, sigma):
        return mu + sigma * np.log(rng.exponential(size=np.broadcast(mu, sigma).shape))

    def _quantile(self, q, mu, sigma):
        return stats.gumbel_l.ppf(q, loc=mu, scale=sigma)

    def initial_params(self, y):
        sigma = max(float(np.std(y)) * math.sqrt(6.0) / math.pi, 1e-3)
        return float(np.mean(y)) + 0.57722 * sigma, sigma


class Logistic(_LocationScale):
    code = "LO"
    name = "logistic"

    def _h(self, z):
        return -z - 2.0 * np.logaddexp(0.0, -z)

    def _h1(self, z):
        return 1.0 - 2.0 * special.expit(z)

    def _h2(self, z):
        return -2.0 * special.expit(z) * special.expit(-z)

    def _sample(self, rng, mu, sigma):
        return rng.logistic(mu, sigma)

    def _quantile(self, q, mu, sigma):
        return stats.logistic.ppf(q, loc=mu, scale=sigma)

    def initial_params(self, y):
        return float(np.mean(y)), max(float(np.std(y)) * math.sqrt(3.0) / math.pi, 1e-3)


class LogNormal(Family):
    """log Y is N(mu, sigma^2); mean sqrt(exp(sigma^2)) * exp(mu)."""

    code = "LN"
    name = "log-normal"
    n_params = 2
    support = Support("continuous-interval", 0.0, np.inf)
    param_ranges = ((-np.inf, np.inf), (0.0, np.inf))

    def __init__(self):
        self.links = (identity_link(), log_link())

    def _log_density(self, y, mu, sigma):
        z = (np.log(y) - mu) / sigma
        return -np.log(y) - np.log(sigma) - 0.5 * _LOG_2PI - 0.5 * z * z

    def _score(self, y, mu, sigma):
        z = (np.log(y) - mu) / sigma
        return np.stack(np.broadcast_arrays(z / sigma, (z * z - 1.0) / sigma), axis=-1)

    def _hessian(self, y, mu, sigma):
        z = (np.log(y) - mu) / sigma
        s2 = sigma**2
        h_mm, h_ms, h_ss = np.broadcast_arrays(
            -1.0 / s2, -2.0 * z / s2, (1.0 - 3.0 * z * z) / s2
        )
        out = np.empty(h_mm.shape + (2, 2))
        out[..., 0, 0] = h_mm
        out[..., 0, 1] = out[..., 1, 0] = h_ms
        out[..., 1, 1] = h_ss
        return out

    def _sample(self, rng, mu, sigma):
        return rng.lognormal(mu, sigma)

    def _quantile(self, q, mu, sigma):
        return stats.lognorm.ppf(q, sigma, scale=np.exp(mu))

    def initial_params(self, y):
        ly = np.log(y)
        return float(np.mean(ly)), max(float(np.std(ly)), 1e-3)


class Gamma(Family):
    """Gamma with mean mu and variance sigma^2 * mu^2 (shape 1/sigma^2)."""

    code = "GA"
    name = "gamma"
    n_params = 2
    support = Support("continuous-interval", 0.0, np.inf)
    param_ranges = ((0.0, np.inf), (0.0, np.inf))

    def __init__(self):
        self.links = (log_link(), log_link())

    def _log_density(self, y, mu, sigma):
        a = sigma**-2
        return (
            (a - 1.0) * np.log(y)
            - a * y / mu
            - a * np.log(mu)
            + a * np.log(a)
            - special.gammaln(a)
        )

    def _score(self, y, mu, sigma):
        a = sigma**-2
        d_mu = a * (y - mu) / mu**2
        dl_da = np.log(y) - y / mu - np.log(mu) + np.log(a) + 1.0 - special.digamma(a)
        d_sigma = dl_da * (-2.0 * a / sigma)
        return np.stack(np.broadcast_arrays(d_mu, d_sigma), axis=-1)

    def _hessian(self, y, mu, sigma):
        a = sigma**-2
        da = -2.0 * a / sigma  # d a / d sigma
        d2a = 6.0 * a / sigma**2
        dl_da = np.log(y) - y / mu - np.log(mu) + np.log(a) + 1.0 - special.digamma(a)
        h_mm = a * (mu - 2.0 * y) / mu**3
        h_ma = (y - mu) / mu**2
        h_aa = 1.0 / a - special.polygamma(1, a)
        h_mm, h_ms, h_ss = np.broadcast_arrays(
            h_mm, h_ma * da, h_aa * da * da + dl_da * d2a
        )
        out = np.empty(h_mm.shape + (2, 2))
        out[..., 0, 0] = h_mm
        out[..., 0, 1] = out[..., 1, 0] = h_ms
        out[..., 1, 1] = h_ss
        return out

    def _sample(self, rng, mu, sigma):
        a = sigma**-2
        return rng.gamma(shape=a, scale=mu / a)

    def _quantile(self, q, mu, sigma):
        a = sigma**-2
        return stats.gamma.ppf(q, a, scale=mu / a)

    def initial_params(self, y):
        m = float(np.mean(y))
        cv = float(np.std(y)) / max(m, 1e-12)
        return max(m, 1e-6), min(max(cv, 0.05), 20.0)


class Weibull(Family):
    """Weibull with scale mu and shape sigma; mean mu * Gamma(1 + 1/sigma)."""

    code = "WEI"
    name = "Weibull"
    n_params = 2
    support = Support("continuous-interval", 0.0, np.inf)
    param_ranges = ((0.0, np.inf), (0.0, np.inf))

    def __init__(self):
        self.links = (log_link(), log_link())

    def _log_density(self, y, mu, sigma):
        u = np.log(y) - np.log(mu)
        return np.log(sigma) - np.log(mu) + (sigma - 1.0) * u - np.exp(sigma * u)

    def _score(self, y, mu, sigma):
        u = np.log(y) - np.log(mu)
        t = np.exp(sigma * u)
        d_mu = sigma * (t - 1.0) / mu
        d_sigma = 1.0 / sigma + u * (1.0 - t)
        return np.stack(np.broadcast_arrays(d_mu, d_sigma), axis=-1)

    def _hessian(self, y, mu, sigma):
        u = np.log(y) - np.log(mu)
        t = np.exp(sigma * u)
        h_mm = sigma * (1.0 - t - sigma * t) / mu**2
        h_ms = (t - 1.0 + sigma * t * u) / mu
        h_ss = -1.0 / sigma**2 - t * u * u
        h_mm, h_ms, h_ss = np.broadcast_arrays(h_mm, h_ms, h_ss)
        out = np.empty(h_mm.shape + (2, 2))
        out[..., 0, 0] = h_mm
        out[..., 0, 1] = out[..., 1, 0] = h_ms
        out[..., 1, 1] = h_ss
        return out

    def _sample(self, rng, mu, sigma):
        return mu * rng.weibull(np.broadcast_to(sigma, np.broadcast(mu, sigma).shape))

    def _quantile(self, q, mu, sigma):
        return stats.weibull_min.ppf(q, sigma, scale=mu)

    def initial_params(self, y):
        return max(float(np.mean(y)), 1e-6), 1.2


# ---------------------------------------------------------------------------
# discrete families


class Poisson(Family):
    code = "PO"
    name = "Poisson"
    n_params = 1
    support = Support("nonnegative-integers", 0.0, np.inf)
    param_ranges = ((0.0, np.inf),)

    def __init__(self):
        self.links = (log_link(),)

    def _log_density(self, y, mu):
        return special.xlogy(y, mu) - mu - special.gammaln(y + 1.0)

    def _score(self, y, mu):
        return np.stack(np.broadcast_arrays((y - mu) / mu), axis=-1)

    def _hessian(self, y, mu):
        h = np.broadcast_arrays(-y / mu**2)[0]
        return h[..., None, None]

    def _sample(self, rng, mu):
        return rng.poisson(mu).astype(float)

    def _quantile(self, q, mu):
        return stats.poisson.ppf(q, mu)

    def initial_params(self, y):
        return (max(float(np.mean(y)), 1e-3),)


class NegativeBinomial(Family):
    """Negative binomial with mean mu and variance mu + sigma * mu^2."""

    code = "NBI"
    name = "negative binomial"
    n_params = 2
    support = Support("nonnegative-integers", 0.0, np.inf)
    param_ranges = ((0.0, np.inf), (0.0, np.inf))

    def __init__(self):
        self.links = (log_link(), log_link())

    def _log_density(self, y, mu, sigma):
        r = 1.0 / sigma
        return (
            special.gammaln(y + r)
            - special.gammaln(r)
            - special.gammaln(y + 1.0)
            + y * (np.log(sigma) + np.log(mu))
            - (y + r) * np.log1p(sigma * mu)
        )

    def _score(self, y, mu, sigma):
        r = 1.0 / sigma
        L = np.log1p(sigma * mu)
        q = mu / (1.0 + sigma * mu)
        d_mu = y / mu - (sigma * y + 1.0) / (1.0 + sigma * mu)
        d_sigma = (
            (special.digamma(r) - special.digamma(y + r)) / sigma**2
            + y / sigma
            + L / sigma**2
            - (y + r) * q
        )
        return np.stack(np.broadcast_arrays(d_mu, d_sigma), axis=-1)

    def _hessian(self, y, mu, sigma):
        r = 1.0 / sigma
        L = np.log1p(sigma * mu)
        q = mu / (1.0 + sigma * mu)
        dig = special.digamma(r) - special.digamma(y + r)
        trig = special.polygamma(1, r) - special.polygamma(1, y + r)
        h_mm = -y / mu**2 + (sigma * y + 1.0) * sigma / (1.0 + sigma * mu) ** 2
        h_ms = -(y - mu) / (1.0 + sigma * mu) ** 2
        h_ss = (
            -2.0 * dig / sigma**3
            - trig / sigma**4
            - y / sigma**2
            - 2.0 * L / sigma**3
            + 2.0 * q / sigma**2
            + (y + r) * q * q
        )
        h_mm, h_ms, h_ss = np.broadcast_arrays(h_mm, h_ms, h_ss)
        out = np.empty(h_mm.shape + (2, 2))
        out[..., 0, 0] = h_mm
        out[..., 0, 1] = out[..., 1, 0] = h_ms
        out[..., 1, 1] = h_ss
        return out

    def _sample(self, rng, mu, sigma):
        shape = np.broadcast(mu, sigma).shape
        g = rng.gamma(shape=np.broadcast_to(1.0 / sigma, shape), scale=sigma)
        return rng.poisson(mu * g).astype(float)

    def _quantile(self, q, mu, sigma):
        r = 1.0 / sigma
        return stats.nbinom.ppf(q, r, 1.0 / (1.0 + sigma * mu))

    def initial_params(self, y):
        m = max(float(np.mean(y)), 1e-3)
        v = float(np.var(y))
        return m, min(max((v - m) / m**2, 0.05), 50.0)


class ZeroTruncatedPoisson(Family):
    """Poisson conditioned on Y >= 1; mean mu / (1 - exp(-mu))."""

    code = "ZTP"
    name = "zero-truncated Poisson"
    n_params = 1
    support = Support("positive-integers", 1.0, np.inf)
    param_ranges = ((0.0, np.inf),)

    def __init__(self):
        self.links = (log_link(),)

    def _log_density(self, y, mu):
        return (
            special.xlogy(y, mu)
            - special.gammaln(y + 1.0)
            - mu
            - np.log(-np.expm1(-mu))
        )

    def _score(self, y, mu):
        s = y / mu - 1.0 - 1.0 / np.expm1(mu)
        return np.stack(np.broadcast_arrays(s), axis=-1)

    def _hessian(self, y, mu):
        em = np.expm1(mu)
        h = np.broadcast_arrays(-y / mu**2 + (em + 1.0) / em**2)[0]
        return h[..., None, None]

    def _sample(self, rng, mu):
        mu = np.broadcast_arrays(np.asarray(mu, dtype=float))[0]
        y = rng.poisson(mu).astype(float)
        # redraw zeros; expected number of passes is 1 / (1 - exp(-mu))
        for _ in range(10_000):
            zero = y < 1.0
            if not np.any(zero):
                return y
            y[zero] = rng.poisson(mu[zero] if mu.ndim else mu)
        raise RuntimeError("zero-truncated Poisson rejection sampler stalled")

    def _quantile(self, q, mu):
        p0 = np.exp(-mu)
        return np.maximum(stats.poisson.ppf(p0 + q * (1.0 - p0), mu), 1.0)

    def initial_params(self, y):
        m = float(np.mean(y))
        mu = max(m - 1.0, 1e-3) if m > 1.0 else 1e-3
        for _ in range(50):
            mu = max(m * -np.expm1(-mu), 1e-3)
        return (mu,)


FAMILIES: dict[str, type[Family]] = {
    cls.code: cls
    for cls in (
        Gaussian,
        Gamma,
        LogNormal,
        Weibull,
        Gumbel,
        Logistic,
        Poisson,
        NegativeBinomial,
        ZeroTruncatedPoisson,
    )
}


def get_family(code: str) -> Family:
    """Return a family instance by its short code (e.g. "N", "GA", "PO")."""

    try:
        return FAMILIES[code]()
    except KeyError:
        known = ", ".join(sorted(FAMILIES))
        raise KeyError(f"unknown family code {code!r}; available: {known}") from None
