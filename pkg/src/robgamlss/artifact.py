"""Model configuration parsing and fit-artifact serialization.

Configurations and artifacts are UTF-8 JSON.  An artifact stores everything
needed to reproduce predictions on new data: family, coefficient vector,
per-term knots and centering constraints, smoothing parameters, covariances
and the version stamp checked on load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ._version import __version__
from .families import get_family
from .inference import covariances, edf
from .objective import FitResult
from .robust import CorrectionIntegrator
from .smooth import (
    ModelDesign,
    SmoothSpec,
    assemble_design,
    bspline_basis,
    centering_transform,
    _row_kronecker,
)
from .smoothsel import EfsOptions
from .trustregion import TrustRegionOptions
from .tuning import MdpConfig

__all__ = [
    "ARTIFACT_VERSION",
    "ConfigError",
    "SchemaError",
    "ArtifactError",
    "ModelConfig",
    "parse_model_config",
    "build_design",
    "artifact_from_fit",
    "save_artifact",
    "load_artifact",
    "predict_from_artifact",
]

ARTIFACT_VERSION = 1


class ConfigError(ValueError):
    """Malformed model configuration."""


class SchemaError(ValueError):
    """Data does not match the configuration or artifact schema."""


class ArtifactError(ValueError):
    """Unreadable or incompatible artifact."""


@dataclass
class ModelConfig:
    family: str
    response: str
    terms: list[SmoothSpec]
    robust: float | str | None = None  # None = classical ML, float = c, "tune"
    select: str = "efs"
    grid: tuple[float, float, int] = (1e-4, 1e4, 20)
    tune: MdpConfig = field(default_factory=MdpConfig)
    integrator: CorrectionIntegrator = field(default_factory=CorrectionIntegrator)
    optimizer: TrustRegionOptions = field(default_factory=TrustRegionOptions)
    efs: EfsOptions = field(default_factory=EfsOptions)
    seed: int = 0
    level: float = 0.95
    cov: str = "posterior"
    raw: dict = field(default_factory=dict)


def _parse_grid(text) -> tuple[float, float, int]:
    try:
        lo, hi, num = str(text).split(":")
        return float(lo), float(hi), int(num)
    except Exception:
        raise ConfigError(f"lambda grid must look like 'lo:hi:n', got {text!r}") from None


def parse_model_config(obj: dict) -> ModelConfig:
    """Validate a configuration mapping and build the typed config."""

    if not isinstance(obj, dict):
        raise ConfigError("configuration must be a JSON object")
    for key in ("family", "response", "terms"):
        if key not in obj:
            raise ConfigError(f"configuration is missing the {key!r} field")
    try:
        family = get_family(obj["family"])
    except KeyError as exc:
        raise ConfigError(str(exc)) from None

    terms = []
    for i, term in enumerate(obj["terms"]):
        smooth = term.get("smooth")
        if smooth is None or "param" not in term:
            raise ConfigError(f"term {i} needs 'param' and 'smooth' entries")
        variables = smooth.get("vars")
        if not variables:
            raise ConfigError(f"term {i} smooth needs a 'vars' list")
        k = smooth.get("k", 10)
        k = tuple(k) if isinstance(k, (list, tuple)) else (int(k),) * len(variables)
        spec = SmoothSpec(
            param=term["param"],
            covariates=tuple(variables),
            k=k,
            order=int(smooth.get("order", 2)),
            degree=int(smooth.get("degree", 3)),
        )
        if spec.param not in family.param_names[: family.n_params]:
            raise ConfigError(
                f"term {i} targets {spec.param!r} but family {family.code} "
                f"models {family.param_names[: family.n_params]}"
            )
        terms.append(spec)

    robust = obj.get("robust", None)
    if robust in (None, "ml"):
        robust = None
    elif robust == "tune":
        pass
    else:
        try:
            robust = float(robust)
        except (TypeError, ValueError):
            raise ConfigError(
                f"'robust' must be a number, 'ml' or 'tune', got {robust!r}"
            ) from None
        if robust <= 0:
            raise ConfigError("robustness constant c must be positive")

    select = obj.get("select", "efs")
    if select not in ("efs", "raic", "rbic"):
        raise ConfigError(f"'select' must be efs, raic or rbic, got {select!r}")

    grid = obj.get("lambda_grid")
    grid = _parse_grid(grid) if grid is not None else (1e-4, 1e4, 20)

    tune_cfg = obj.get("tune", {})
    tune = MdpConfig(
        target=float(tune_cfg.get("target_mdp", 0.95)),
        replications=int(tune_cfg.get("replications", 100)),
        bracket=tuple(tune_cfg.get("bracket", (0.5, 20.0))),
    )
    integrator = CorrectionIntegrator(**obj.get("integrator", {}))
    optimizer = TrustRegionOptions(**obj.get("optimizer", {}))
    efs = EfsOptions(**obj.get("efs", {}))

    return ModelConfig(
        family=family.code,
        response=str(obj["response"]),
        terms=terms,
        robust=robust,
        select=select,
        grid=grid,
        tune=tune,
        integrator=integrator,
        optimizer=optimizer,
        efs=efs,
        seed=int(obj.get("seed", 0)),
        level=float(obj.get("level", 0.95)),
        cov=str(obj.get("cov", "posterior")),
        raw=obj,
    )


def build_design(config: ModelConfig, data: dict) -> ModelDesign:
    """Assemble the design, checking that every covariate column exists."""

    family = get_family(config.family)
    missing = sorted(
        {name for spec in config.terms for name in spec.covariates if name not in data}
    )
    if missing:
        raise SchemaError(f"data is missing covariate column(s): {', '.join(missing)}")
    covariates = {
        name: np.asarray(data[name], dtype=float)
        for spec in config.terms
        for name in spec.covariates
    }
    return assemble_design(config.terms, covariates, family)


# ---------------------------------------------------------------------------
# artifact serialization


def artifact_from_fit(
    fit: FitResult, config: ModelConfig, tune_trace=None, tuned_c=None
) -> dict:
    bundle = covariances(fit)
    report = edf(fit)
    design = fit.design
    terms = []
    for block in design.blocks:
        terms.append(
            {
                "param": block.param,
                "covariates": list(block.covariates),
                "k": list(block.marginal_dims),
                "order": block.order,
                "degree": block.degree,
                "knots": [k.tolist() for k in block.knots],
                "constraint": block.constraint.tolist(),
                "offset": block.offset,
                "n_coef": block.n_coef,
            }
        )
    return {
        "version": ARTIFACT_VERSION,
        "created_by": f"robgamlss {__version__}",
        "family": design.family.code,
        "response": config.response,
        "n": design.n,
        "p": design.p,
        "c": None if fit.rho is None else fit.rho.c,
        "select": fit.select,
        "converged": bool(fit.converged),
        "lambda": {
            label: float(value)
            for label, value in zip(design.lambda_labels, fit.lam)
        },
        "delta": fit.delta.tolist(),
        "edf": {"total": report.total, "per_param": report.per_param},
        "weights": fit.weights.tolist(),
        "cov_diag": {
            "posterior": np.diag(bundle.posterior).tolist(),
            "sandwich": np.diag(bundle.sandwich).tolist(),
        },
        "cov": {
            "posterior": bundle.posterior.tolist(),
            "sandwich": bundle.sandwich.tolist(),
        },
        "terms": terms,
        "param_names": list(design.family.param_names[: design.family.n_params]),
        "param_slices": [[sl.start, sl.stop] for sl in design.param_slices],
        "intercept_cols": list(design.intercept_cols),
        "level": config.level,
        "mdp_trace": tune_trace,
        "tuned_c": tuned_c,
        "seed": config.seed,
        "config": config.raw,
    }


def save_artifact(path, artifact: dict) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(artifact, handle, indent=1)


def load_artifact(path) -> dict:
    try:
        with open(path, encoding="utf-8") as handle:
            artifact = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"cannot read artifact {path}: {exc}") from exc
    version = artifact.get("version")
    if version != ARTIFACT_VERSION:
        raise ArtifactError(
            f"artifact version {version!r} does not match supported version "
            f"{ARTIFACT_VERSION}; refusing to use it"
        )
    return artifact


# ---------------------------------------------------------------------------
# prediction from a stored artifact


def _eta_from_artifact(artifact: dict, data: dict):
    """Predictors on new data, rebuilding each term from its stored knots.

    Out-of-envelope covariates are clamped to the training envelope and
    flagged per row rather than dropped.
    """

    missing = sorted(
        {
            name
            for term in artifact["terms"]
            for name in term["covariates"]
            if name not in data
        }
    )
    if missing:
        raise SchemaError(f"data is missing covariate column(s): {', '.join(missing)}")
    lengths = {len(np.asarray(v)) for v in data.values()}
    if len(lengths) != 1:
        raise SchemaError("data columns have mismatched lengths")
    n = lengths.pop()

    delta = np.asarray(artifact["delta"], dtype=float)
    d = len(artifact["param_names"])
    eta = np.zeros((n, d))
    flags = np.zeros(n, dtype=bool)
    names = artifact["param_names"]
    for col, name in zip(artifact["intercept_cols"], names):
        eta[:, names.index(name)] += delta[col]
    for term in artifact["terms"]:
        cols = []
        for cov_name, knots in zip(term["covariates"], term["knots"]):
            knots = np.asarray(knots, dtype=float)
            x = np.asarray(data[cov_name], dtype=float)
            outside = (x < knots[0]) | (x > knots[-1])
            flags |= outside
            x = np.clip(x, knots[0], knots[-1])
            cols.append(bspline_basis(x, knots, term["degree"]))
        raw = cols[0] if len(cols) == 1 else _row_kronecker(cols[0], cols[1])
        Z = centering_transform(np.asarray(term["constraint"], dtype=float))
        X = raw @ Z
        sl = slice(term["offset"], term["offset"] + term["n_coef"])
        eta[:, names.index(term["param"])] += X @ delta[sl]
    return eta, flags


def predict_from_artifact(artifact: dict, data: dict, cov=None, level=None):
    """Predictors, canonical parameters and pointwise intervals on new rows."""

    from scipy.stats import norm

    cov = cov or artifact.get("cov_choice", "posterior")
    level = level if level is not None else artifact.get("level", 0.95)
    eta, flags = _eta_from_artifact(artifact, data)
    family = get_family(artifact["family"])
    params = family.params_from_eta(eta)

    C = np.asarray(artifact["cov"][cov], dtype=float)
    n = eta.shape[0]
    d = len(artifact["param_names"])
    se = np.zeros((n, d))
    for j, (name, (start, stop)) in enumerate(
        zip(artifact["param_names"], artifact["param_slices"])
    ):
        X_d = np.zeros((n, stop - start))
        X_d[:, artifact["intercept_cols"][j] - start] = 1.0
        for term in artifact["terms"]:
            if term["param"] != name:
                continue
            cols = []
            for cov_name, knots in zip(term["covariates"], term["knots"]):
                knots = np.asarray(knots, dtype=float)
                x = np.clip(
                    np.asarray(data[cov_name], dtype=float), knots[0], knots[-1]
                )
                cols.append(bspline_basis(x, knots, term["degree"]))
            raw = cols[0] if len(cols) == 1 else _row_kronecker(cols[0], cols[1])
            Z = centering_transform(np.asarray(term["constraint"], dtype=float))
            X_d[:, term["offset"] - start : term["offset"] - start + term["n_coef"]] = (
                raw @ Z
            )
        block = C[start:stop, start:stop]
        se[:, j] = np.sqrt(np.maximum(np.einsum("ij,jk,ik->i", X_d, block, X_d), 0.0))
    z = norm.ppf(0.5 * (1.0 + level))
    return {
        "eta": eta,
        "params": params,
        "se": se,
        "lower": eta - z * se,
        "upper": eta + z * se,
        "outside_envelope": flags,
    }
