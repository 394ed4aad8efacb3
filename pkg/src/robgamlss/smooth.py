"""Spline bases, difference penalties, centering constraints and the stacked
model design.

Smooth terms use cubic B-splines on quantile knots with difference penalties
(P-splines); two-dimensional terms are row-wise Kronecker products of marginal
bases carrying one smoothing parameter per direction.  Every smooth is
centered (columns sum to zero over the data) so intercepts stay identifiable,
and the total penalty S(lambda) is exactly linear in each lambda component.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.interpolate import BSpline

from .families import Family

__all__ = [
    "DesignError",
    "SmoothSpec",
    "DesignBlock",
    "ModelDesign",
    "quantile_knots",
    "bspline_basis",
    "difference_penalty",
    "centering_transform",
    "build_smooth_block",
    "assemble_design",
]


class DesignError(ValueError):
    """Invalid smooth specification or data/design mismatch."""


# ---------------------------------------------------------------------------
# basis and penalty primitives


def quantile_knots(x, k: int, degree: int = 3) -> np.ndarray:
    """Knot vector with interior knots at covariate quantiles and boundary
    knots of multiplicity degree + 1, sized for ``k`` basis functions."""

    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DesignError("covariate values must be finite")
    if k < degree + 1:
        raise DesignError(f"basis dimension k={k} needs k >= degree+1={degree + 1}")
    n_interior = k - degree - 1
    probs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    interior = np.quantile(x, probs)
    lo, hi = float(x.min()), float(x.max())
    full = np.r_[lo, interior, hi]
    if np.any(np.diff(full) <= 0):
        raise DesignError(
            "not enough distinct covariate values to place the requested knots"
        )
    return np.r_[np.full(degree + 1, lo), interior, np.full(degree + 1, hi)]


def bspline_basis(x, knots: np.ndarray, degree: int = 3) -> np.ndarray:
    """Dense n x k matrix of B-spline evaluations; errors outside the knots."""

    x = np.asarray(x, dtype=float)
    lo, hi = knots[0], knots[-1]
    if np.any(x < lo) or np.any(x > hi):
        raise DesignError("covariate value outside the knot envelope")
    return BSpline.design_matrix(x, knots, degree, extrapolate=False).toarray()


def build_bspline_basis(x, k: int, degree: int = 3):
    """Convenience wrapper returning (basis, knots) for quantile knots."""

    knots = quantile_knots(x, k, degree)
    return bspline_basis(x, knots, degree), knots


def difference_penalty(k: int, order: int = 2) -> np.ndarray:
    """Penalty D = Delta_m' Delta_m for m-th order coefficient differences.

    Symmetric positive semi-definite with rank k - m; polynomials of degree
    below m in the coefficient index are unpenalized.
    """

    if order < 1:
        raise DesignError("difference order must be >= 1")
    if k <= order:
        raise DesignError(f"need k > order, got k={k}, order={order}")
    delta = np.diff(np.eye(k), order, axis=0)
    return delta.T @ delta


def centering_transform(col_sums: np.ndarray) -> np.ndarray:
    """Orthonormal k x (k-1) basis Z of the null space of ``col_sums``,
    built from a single Householder reflection; X @ Z has zero column sums."""

    c = np.asarray(col_sums, dtype=float)
    norm = np.linalg.norm(c)
    if norm == 0.0:
        raise DesignError("degenerate centering constraint (zero column sums)")
    v = c.copy()
    v[0] += np.copysign(norm, c[0] if c[0] != 0 else 1.0)
    H = np.eye(c.size) - 2.0 * np.outer(v, v) / (v @ v)
    return H[:, 1:]


def _row_kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


# ---------------------------------------------------------------------------
# smooth terms


@dataclass(frozen=True)
class SmoothSpec:
    """A penalized smooth of one or two covariates for one model parameter."""

    param: str  # "mu", "sigma" or "nu"
    covariates: tuple[str, ...]
    k: tuple[int, ...]  # marginal basis dimensions
    order: int = 2
    degree: int = 3

    def __post_init__(self):
        cov = tuple(self.covariates)
        kk = (self.k,) if isinstance(self.k, int) else tuple(self.k)
        object.__setattr__(self, "covariates", cov)
        object.__setattr__(self, "k", kk)
        if len(cov) not in (1, 2):
            raise DesignError("a smooth takes one or two covariates")
        if len(kk) != len(cov):
            raise DesignError("one basis dimension per covariate is required")
        for kj in kk:
            if kj < self.order + 2:
                raise DesignError(f"basis dimension {kj} needs k >= order+2")
            if kj < self.degree + 1:
                raise DesignError(f"basis dimension {kj} needs k >= degree+1")
        if len(cov) == 2 and min(kk) < 4:
            raise DesignError("tensor smooths need marginal dimensions >= 4")

    @property
    def label(self) -> str:
        return f"{self.param}:s({','.join(self.covariates)})"


@dataclass
class DesignBlock:
    """One centered smooth term: basis, penalties and rebuild information."""

    label: str
    param: str
    covariates: tuple[str, ...]
    X: np.ndarray  # n x J' constrained basis
    penalties: list[np.ndarray]  # J' x J', one per smoothing parameter
    knots: tuple[np.ndarray, ...]
    degree: int
    order: int
    constraint: np.ndarray  # pre-constraint column sums defining Z
    marginal_dims: tuple[int, ...]
    offset: int = 0  # first column of this block in the stacked coefficients

    @property
    def n_coef(self) -> int:
        return self.X.shape[1]


def _raw_block_matrices(spec: SmoothSpec, data: Mapping[str, np.ndarray]):
    for name in spec.covariates:
        if name not in data:
            raise DesignError(f"covariate {name!r} missing from the data")
    if len(spec.covariates) == 1:
        x = np.asarray(data[spec.covariates[0]], dtype=float)
        B, knots = build_bspline_basis(x, spec.k[0], spec.degree)
        return B, [difference_penalty(spec.k[0], spec.order)], (knots,)
    x1 = np.asarray(data[spec.covariates[0]], dtype=float)
    x2 = np.asarray(data[spec.covariates[1]], dtype=float)
    B1, knots1 = build_bspline_basis(x1, spec.k[0], spec.degree)
    B2, knots2 = build_bspline_basis(x2, spec.k[1], spec.degree)
    X = _row_kronecker(B1, B2)
    D1 = difference_penalty(spec.k[0], spec.order)
    D2 = difference_penalty(spec.k[1], spec.order)
    penalties = [np.kron(D1, np.eye(spec.k[1])), np.kron(np.eye(spec.k[0]), D2)]
    return X, penalties, (knots1, knots2)


def apply_centering(X: np.ndarray, penalties: Sequence[np.ndarray]):
    """Drop the constant direction: columns of X @ Z sum to zero and each
    penalty becomes Z' D Z (a congruence, so semi-definiteness survives)."""

    col_sums = X.sum(axis=0)
    Z = centering_transform(col_sums)
    return X @ Z, [Z.T @ D @ Z for D in penalties], col_sums


def build_smooth_block(spec: SmoothSpec, data: Mapping[str, np.ndarray]) -> DesignBlock:
    X_raw, penalties_raw, knots = _raw_block_matrices(spec, data)
    X, penalties, col_sums = apply_centering(X_raw, penalties_raw)
    return DesignBlock(
        label=spec.label,
        param=spec.param,
        covariates=spec.covariates,
        X=X,
        penalties=penalties,
        knots=knots,
        degree=spec.degree,
        order=spec.order,
        constraint=col_sums,
        marginal_dims=spec.k,
    )


def evaluate_block(block: DesignBlock, data: Mapping[str, np.ndarray], clamp=False):
    """Rebuild a block's constrained basis on new data.

    With ``clamp`` covariates are clipped to the training knot envelope and a
    per-row out-of-envelope flag is returned alongside the matrix.
    """

    cols = []
    flags = None
    for name, knots in zip(block.covariates, block.knots):
        if name not in data:
            raise DesignError(f"covariate {name!r} missing from the data")
        x = np.asarray(data[name], dtype=float)
        outside = (x < knots[0]) | (x > knots[-1])
        if np.any(outside):
            if not clamp:
                raise DesignError("covariate value outside the knot envelope")
            x = np.clip(x, knots[0], knots[-1])
        flags = outside if flags is None else (flags | outside)
        cols.append(bspline_basis(x, knots, block.degree))
    raw = cols[0] if len(cols) == 1 else _row_kronecker(cols[0], cols[1])
    Z = centering_transform(block.constraint)
    return raw @ Z, flags


# ---------------------------------------------------------------------------
# assembled model design


@dataclass
class ModelDesign:
    """Stacked per-parameter designs with the penalty builders.

    Coefficients are ordered parameter by parameter, each parameter holding an
    intercept followed by its smooth blocks.  ``S(lam)`` is block-diagonal and
    exactly linear in every component of lambda; ``dS(j)`` returns the
    constant derivative (the embedded j-th penalty).
    """

    family: Family
    n: int
    blocks: list[DesignBlock]
    param_slices: list[slice]
    X_per_param: list[np.ndarray]
    p: int
    lambda_labels: list[str]
    penalized_mask: np.ndarray
    intercept_cols: list[int]
    _dS: list[np.ndarray] = field(repr=False, default_factory=list)

    @property
    def n_lambda(self) -> int:
        return len(self.lambda_labels)

    def S(self, lam) -> np.ndarray:
        lam = np.asarray(lam, dtype=float).reshape(-1)
        if lam.size != self.n_lambda:
            raise DesignError(
                f"expected {self.n_lambda} smoothing parameters, got {lam.size}"
            )
        if np.any(lam < 0):
            raise DesignError("smoothing parameters must be nonnegative")
        S = np.zeros((self.p, self.p))
        for lam_j, dS_j in zip(lam, self._dS):
            S += lam_j * dS_j
        return S

    def dS(self, j: int) -> np.ndarray:
        return self._dS[j]

    def eta(self, delta) -> np.ndarray:
        delta = np.asarray(delta, dtype=float)
        return np.column_stack(
            [X_d @ delta[sl] for X_d, sl in zip(self.X_per_param, self.param_slices)]
        )

    def initial_delta(self, y) -> np.ndarray:
        delta = np.zeros(self.p)
        start = self.family.initial_params(np.asarray(y, dtype=float))
        for d, (col, link) in enumerate(zip(self.intercept_cols, self.family.links)):
            delta[col] = float(link.forward(start[d]))
        return delta

    def penalty_quadratic(self, delta, lam) -> float:
        delta = np.asarray(delta, dtype=float)
        return 0.5 * float(delta @ self.S(lam) @ delta)


def assemble_design(
    specs: Sequence[SmoothSpec], data: Mapping[str, np.ndarray], family: Family
) -> ModelDesign:
    """Build the stacked design: one intercept per modeled parameter plus the
    requested smooths, with exact coefficient/penalty bookkeeping."""

    param_names = family.param_names[: family.n_params]
    for spec in specs:
        if spec.param not in param_names:
            raise DesignError(
                f"smooth targets parameter {spec.param!r} but family "
                f"{family.code} models {param_names}"
            )
    lengths = {len(np.asarray(v)) for v in data.values()}
    if len(lengths) > 1:
        raise DesignError("covariate columns have mismatched lengths")
    n = lengths.pop() if lengths else 0
    if n == 0:
        raise DesignError("empty data")

    blocks_by_param: dict[str, list[DesignBlock]] = {p: [] for p in param_names}
    for spec in specs:
        blocks_by_param[spec.param].append(build_smooth_block(spec, data))

    blocks: list[DesignBlock] = []
    param_slices: list[slice] = []
    X_per_param: list[np.ndarray] = []
    intercept_cols: list[int] = []
    offset = 0
    ones = np.ones((n, 1))
    for pname in param_names:
        start = offset
        intercept_cols.append(offset)
        cols = [ones]
        offset += 1
        for block in blocks_by_param[pname]:
            block.offset = offset
            cols.append(block.X)
            blocks.append(block)
            offset += block.n_coef
        param_slices.append(slice(start, offset))
        X_per_param.append(np.hstack(cols))
    p = offset

    lambda_labels: list[str] = []
    dS_list: list[np.ndarray] = []
    penalized = np.zeros(p, dtype=bool)
    for block in blocks:
        sl = slice(block.offset, block.offset + block.n_coef)
        penalized[sl] = True
        for i, P in enumerate(block.penalties):
            suffix = f":{i + 1}" if len(block.penalties) > 1 else ""
            lambda_labels.append(block.label + suffix)
            embedded = np.zeros((p, p))
            embedded[sl, sl] = 0.5 * (P + P.T)
            dS_list.append(embedded)

    return ModelDesign(
        family=family,
        n=n,
        blocks=blocks,
        param_slices=param_slices,
        X_per_param=X_per_param,
        p=p,
        lambda_labels=lambda_labels,
        penalized_mask=penalized,
        intercept_cols=intercept_cols,
        _dS=dS_list,
    )
