"""Per-gene analyses under a fitted sample covariance.

Each gene ``y`` (a column of the expression matrix) is modelled as
``N(0, sigma2_c K + sigma2_e I)`` with the fitted ``K`` shared by all genes.
Everything is computed in the eigenbasis of ``K``, decomposed once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import ExpressionMatrix, ModelFit, symmetric_eigh
from .errors import (
    DegeneratePredictorError,
    NotPositiveDefiniteError,
    ShapeError,
    SingularGeneCovarianceError,
)

LOG_RATIO_BOUNDS = (-12.0, 12.0)
_GRID_POINTS = 97


@dataclass(frozen=True)
class KernelEigen:
    """Eigendecomposition ``K = Q diag(s) Q^T``, computed once and shared."""

    values: np.ndarray
    vectors: np.ndarray

    @classmethod
    def from_fit(cls, fit) -> "KernelEigen":
        if isinstance(fit, KernelEigen):
            return fit
        K = fit.K if isinstance(fit, ModelFit) else np.asarray(fit, dtype=float)
        if K.ndim != 2 or K.shape[0] != K.shape[1]:
            raise ShapeError(f"K must be square, got {K.shape}")
        vals, vecs = symmetric_eigh(0.5 * (K + K.T))
        if vals[-1] <= 0:
            raise NotPositiveDefiniteError(
                f"K is not positive definite (smallest eigenvalue {vals[-1]:.6g})",
                eigenvalue=float(vals[-1]),
            )
        return cls(vals, vecs)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def rotate(self, y):
        return self.vectors.T @ y

    def apply(self, weights, y):
        """``Q diag(weights) Q^T y``; ``weights`` may be ``n`` or ``n x m``."""
        rotated = self.vectors.T @ y
        return self.vectors @ (weights * rotated)


@dataclass(frozen=True)
class GeneVarianceFit:
    """Per-gene weights of the shared covariance ``K`` and of independent noise.

    ``identifiable`` is False when ``K`` is a multiple of the identity, in
    which case only ``sigma2_c * k + sigma2_e`` is determined and the
    ``sigma2_c = 0`` solution is reported.  ``degenerate`` marks an all-zero
    gene, for which the likelihood is unbounded and ``sigma2_e = 0``.
    """

    sigma2_c: float
    sigma2_e: float
    loglik: float
    identifiable: bool = True
    degenerate: bool = False


def _gaussian_loglik(s, r2, sigma2_c, sigma2_e):
    v = sigma2_c * s + sigma2_e
    return -0.5 * (s.size * math.log(2 * math.pi) + np.sum(np.log(v)) + np.sum(r2 / v))


def _profile(log_ratio, s, r2):
    # sigma2_e profiled out for the ratio delta = sigma2_c / sigma2_e
    w = math.exp(log_ratio) * s + 1.0
    sigma2_e = float(np.mean(r2 / w))
    return sigma2_e, -0.5 * s.size * (math.log(2 * math.pi * sigma2_e) + 1.0) - 0.5 * np.sum(np.log(w))


def _profile_slope(log_ratio, s, r2):
    # sign of d profile / d log_ratio, up to a positive factor
    w = math.exp(log_ratio) * s + 1.0
    return float(np.sum(r2 * s / w**2) / np.sum(r2 / w) - np.mean(s / w))


def _refine(grid, values, s, r2):
    """Locate the maximizing log-ratio near the best grid point.

    The stationarity condition is solved by bracketed root finding, which
    pins the optimum to machine precision (a value-based search stalls at
    about the square root of it).
    """
    k = int(np.argmax(values))
    if k == grid.size - 1:
        return float(grid[k])
    left, right = grid[max(k - 1, 0)], grid[k + 1]
    a, b = _profile_slope(left, s, r2), _profile_slope(right, s, r2)
    if a > 0 > b:
        return float(optimize.brentq(_profile_slope, left, right, args=(s, r2),
                                     xtol=1e-14, rtol=4 * np.finfo(float).eps))
    if k == 0 and a <= 0:
        return float(grid[0])
    res = optimize.minimize_scalar(
        lambda t: -_profile(t, s, r2)[1], bounds=(left, right), method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x) if -res.fun >= values[k] else float(grid[k])


def fit_gene_variances(fit, y, eig: KernelEigen | None = None,
                       rtol: float = 1e-10) -> GeneVarianceFit:
    """Maximum-likelihood ``sigma2_c`` and ``sigma2_e`` for one gene.

    The noise scale is profiled out, leaving a one-dimensional search over
    ``log(sigma2_c / sigma2_e)`` in ``[-12, 12]``: a coarse grid locates the
    best bracket, the zero of the profile slope is found inside it, and the
    ``sigma2_c = 0`` boundary is compared explicitly.
    """
    eig = KernelEigen.from_fit(fit if eig is None else eig)
    y = np.asarray(y, dtype=float).ravel()
    if y.shape[0] != eig.n:
        raise ShapeError(f"gene has {y.shape[0]} samples, K has {eig.n}")
    s = eig.values
    r2 = eig.rotate(y) ** 2
    if not np.any(r2 > 0):
        return GeneVarianceFit(0.0, 0.0, math.inf, identifiable=True, degenerate=True)

    def boundary():
        sigma2_e = float(np.mean(r2))
        return sigma2_e, _gaussian_loglik(s, r2, 0.0, sigma2_e)

    if s[0] - s[-1] <= rtol * s[0]:
        sigma2_e, ll = boundary()
        return GeneVarianceFit(0.0, sigma2_e, ll, identifiable=False)

    lo, hi = LOG_RATIO_BOUNDS
    grid = np.linspace(lo, hi, _GRID_POINTS)
    values = [_profile(t, s, r2)[1] for t in grid]
    t_best = _refine(grid, values, s, r2)
    sigma2_e, ll = _profile(t_best, s, r2)
    sigma2_c = math.exp(t_best) * sigma2_e

    e0, ll0 = boundary()
    if ll0 >= ll:
        return GeneVarianceFit(0.0, e0, ll0)
    return GeneVarianceFit(sigma2_c, sigma2_e, float(ll))


def fit_all_gene_variances(fit, Y) -> list:
    """:func:`fit_gene_variances` for every gene (column) of ``Y``."""
    values = Y.values if isinstance(Y, ExpressionMatrix) else np.asarray(Y, dtype=float)
    eig = KernelEigen.from_fit(fit)
    return [fit_gene_variances(None, values[:, i], eig=eig) for i in range(values.shape[1])]


def _gene_weights(eig, gene_fits, m, numerator, gene_ids):
    if len(gene_fits) != m:
        raise ShapeError(f"{len(gene_fits)} gene fits for {m} genes")
    c = np.array([g.sigma2_c for g in gene_fits], dtype=float)
    e = np.array([g.sigma2_e for g in gene_fits], dtype=float)
    bad = np.flatnonzero((c == 0) & (e == 0))
    if bad.size:
        gene = gene_ids[bad[0]] if gene_ids else int(bad[0])
        raise SingularGeneCovarianceError(
            f"gene {gene}: sigma2_c and sigma2_e are both zero, covariance is singular",
            gene=gene,
        )
    s = eig.values[:, None]
    denom = c[None, :] * s + e[None, :]
    top = s if numerator == "kernel" else np.broadcast_to(e[None, :], denom.shape)
    return top / denom


def _as_expression(Y):
    if isinstance(Y, ExpressionMatrix):
        return Y
    return ExpressionMatrix(np.asarray(Y, dtype=float))


def _finish(Y, values, recenter):
    out = ExpressionMatrix(values, Y.sample_ids, Y.gene_ids, centered=False)
    if recenter:
        means = values.mean(axis=1)
        out = ExpressionMatrix(values - means[:, None], Y.sample_ids, Y.gene_ids,
                               centered=True, sample_means=means)
    return out


def correct_residuals(fit, Y, gene_fits, recenter: bool = True,
                      eig: KernelEigen | None = None) -> ExpressionMatrix:
    """Apply ``y -> K (sigma2_c K + sigma2_e I)^-1 y`` to every gene.

    The map does not preserve sample centering, so with ``recenter`` (the
    default) each sample is centered again across genes before returning.
    """
    Y = _as_expression(Y)
    eig = KernelEigen.from_fit(fit if eig is None else eig)
    if Y.n != eig.n:
        raise ShapeError(f"expression has {Y.n} samples, K has {eig.n}")
    weights = _gene_weights(eig, gene_fits, Y.m, "kernel", Y.gene_ids)
    return _finish(Y, eig.apply(weights, Y.values), recenter)


def remove_confounding(fit, Y, gene_fits, recenter: bool = True,
                       eig: KernelEigen | None = None) -> ExpressionMatrix:
    """Subtract the predicted confounding signal from every gene.

    Returns ``y - sigma2_c K (sigma2_c K + sigma2_e I)^-1 y``, which equals
    ``sigma2_e (sigma2_c K + sigma2_e I)^-1 y``: the part of each gene left
    after removing the best linear prediction of its ``sigma2_c K`` component.
    """
    Y = _as_expression(Y)
    eig = KernelEigen.from_fit(fit if eig is None else eig)
    if Y.n != eig.n:
        raise ShapeError(f"expression has {Y.n} samples, K has {eig.n}")
    weights = _gene_weights(eig, gene_fits, Y.m, "noise", Y.gene_ids)
    return _finish(Y, eig.apply(weights, Y.values), recenter)


def lod_score(fit, y, s, gene_fit: GeneVarianceFit, eig: KernelEigen | None = None,
              rtol: float = 1e-12) -> float:
    """Log-likelihood ratio (natural log) for ``s`` as a fixed effect on ``y``.

    With ``Sigma = sigma2_c K + sigma2_e I`` and the generalized least
    squares estimate of the effect size, the ratio is
    ``(s^T Sigma^-1 y)^2 / (2 s^T Sigma^-1 s)``.
    """
    eig = KernelEigen.from_fit(fit if eig is None else eig)
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    if y.shape[0] != eig.n or s.shape[0] != eig.n:
        raise ShapeError(f"y and s must have {eig.n} entries")
    v = gene_fit.sigma2_c * eig.values + gene_fit.sigma2_e
    if np.any(v <= 0):
        raise SingularGeneCovarianceError("gene covariance is singular")
    ry, rs = eig.rotate(y), eig.rotate(s)
    sws = float(np.sum(rs * rs / v))
    if not np.isfinite(sws) or sws <= rtol * float(s @ s) / float(v.max()):
        raise DegeneratePredictorError("predictor has zero weighted norm")
    swy = float(np.sum(rs * ry / v))
    return 0.5 * swy * swy / sws


@dataclass(frozen=True)
class AssociationResult:
    beta: float
    stderr: float
    t_stat: float
    rss: float
    df: int


def linear_association(y, s, fit=None, Z=None, X=None) -> AssociationResult:
    """Ordinary least squares of ``y`` on ``s`` with known and latent factors as covariates.

    The factors default to those of ``fit``.  Because only their column
    span enters, latent factors differing by a combination of the known
    covariates give the same effect estimate.
    """
    y = np.asarray(y, dtype=float).ravel()
    s = np.asarray(s, dtype=float).ravel()
    n = y.shape[0]
    if Z is None:
        Z = fit.basis.Z if fit is not None else np.zeros((n, 0))
    if X is None:
        X = fit.latent if fit is not None else np.zeros((n, 0))
    design = np.column_stack([s, np.asarray(Z, dtype=float).reshape(n, -1),
                              np.asarray(X, dtype=float).reshape(n, -1)])
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise DegeneratePredictorError(
            f"design matrix has rank {rank} < {design.shape[1]} columns"
        )
    resid = y - design @ coef
    rss = float(resid @ resid)
    df = n - design.shape[1]
    if df > 0:
        cov00 = float(np.linalg.inv(design.T @ design)[0, 0])
        stderr = math.sqrt(rss / df * cov00)
        t = coef[0] / stderr if stderr > 0 else math.inf
    else:
        stderr, t = math.nan, math.nan
    return AssociationResult(float(coef[0]), stderr, float(t), rss, df)
