"""Domain types, covariance assembly and the log-likelihood objective.

The model for an ``n x m`` centered expression matrix ``Y`` (samples in rows)
is a Gaussian random-effect model in which every gene column is an
independent draw from ``N(0, K)`` with

    K = Z B Z^T + Z D X^T + X D^T Z^T + X A X^T + sigma2 * I,

``Z`` holding ``d`` known covariates and ``X`` holding ``p`` latent factors.
All fits depend on the data only through ``C = Y Y^T / m``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import (
    CenteringRequiredError,
    NotPositiveDefiniteError,
    RankError,
    ShapeError,
)

DEFAULT_RTOL = 1e-10


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def sign_normalize(vectors):
    """Flip columns so the largest-magnitude entry of each is positive.

    Returns the flipped copy and the sign vector that was applied.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape[1] == 0:
        return vectors.copy(), np.ones(0)
    idx = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs, signs


def symmetric_eigh(matrix):
    """Eigendecomposition of a symmetric matrix, eigenvalues nonincreasing."""
    vals, vecs = np.linalg.eigh(matrix)
    return vals[::-1].copy(), vecs[:, ::-1].copy()


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ExpressionMatrix:
    """Samples x genes data matrix with labels.

    ``sample_means`` records the per-sample means removed by centering, when
    the matrix was produced by :func:`reml_latent.io.center_samples`.
    """

    values: np.ndarray
    sample_ids: tuple = ()
    gene_ids: tuple = ()
    centered: bool = False
    sample_means: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ShapeError(f"expression values must be 2-D, got shape {values.shape}")
        n, m = values.shape
        if n < 2 or m < 1:
            raise ShapeError(f"need n >= 2 samples and m >= 1 genes, got {n} x {m}")
        if not np.all(np.isfinite(values)):
            raise ShapeError("expression values contain non-finite entries")
        sample_ids = tuple(self.sample_ids) or tuple(f"sample_{i + 1}" for i in range(n))
        gene_ids = tuple(self.gene_ids) or tuple(f"gene_{j + 1}" for j in range(m))
        if len(sample_ids) != n or len(gene_ids) != m:
            raise ShapeError(
                f"label counts ({len(sample_ids)} samples, {len(gene_ids)} genes) "
                f"do not match values shape {values.shape}"
            )
        if self.centered:
            scale = np.max(np.abs(values), initial=0.0)
            if self.sample_means is not None:
                scale = max(scale, np.max(np.abs(self.sample_means), initial=0.0))
            residual = np.max(np.abs(values.mean(axis=1)))
            if residual > 1e-10 * max(scale, 1.0):
                raise CenteringRequiredError(
                    f"matrix flagged centered but a sample mean is {residual:.3g}"
                )
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "sample_ids", sample_ids)
        object.__setattr__(self, "gene_ids", gene_ids)
        if self.sample_means is not None:
            object.__setattr__(self, "sample_means", _frozen(self.sample_means))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class CovarianceBlocks:
    c11: np.ndarray
    c12: np.ndarray
    c22: np.ndarray


@dataclass(frozen=True)
class SampleCovariance:
    """``C = Y Y^T / m``; symmetric by construction."""

    matrix: np.ndarray
    m: int | None = None

    def __post_init__(self):
        C = np.asarray(self.matrix, dtype=float)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ShapeError(f"covariance must be square, got shape {C.shape}")
        if not np.array_equal(C, C.T):
            C = 0.5 * (C + C.T)
        object.__setattr__(self, "matrix", _frozen(C))

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def partition(self, basis: "CovariateBasis") -> CovarianceBlocks:
        """Blocks ``C_ij = U_i^T C U_j`` in the covariate basis."""
        if basis.n != self.n:
            raise ShapeError(f"basis has n={basis.n}, covariance has n={self.n}")
        C = self.matrix
        CU2 = C @ basis.U2
        c11 = basis.U1.T @ C @ basis.U1
        c22 = basis.U2.T @ CU2
        return CovarianceBlocks(
            c11=0.5 * (c11 + c11.T),
            c12=basis.U1.T @ CU2,
            c22=0.5 * (c22 + c22.T),
        )


def as_covariance(C) -> SampleCovariance:
    if isinstance(C, SampleCovariance):
        return C
    return SampleCovariance(np.asarray(C, dtype=float))


@dataclass(frozen=True)
class CovariateBasis:
    """Known covariates ``Z`` (n x d) with their singular value decomposition.

    ``Z = U1 diag(singular_values) right_factors^T``; ``U2`` completes ``U1``
    to an orthonormal basis of R^n.
    """

    Z: np.ndarray
    U1: np.ndarray
    U2: np.ndarray
    singular_values: np.ndarray
    right_factors: np.ndarray

    @classmethod
    def from_covariates(cls, Z, rtol: float = DEFAULT_RTOL) -> "CovariateBasis":
        Z = np.asarray(Z, dtype=float)
        if Z.ndim == 1:
            Z = Z[:, None]
        if Z.ndim != 2:
            raise ShapeError(f"covariates must be 2-D, got shape {Z.shape}")
        n, d = Z.shape
        if d == 0:
            return cls.empty(n)
        if d > n:
            raise RankError(f"{d} covariates cannot be independent in {n} samples", achievable=n)
        U, s, Vt = np.linalg.svd(Z, full_matrices=True)
        if s[-1] <= rtol * s[0]:
            rank = int(np.sum(s > rtol * s[0]))
            raise RankError(
                f"covariates are linearly dependent: rank {rank} < {d}", achievable=rank
            )
        return cls(Z=Z, U1=U[:, :d], U2=U[:, d:], singular_values=s, right_factors=Vt.T)

    @classmethod
    def empty(cls, n: int) -> "CovariateBasis":
        return cls(
            Z=np.zeros((n, 0)),
            U1=np.zeros((n, 0)),
            U2=np.eye(n),
            singular_values=np.zeros(0),
            right_factors=np.zeros((0, 0)),
        )

    def __post_init__(self):
        for name in ("Z", "U1", "U2", "singular_values", "right_factors"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        n, d = self.Z.shape
        if self.U1.shape != (n, d) or self.U2.shape != (n, n - d):
            raise ShapeError("inconsistent covariate basis shapes")
        if np.any(self.singular_values <= 0):
            raise RankError("singular values must be strictly positive")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def d(self) -> int:
        return self.Z.shape[1]

    @property
    def gamma1(self) -> np.ndarray:
        return np.diag(self.singular_values)


def stacked_psd(B, D, A, rtol: float = 1e-8):
    """Whether ``[[B, D], [D^T, A]]`` is PSD up to ``rtol`` relative; also its min eigenvalue."""
    B, D, A = (np.asarray(x, dtype=float) for x in (B, D, A))
    if B.shape[0] + A.shape[0] == 0:
        return True, 0.0
    psi = np.block([[B, D], [D.T, A]])
    ev = np.linalg.eigvalsh(0.5 * (psi + psi.T))
    return bool(ev[0] >= -rtol * max(np.abs(ev).max(), 1e-300)), float(ev[0])


@dataclass(frozen=True)
class CovarianceParams:
    """Effect covariances: ``B`` (known), ``A`` (latent, diagonal), ``D`` (cross)."""

    B: np.ndarray
    A: np.ndarray
    D: np.ndarray
    sigma2: float
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float)) if np.size(self.B) else np.zeros((0, 0))
        A = np.asarray(self.A, dtype=float)
        if A.ndim == 1:
            A = np.diag(A)
        if A.size == 0:
            A = np.zeros((0, 0))
        d, p = B.shape[0], A.shape[0]
        D = np.asarray(self.D, dtype=float).reshape(d, p)
        if B.shape != (d, d) or A.shape != (p, p):
            raise ShapeError(f"B must be square and A must be square, got {B.shape}, {A.shape}")
        sigma2 = float(self.sigma2)
        if self.check:
            if sigma2 < 0:
                raise ValueError(f"sigma2 must be nonnegative, got {sigma2}")
            if np.any(A - np.diag(np.diag(A))):
                raise ValueError("A must be diagonal")
            alpha2 = np.diag(A)
            if np.any(alpha2 < 0):
                raise ValueError("A must have nonnegative diagonal")
            if np.any(np.diff(alpha2) > DEFAULT_RTOL * max(1.0, alpha2.max(initial=0.0))):
                raise ValueError("A's diagonal must be sorted nonincreasing")
            ok, ev_min = stacked_psd(B, D, A)
            if not ok:
                raise ValueError(
                    f"stacked effect covariance is not PSD (min eigenvalue {ev_min:.3g})"
                )
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "D", _frozen(D))
        object.__setattr__(self, "sigma2", sigma2)

    @property
    def alpha2(self) -> np.ndarray:
        return np.diag(self.A)


@dataclass(frozen=True)
class FitConfig:
    rho: float
    theta: float = 0.0
    max_latent: int | None = None
    tolerance: float = DEFAULT_RTOL

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.theta < 0:
            raise ValueError(f"theta must be nonnegative, got {self.theta}")
        if self.max_latent is not None and self.max_latent < 0:
            raise ValueError("max_latent must be nonnegative")


@dataclass(frozen=True)
class ModelFit:
    """Result of a full fit.

    ``variance_decomposition`` holds the shares of ``tr(C)`` explained by the
    known covariates, by the latent factors and left to the residual.
    ``checks`` records the conditions verified while fitting.
    """

    latent: np.ndarray
    params: CovarianceParams
    K: np.ndarray
    loglik: float
    variance_decomposition: tuple
    basis: CovariateBasis
    spectrum: Any = None
    checks: dict = field(default_factory=dict)
    selection: Any = None

    @property
    def n(self) -> int:
        return self.K.shape[0]

    @property
    def p(self) -> int:
        return self.latent.shape[1]

    @property
    def d(self) -> int:
        return self.basis.d

    @property
    def sigma2(self) -> float:
        return self.params.sigma2

    @property
    def explained_variance(self) -> float:
        known, latent, _ = self.variance_decomposition
        return known + latent


# --------------------------------------------------------------------------
# Operations
# --------------------------------------------------------------------------


def sample_covariance(Y: ExpressionMatrix, require_centered: bool = True) -> SampleCovariance:
    """Return ``C = Y Y^T / m`` for a centered expression matrix.

    ``require_centered=False`` evaluates the formula on uncentered data,
    which is only meaningful when the sample means are known to be zero in
    the population.
    """
    if not isinstance(Y, ExpressionMatrix):
        raise TypeError("sample_covariance expects an ExpressionMatrix")
    if require_centered and not Y.centered:
        raise CenteringRequiredError(
            "sample covariance requires centered data; call center_samples first"
        )
    V = Y.values
    return SampleCovariance(V @ V.T / Y.m, m=Y.m)


def assemble_K(basis, X, params: CovarianceParams) -> np.ndarray:
    """Assemble ``Z B Z^T + Z D X^T + X D^T Z^T + X A X^T + sigma2 I``.

    ``basis`` may be a :class:`CovariateBasis` or a raw ``n x d`` array.
    """
    Z = basis.Z if isinstance(basis, CovariateBasis) else np.asarray(basis, dtype=float)
    X = np.asarray(X, dtype=float)
    if Z.ndim != 2 or X.ndim != 2 or Z.shape[0] != X.shape[0]:
        raise ShapeError(f"Z {Z.shape} and X {X.shape} must share the sample dimension")
    n, d = Z.shape
    p = X.shape[1]
    if params.B.shape != (d, d) or params.A.shape != (p, p) or params.D.shape != (d, p):
        raise ShapeError(
            f"parameter shapes B{params.B.shape} A{params.A.shape} D{params.D.shape} "
            f"do not match d={d}, p={p}"
        )
    ZD = Z @ params.D
    cross = ZD @ X.T
    K = Z @ params.B @ Z.T + cross + cross.T + (X * params.alpha2) @ X.T
    K[np.diag_indices(n)] += params.sigma2
    return 0.5 * (K + K.T)


def log_likelihood(K, C, rtol: float = DEFAULT_RTOL) -> float:
    """Objective ``-log det K - tr(K^-1 C)`` (per gene, up to constants).

    Evaluated from one symmetric eigendecomposition of ``K``; raises
    :class:`NotPositiveDefiniteError` if an eigenvalue of ``K`` is not above
    ``rtol * lambda_max``.
    """
    K = np.asarray(K, dtype=float)
    Cm = as_covariance(C).matrix
    if K.shape != Cm.shape:
        raise ShapeError(f"K {K.shape} and C {Cm.shape} differ in shape")
    vals, vecs = np.linalg.eigh(0.5 * (K + K.T))
    top = vals[-1]
    if top <= 0 or vals[0] <= rtol * top:
        raise NotPositiveDefiniteError(
            f"K is not positive definite (smallest eigenvalue {vals[0]:.6g})",
            eigenvalue=float(vals[0]),
        )
    quad = np.sum((Cm @ vecs) * vecs, axis=0)
    return float(-np.sum(np.log(vals)) - np.sum(quad / vals))


def overlap_transform(basis, X, params: CovarianceParams, M):
    """Re-express a model with latent factors ``X' = X + Z M``.

    Returns ``(X', params')`` generating the identical ``K``; ``params'``
    absorbs the overlap into ``B`` and ``D`` while ``A`` and ``sigma2`` stay
    unchanged.  With ``M = -(Z^T Z)^-1 Z^T X`` this maps an overlapping model
    onto one whose latent factors are orthogonal to ``Z``.
    """
    Z = basis.Z if isinstance(basis, CovariateBasis) else np.asarray(basis, dtype=float)
    M = np.asarray(M, dtype=float).reshape(Z.shape[1], np.shape(X)[1])
    A = params.A
    D_new = params.D - M @ A
    B_new = params.B - params.D @ M.T - M @ params.D.T + M @ A @ M.T
    B_new = 0.5 * (B_new + B_new.T)
    X_new = np.asarray(X, dtype=float) + Z @ M
    return X_new, CovarianceParams(B_new, A, D_new, params.sigma2, check=False)
