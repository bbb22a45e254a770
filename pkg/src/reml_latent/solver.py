"""Closed-form maximum-likelihood solutions.

Four nested cases of the covariance model are solved analytically:

* known covariates only (``K = Z B Z^T + sigma2 I``),
* latent factors only, i.e. probabilistic PCA (``K = X A X^T + sigma2 I``),
* latent factors restricted to the orthogonal complement of ``Z``,
* the full model, whose known-covariate parameters ``B`` and ``D`` follow
  from the restricted latent solution.

Each solver checks the eigenvalue conditions under which its solution
exists and raises a :class:`~reml_latent.errors.ModelConditionError`
subclass otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    DEFAULT_RTOL,
    CovarianceParams,
    CovariateBasis,
    ModelFit,
    as_covariance,
    assemble_K,
    log_likelihood,
    sign_normalize,
    stacked_psd,
    symmetric_eigh,
)
from .errors import (
    ConstraintViolationError,
    DegenerateCovariateError,
    DegenerateSpectrumError,
    ExistenceConditionError,
    ShapeError,
)


@dataclass(frozen=True)
class ReducedSpectrum:
    """Eigen-decomposition of ``C22`` sorted nonincreasing.

    ``eigenvectors`` are expressed in the reduced basis (columns of ``U2``);
    ``lifted`` holds the same vectors mapped to sample space, ``U2 @ W``,
    sign-normalized so the largest-magnitude entry of each is positive.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    lifted: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def residual_variance(self, p: int) -> float:
        """Mean of the eigenvalues beyond the first ``p``."""
        tail = self.eigenvalues[p:]
        if tail.size == 0:
            raise DegenerateSpectrumError(f"no residual dimensions left for p={p}")
        return float(tail.mean())


@dataclass(frozen=True)
class KnownOnlyFit:
    B: np.ndarray
    sigma2: float
    saturated: bool = False


@dataclass(frozen=True)
class SingleCovariateFit:
    beta2: float
    sigma2: float
    admissible: bool


@dataclass(frozen=True)
class LatentFit:
    """Latent factors ``X``, diagonal ``A`` and residual variance."""

    X: np.ndarray
    A: np.ndarray
    sigma2: float
    eigenvalues: np.ndarray
    spectrum: ReducedSpectrum | None = None

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def profile_loglik(self) -> float:
        """Log-likelihood at the optimum, from the eigenvalues alone."""
        lam = self.eigenvalues
        n, p = lam.size, self.p
        value = np.sum(np.log(lam[:p])) + n
        if p < n:
            value += (n - p) * np.log(self.sigma2)
        return float(-value)


def reduced_spectrum(C, basis: CovariateBasis) -> ReducedSpectrum:
    """Eigenvalues and eigenvectors of ``C22 = U2^T C U2``."""
    C = as_covariance(C)
    blocks = C.partition(basis)
    vals, vecs = symmetric_eigh(blocks.c22)
    lifted, signs = sign_normalize(basis.U2 @ vecs)
    return ReducedSpectrum(eigenvalues=vals, eigenvectors=vecs * signs, lifted=lifted)


def check_latent_cut(eigenvalues, p: int, rtol: float = DEFAULT_RTOL) -> None:
    """Require some eigenvalue beyond position ``p`` strictly below ``lambda_p``.

    This keeps every estimated latent variance ``lambda_j - sigma2`` positive.
    ``p = 0`` imposes no condition.
    """
    lam = np.asarray(eigenvalues)
    if p == 0:
        return
    if p >= lam.size:
        raise DegenerateSpectrumError(
            f"p={p} latent factors leaves no residual dimension (reduced size {lam.size})"
        )
    if lam[p - 1] - lam[-1] <= rtol * max(abs(lam[0]), 1e-300):
        raise DegenerateSpectrumError(
            f"dimension p={p} inadmissible: eigenvalue lambda_{p}={lam[p - 1]:.6g} is tied "
            f"with every smaller eigenvalue (smallest {lam[-1]:.6g}); the residual variance "
            "would equal the last latent variance"
        )


def _b_from_c11(c11, sigma2, basis: CovariateBasis):
    gamma = basis.singular_values
    inner = (c11 - sigma2 * np.eye(basis.d)) / np.outer(gamma, gamma)
    V = basis.right_factors
    B = V @ inner @ V.T
    return 0.5 * (B + B.T)


def _assert_psd(B, label):
    if B.size == 0:
        return
    ev = np.linalg.eigvalsh(B)
    scale = max(np.abs(ev).max(), 1e-300)
    if ev[0] < -1e-8 * scale:
        raise ArithmeticError(f"{label} has eigenvalue {ev[0]:.3g}; numerical failure")


def _existence_check(c11, sigma2, rtol):
    lam_min = float(np.linalg.eigvalsh(c11)[0])
    scale = max(abs(lam_min), abs(sigma2), 1e-300)
    ok = lam_min - sigma2 > rtol * scale
    return lam_min, ok


def fit_known_only(C, basis: CovariateBasis, rtol: float = DEFAULT_RTOL) -> KnownOnlyFit:
    """Maximum-likelihood ``B`` and ``sigma2`` for ``K = Z B Z^T + sigma2 I``.

    ``sigma2`` is the average variance in the directions orthogonal to ``Z``
    and ``B = V G^-1 (C11 - sigma2 I) G^-1 V^T``.  The solution exists only if
    ``lambda_min(C11) > tr(C22) / (n - d)``; otherwise some latent direction
    explains more variance than the weakest covariate direction and
    :class:`ExistenceConditionError` is raised.

    With ``d = n`` the covariates span everything: ``sigma2`` is 0, the
    condition is waived and the result is flagged ``saturated``.
    """
    C = as_covariance(C)
    n, d = basis.n, basis.d
    if C.n != n:
        raise ShapeError(f"basis has n={n}, covariance has n={C.n}")
    blocks = C.partition(basis)
    if d == n:
        return KnownOnlyFit(B=_b_from_c11(blocks.c11, 0.0, basis), sigma2=0.0, saturated=True)
    sigma2 = float(np.trace(blocks.c22) / (n - d))
    if d == 0:
        return KnownOnlyFit(B=np.zeros((0, 0)), sigma2=sigma2)
    lam_min, ok = _existence_check(blocks.c11, sigma2, rtol)
    if not ok:
        raise ExistenceConditionError(
            f"no maximum-likelihood solution with known covariates only: "
            f"lambda_min(C11)={lam_min:.6g} does not exceed tr(C22)/(n-d)={sigma2:.6g}; "
            "other, latent variables explain more variation than the known covariates",
            lambda_min=lam_min,
            sigma2=sigma2,
            condition="known-only",
        )
    B = _b_from_c11(blocks.c11, sigma2, basis)
    _assert_psd(B, "B")
    return KnownOnlyFit(B=B, sigma2=sigma2)


def screen_single_covariate(C, z) -> SingleCovariateFit:
    """Variance explained by a single covariate ``z`` on its own.

    Returns ``beta2`` (the effect variance of ``K = beta2 z z^T + sigma2 I``),
    ``sigma2`` and whether the closed form is valid, which requires
    ``<u, C u> > tr(C) / n`` for ``u = z / |z|``.
    """
    C = as_covariance(C)
    z = np.asarray(z, dtype=float).ravel()
    if z.shape[0] != C.n:
        raise ShapeError(f"covariate has length {z.shape[0]}, expected {C.n}")
    gamma2 = float(z @ z)
    if gamma2 == 0.0 or not np.isfinite(gamma2):
        raise DegenerateCovariateError("covariate vector is zero")
    n = C.n
    u = z / np.sqrt(gamma2)
    ucu = float(u @ C.matrix @ u)
    tr = C.trace
    beta2 = (n / (n - 1) * ucu - tr / (n - 1)) / gamma2
    sigma2 = (tr - ucu) / (n - 1)
    return SingleCovariateFit(beta2=beta2, sigma2=sigma2, admissible=ucu > tr / n)


def _latent_from_eigen(vals, lifted, p, rtol):
    n = vals.size
    if not 0 <= p <= n:
        raise ValueError(f"p must lie in [0, {n}], got {p}")
    if p == n:
        sigma2 = 0.0
    else:
        check_latent_cut(vals, p, rtol)
        sigma2 = float(vals[p:].mean())
    alpha2 = vals[:p] - sigma2
    return lifted[:, :p].copy(), np.diag(alpha2), sigma2


def fit_ppca(C, p: int, rtol: float = DEFAULT_RTOL) -> LatentFit:
    """Probabilistic PCA: ``K = X A X^T + sigma2 I`` without known covariates.

    ``X`` holds the top ``p`` eigenvectors of ``C``, ``A`` the excess of the
    corresponding eigenvalues over ``sigma2``, and ``sigma2`` the mean of
    the remaining ``n - p`` eigenvalues.  ``p = n`` is allowed and gives
    ``sigma2 = 0``.
    """
    C = as_covariance(C)
    vals, vecs = symmetric_eigh(C.matrix)
    vecs, _ = sign_normalize(vecs)
    X, A, sigma2 = _latent_from_eigen(vals, vecs, p, rtol)
    return LatentFit(X=X, A=A, sigma2=sigma2, eigenvalues=vals)


def fit_latent_restricted(
    C, basis: CovariateBasis, p: int, spectrum: ReducedSpectrum | None = None,
    rtol: float = DEFAULT_RTOL,
) -> LatentFit:
    """Latent factors maximizing the likelihood restricted to the complement of ``Z``.

    The restricted problem is probabilistic PCA on ``C22``: ``X = U2 W_p``
    with ``W_p`` the top ``p`` eigenvectors of ``C22``.  By construction
    ``X^T Z = 0`` and ``X^T X = I``.
    """
    if spectrum is None:
        spectrum = reduced_spectrum(C, basis)
    size = spectrum.size
    if not 0 <= p < size:
        raise DegenerateSpectrumError(
            f"p={p} must satisfy 0 <= p < n - d = {size}"
        )
    X, A, sigma2 = _latent_from_eigen(spectrum.eigenvalues, spectrum.lifted, p, rtol)
    return LatentFit(X=X, A=A, sigma2=sigma2, eigenvalues=spectrum.eigenvalues,
                     spectrum=spectrum)


def variance_shares(basis, X, params: CovarianceParams, trace_c: float):
    Z = basis.Z
    known = float(np.trace(Z @ params.B @ Z.T)) if basis.d else 0.0
    latent = float(np.sum((X * X) @ params.alpha2)) if X.shape[1] else 0.0
    residual = basis.n * params.sigma2
    return known / trace_c, latent / trace_c, residual / trace_c


def fit_full(
    C, basis: CovariateBasis, p: int, spectrum: ReducedSpectrum | None = None,
    rtol: float = DEFAULT_RTOL,
) -> ModelFit:
    """Restricted maximum-likelihood fit of the full model with ``p`` latent factors.

    Latent factors, ``A`` and ``sigma2`` come from :func:`fit_latent_restricted`;
    then ``B = V G^-1 (C11 - sigma2 I) G^-1 V^T`` and ``D = V G^-1 C12 W_p``.
    Requires ``lambda_min(C11) > sigma2`` when ``d > 0``.  With latent factors
    as well, the stacked effect covariance ``[[B, D], [D^T, A]]`` must also be
    positive semi-definite, which holds iff ``C`` compressed onto the span of
    ``Z`` and ``X`` has no eigenvalue below ``sigma2``.

    Parameters
    ----------
    C : SampleCovariance or ndarray
        Sample covariance ``Y Y^T / m``.
    basis : CovariateBasis
        Known covariates; use ``CovariateBasis.empty(n)`` for none.
    p : int
        Number of latent factors, ``0 <= p < n - d``.
    spectrum : ReducedSpectrum, optional
        Precomputed spectrum of ``C22`` to share across calls.

    Returns
    -------
    ModelFit
    """
    C = as_covariance(C)
    if C.n != basis.n:
        raise ShapeError(f"basis has n={basis.n}, covariance has n={C.n}")
    if spectrum is None:
        spectrum = reduced_spectrum(C, basis)
    latent = fit_latent_restricted(C, basis, p, spectrum=spectrum, rtol=rtol)
    sigma2 = latent.sigma2
    d = basis.d
    checks = {
        "latent_cut": {"p": p, "passed": True},
    }
    if d:
        blocks = C.partition(basis)
        lam_min, ok = _existence_check(blocks.c11, sigma2, rtol)
        checks["existence"] = {"lambda_min_c11": lam_min, "sigma2": sigma2, "passed": ok}
        if not ok:
            condition = "known-only" if p == 0 else "full"
            raise ExistenceConditionError(
                f"existence condition lambda_min(C11) > sigma2 violated with p={p}: "
                f"lambda_min(C11)={lam_min:.6g}, sigma2={sigma2:.6g}; "
                "add latent factors or reconsider the known covariates",
                lambda_min=lam_min,
                sigma2=sigma2,
                condition=condition,
            )
        B = _b_from_c11(blocks.c11, sigma2, basis)
        _assert_psd(B, "B")
        W_p = spectrum.eigenvectors[:, :p]
        V = basis.right_factors
        D = V @ ((blocks.c12 @ W_p) / basis.singular_values[:, None])
        if p:
            # the effect covariance of known and latent factors together must be
            # PSD too, i.e. C compressed onto span(Z, X) must dominate sigma2
            ok_joint, _ = stacked_psd(B, D, latent.A)
            c1x = blocks.c12 @ W_p
            M = np.block([[blocks.c11, c1x], [c1x.T, np.diag(spectrum.eigenvalues[:p])]])
            lam_joint = float(np.linalg.eigvalsh(M)[0])
            checks["joint"] = {"lambda_min_compressed": lam_joint, "sigma2": sigma2,
                               "passed": ok_joint}
            if not ok_joint:
                raise ExistenceConditionError(
                    f"joint existence condition violated with p={p}: the covariance "
                    f"compressed onto the known and latent factors has smallest eigenvalue "
                    f"{lam_joint:.6g} below sigma2={sigma2:.6g}, so no positive semi-definite "
                    "effect covariance reproduces it; add latent factors or reconsider "
                    "the known covariates",
                    lambda_min=lam_joint,
                    sigma2=sigma2,
                    condition="joint",
                )
    else:
        B = np.zeros((0, 0))
        D = np.zeros((0, p))
    params = CovarianceParams(B=B, A=latent.A, D=D, sigma2=sigma2)
    K = assemble_K(basis, latent.X, params)
    loglik = log_likelihood(K, C, rtol=min(rtol, 1e-12))
    shares = variance_shares(basis, latent.X, params, C.trace)
    return ModelFit(
        latent=latent.X,
        params=params,
        K=K,
        loglik=loglik,
        variance_decomposition=shares,
        basis=basis,
        spectrum=spectrum,
        checks=checks,
    )


def unexplained_variance(C, basis: CovariateBasis, X, atol: float = 1e-8) -> float:
    """Residual variance ``sigma2(X)`` when the other parameters are at their optimum.

    For latent factors ``X`` with ``X^T X = I`` and ``X^T Z = 0`` this is
    ``(tr(C22) - tr(X^T C X)) / (n - d - p)``.
    """
    C = as_covariance(C)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] != basis.n:
        raise ShapeError(f"X must be n x p with n={basis.n}, got {X.shape}")
    n, d, p = basis.n, basis.d, X.shape[1]
    if n - d - p <= 0:
        raise ConstraintViolationError(f"p={p} leaves no residual dimension (n-d={n - d})")
    gram_err = np.max(np.abs(X.T @ X - np.eye(p)), initial=0.0)
    if gram_err > atol:
        raise ConstraintViolationError(f"X is not orthonormal (max |X^T X - I| = {gram_err:.3g})")
    if d:
        cross = np.max(np.abs(X.T @ basis.U1), initial=0.0)
        if cross > atol:
            raise ConstraintViolationError(
                f"X is not orthogonal to Z (max |X^T U1| = {cross:.3g})"
            )
    c22_trace = float(np.trace(basis.U2.T @ C.matrix @ basis.U2))
    explained = float(np.sum((C.matrix @ X) * X))
    return (c22_trace - explained) / (n - d - p)
