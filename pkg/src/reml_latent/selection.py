"""Choosing the number of latent factors from a target explained variance."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .core import DEFAULT_RTOL, CovariateBasis, FitConfig, ModelFit, as_covariance
from .errors import (
    DegenerateSpectrumError,
    ExistenceConditionError,
    IrreducibleCovariateError,
    ModelConditionError,
)
from .solver import ReducedSpectrum, check_latent_cut, fit_full, reduced_spectrum

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SelectionReport:
    rho: float
    target_sigma2: float
    unclamped_target: float
    clamp_active: bool
    initial_p: int
    p: int
    retries: tuple  # (p, f(p)) for each p rejected by the existence condition
    explained_variance: float
    exceeds_target: bool


def residual_variance_curve(eigenvalues) -> np.ndarray:
    """``f(p)``, the mean of eigenvalues ``p+1 .. n-d``, for ``p = 0 .. n-d-1``."""
    lam = np.asarray(eigenvalues, dtype=float)
    tail_sums = np.cumsum(lam[::-1])[::-1]
    return tail_sums / np.arange(lam.size, 0, -1)


def target_sigma2(C, basis: CovariateBasis, rho: float) -> float:
    """Residual variance compatible with explaining a fraction ``rho`` of ``tr(C)``.

    Clamped at ``lambda_min(C11)`` when covariates are present so the fit
    with that residual variance stays admissible.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    C = as_covariance(C)
    target = (1.0 - rho) * C.trace / C.n
    if basis.d:
        c11 = C.partition(basis).c11
        target = min(target, float(np.linalg.eigvalsh(c11)[0]))
    return target


def _is_degenerate(lam, rtol):
    return lam[0] - lam[-1] <= rtol * max(abs(lam[0]), 1e-300)


def select_p(spectrum, sigma2_target: float, rtol: float = DEFAULT_RTOL) -> int:
    """Smallest admissible ``p`` with ``f(p) < sigma2_target``.

    ``spectrum`` is a :class:`ReducedSpectrum` or a nonincreasing array of
    eigenvalues of ``C22``.
    """
    lam = spectrum.eigenvalues if isinstance(spectrum, ReducedSpectrum) else np.asarray(spectrum)
    if lam.size == 0 or _is_degenerate(lam, rtol):
        raise DegenerateSpectrumError(
            "all eigenvalues of the reduced covariance are identical; "
            "no number of latent factors is admissible"
        )
    f = residual_variance_curve(lam)
    for p in range(lam.size):
        try:
            check_latent_cut(lam, p, rtol)
        except DegenerateSpectrumError:
            break
        if f[p] < sigma2_target:
            return p
    raise ModelConditionError(
        f"no admissible number of latent factors reaches residual variance "
        f"{sigma2_target:.6g} (smallest attainable {lam[-1]:.6g}); lower rho"
    )


def fit_auto(C, basis: CovariateBasis, config: FitConfig) -> ModelFit:
    """Fit with an automatically chosen number of latent factors.

    The starting ``p`` is the smallest admissible count reaching the
    ``rho``-target residual variance.  When the existence condition
    ``lambda_min(C11) > sigma2`` fails, one latent factor is added at a time
    until it holds; if the cap (``config.max_latent``, default ``n-d-1``) is
    reached first the known covariates cannot be reconciled with the data
    and :class:`IrreducibleCovariateError` is raised.
    """
    C = as_covariance(C)
    rtol = config.tolerance
    spectrum = reduced_spectrum(C, basis)
    n, d = basis.n, basis.d
    unclamped = (1.0 - config.rho) * C.trace / n
    target = target_sigma2(C, basis, config.rho)
    p0 = select_p(spectrum, unclamped, rtol)
    cap = n - d - 1 if config.max_latent is None else min(config.max_latent, n - d - 1)
    if p0 > cap:
        raise IrreducibleCovariateError(
            f"reaching rho={config.rho} needs p={p0} latent factors, above the cap {cap}"
        )
    f = residual_variance_curve(spectrum.eigenvalues)
    retries = []
    p = p0
    while True:
        try:
            fit = fit_full(C, basis, p, spectrum=spectrum, rtol=rtol)
            break
        except (ExistenceConditionError, DegenerateSpectrumError) as exc:
            retries.append((p, float(f[p])))
            log.debug("p=%d rejected: %s", p, exc)
            if p + 1 > cap or isinstance(exc, DegenerateSpectrumError):
                raise IrreducibleCovariateError(
                    f"existence condition lambda_min(C11) > sigma2 still fails at p={p} "
                    f"(cap {cap}); some known covariates explain too little variation "
                    "and should be reconsidered"
                ) from exc
            p += 1

    # invariants promised to callers
    check_latent_cut(spectrum.eigenvalues, p, rtol)
    if d:
        assert fit.checks["existence"]["passed"]

    explained = fit.explained_variance
    report = SelectionReport(
        rho=config.rho,
        target_sigma2=target,
        unclamped_target=unclamped,
        clamp_active=target < unclamped,
        initial_p=p0,
        p=p,
        retries=tuple(retries),
        explained_variance=explained,
        exceeds_target=explained > config.rho,
    )
    return replace(fit, selection=report)
