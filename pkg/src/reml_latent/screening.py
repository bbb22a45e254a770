"""Candidate covariate screening and genotype-style principal components."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .core import DEFAULT_RTOL, CovariateBasis, as_covariance, sign_normalize
from .errors import DegenerateCovariateError, RankError, ShapeError
from .solver import screen_single_covariate


@dataclass(frozen=True)
class ScreeningRecord:
    candidate_id: str
    beta2: float
    sigma2: float
    admissible: bool
    passed_threshold: bool = False
    retained: bool = False
    reason: str = ""


@dataclass(frozen=True)
class ScreeningResult:
    """Per-candidate records, the retained ids (ranked) and their basis."""

    records: tuple
    retained: tuple
    basis: CovariateBasis
    theta: float = 0.0
    threshold: float = 0.0
    columns: tuple = field(default=(), repr=False)

    @property
    def Z(self) -> np.ndarray:
        return self.basis.Z


def screen_candidates(C, candidates, theta: float = 0.0, candidate_ids=None,
                      rtol: float = DEFAULT_RTOL) -> ScreeningResult:
    """Keep candidates that each explain at least ``theta * tr(C)`` on their own.

    Every column of ``candidates`` (``n x K``) is scored with the
    single-covariate closed form.  Columns that are inadmissible or fall
    below the threshold are dropped.  Survivors are ranked by ``beta2``
    (descending, ties in input order) and added greedily, each only if it
    raises the numerical rank of the growing covariate matrix.
    """
    C = as_covariance(C)
    n = C.n
    cand = np.asarray(candidates, dtype=float)
    if cand.ndim == 1:
        cand = cand[:, None]
    if cand.size == 0:
        cand = np.zeros((n, 0))
    if cand.shape[0] != n:
        raise ShapeError(f"candidates have {cand.shape[0]} rows, expected {n}")
    if theta < 0:
        raise ValueError(f"theta must be nonnegative, got {theta}")
    k = cand.shape[1]
    ids = tuple(candidate_ids) if candidate_ids is not None else tuple(
        f"candidate_{j + 1}" for j in range(k))
    if len(ids) != k:
        raise ShapeError(f"{len(ids)} candidate ids for {k} candidates")
    threshold = theta * C.trace

    scored = []
    for j in range(k):
        try:
            fit = screen_single_covariate(C, cand[:, j])
        except DegenerateCovariateError:
            scored.append(ScreeningRecord(ids[j], float("nan"), float("nan"), False,
                                          reason="zero covariate"))
            continue
        passed = fit.admissible and fit.beta2 >= threshold
        reason = "" if passed else ("inadmissible" if not fit.admissible else "below threshold")
        scored.append(ScreeningRecord(ids[j], fit.beta2, fit.sigma2, fit.admissible,
                                      passed_threshold=passed, reason=reason))

    survivors = [j for j in range(k) if scored[j].passed_threshold]
    survivors.sort(key=lambda j: -scored[j].beta2)  # stable: ties keep input order

    kept = []
    for j in survivors:
        trial = cand[:, kept + [j]]
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > rtol * s[0]:
            kept.append(j)
        else:
            scored[j] = replace(scored[j], reason="linearly dependent")
    for j in kept:
        scored[j] = replace(scored[j], retained=True)

    Z = cand[:, kept] if kept else np.zeros((n, 0))
    basis = CovariateBasis.from_covariates(Z, rtol=rtol) if kept else CovariateBasis.empty(n)
    return ScreeningResult(
        records=tuple(scored),
        retained=tuple(ids[j] for j in kept),
        basis=basis,
        theta=theta,
        threshold=threshold,
        columns=tuple(kept),
    )


def compute_pcs(raw, count: int, rtol: float = DEFAULT_RTOL) -> np.ndarray:
    """Top ``count`` unit-norm left singular vectors of the sample-centered ``raw``.

    Rows are samples.  Each row is centered across its columns first (a no-op
    for already-centered input).  Signs follow the largest-magnitude-positive
    convention.
    """
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2:
        raise ShapeError(f"raw matrix must be 2-D, got shape {raw.shape}")
    if count < 0:
        raise ValueError("count must be nonnegative")
    centered = raw - raw.mean(axis=1, keepdims=True)
    U, s, _ = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    if count > rank:
        raise RankError(
            f"requested {count} principal components but the centered matrix has rank {rank}",
            achievable=rank,
        )
    pcs, _ = sign_normalize(U[:, :count])
    return pcs
