"""Brute-force numerical maximization of the likelihood on small instances.

Used to check the closed-form solutions.  Nothing here calls the solver or
the core likelihood: the objective is re-derived from a batched eigendecomposition and
the parameters are unconstrained, so a shared bug is unlikely to hide.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .core import CovariateBasis, as_covariance
from .errors import EnumerationSizeError, ShapeError

MAX_ORACLE_N = 12
MAX_ENUMERATION = 10**6
_LOG_CLIP = 200.0
_FD_STEP = 1.5e-8


@dataclass(frozen=True)
class OracleResult:
    loglik: float
    K: np.ndarray
    converged: bool
    restarts: int
    best_restart: int
    values: tuple  # final objective of every restart, in seed order

    def __iter__(self):
        # allows ``loglik, K = oracle_maximize(...)``
        return iter((self.loglik, self.K))


class _Layout:
    """Slices of the flat parameter vector."""

    def __init__(self, n, d, p):
        self.n, self.d, self.p = n, d, p
        self.tril = np.tril_indices(d)
        sizes = [len(self.tril[0]), p, d * p, n * p, 1]
        self.bounds = np.cumsum([0] + sizes)
        self.size = int(self.bounds[-1])


def _covariances(layout, thetas, Z):
    """Covariance matrices for a stack of parameter vectors, shape ``(k, n, n)``."""
    n, d, p = layout.n, layout.d, layout.p
    b = layout.bounds
    k = thetas.shape[0]
    L = np.zeros((k, d, d))
    L[:, layout.tril[0], layout.tril[1]] = thetas[:, b[0]:b[1]]
    B = L @ L.transpose(0, 2, 1)
    sigma2 = np.exp(np.clip(thetas[:, b[4]], -_LOG_CLIP, _LOG_CLIP))
    if p:
        a = np.exp(np.clip(thetas[:, b[1]:b[2]], -_LOG_CLIP, _LOG_CLIP))
        D = thetas[:, b[2]:b[3]].reshape(k, d, p)
        X, _ = np.linalg.qr(thetas[:, b[3]:b[4]].reshape(k, n, p))
        # B = L L^T + D A^-1 D^T keeps the stacked [[B, D], [D^T, A]] PSD
        B = B + (D / a[:, None, :]) @ D.transpose(0, 2, 1)
        F = np.concatenate([np.broadcast_to(Z, (k, n, d)), X], axis=2)
        Psi = np.zeros((k, d + p, d + p))
        Psi[:, :d, :d] = B
        Psi[:, :d, d:] = D
        Psi[:, d:, :d] = D.transpose(0, 2, 1)
        Psi[:, np.arange(d, d + p), np.arange(d, d + p)] = a
    else:
        F = np.broadcast_to(Z, (k, n, d))
        Psi = B
    K = F @ Psi @ F.transpose(0, 2, 1)
    K = 0.5 * (K + K.transpose(0, 2, 1))
    K[:, np.arange(n), np.arange(n)] += sigma2[:, None]
    return K


def _neg_objectives(thetas, layout, Z, C):
    """``log det K + tr(K^-1 C)`` for each row of ``thetas``; 1e300 if K is not PD."""
    K = _covariances(layout, thetas, Z)
    vals, vecs = np.linalg.eigh(K)
    ok = vals[:, 0] > 0
    safe = np.where(ok[:, None], vals, 1.0)
    quad = np.sum(vecs * (C @ vecs), axis=1)
    out = np.sum(np.log(safe), axis=1) + np.sum(quad / safe, axis=1)
    out[~ok | ~np.isfinite(out)] = 1e300
    return out


def _fd_value_and_grad(theta, layout, Z, C):
    # forward differences, all perturbations evaluated as one batch
    h = _FD_STEP * np.maximum(1.0, np.abs(theta))
    stack = np.vstack([theta, theta + np.diag(h)])
    f = _neg_objectives(stack, layout, Z, C)
    return f[0], (f[1:] - f[0]) / h


def _start(rng, layout, scale):
    n, d, p = layout.n, layout.d, layout.p
    b = layout.bounds
    theta = np.zeros(layout.size)
    # around (tr C / n) I: B ~ s I, A ~ s, sigma2 ~ s, small D
    L0 = np.eye(d) * math.sqrt(scale) * np.exp(0.5 * rng.normal(size=d))
    L0 += np.tril(0.1 * math.sqrt(scale) * rng.normal(size=(d, d)), -1)
    theta[b[0]:b[1]] = L0[layout.tril]
    theta[b[1]:b[2]] = math.log(scale) + rng.normal(size=p)
    theta[b[2]:b[3]] = 0.1 * math.sqrt(scale) * rng.normal(size=d * p)
    theta[b[3]:b[4]] = rng.normal(size=n * p)
    theta[b[4]] = math.log(scale) + 0.5 * rng.normal()
    return theta


def oracle_maximize(C, basis: CovariateBasis, p: int, restarts: int = 16, seed: int = 0,
                    maxiter: int = 5000) -> OracleResult:
    """Maximize ``-log det K - tr(K^-1 C)`` numerically over all model parameters.

    ``B`` is parameterized by a lower-triangular factor, ``A`` by its log
    diagonal, ``D`` freely, ``X`` by QR orthonormalization of a free block and
    ``sigma2`` by its log.  Each of ``restarts`` seeded starts is refined with
    L-BFGS on forward-difference gradients; the best value wins.
    """
    C = as_covariance(C)
    n = C.n
    if n > MAX_ORACLE_N:
        raise EnumerationSizeError(f"oracle is limited to n <= {MAX_ORACLE_N}, got n={n}")
    if basis.n != n:
        raise ShapeError(f"basis has n={basis.n}, covariance has n={n}")
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    d = basis.d
    if p < 0 or d + p > n:
        raise ShapeError(f"need 0 <= p <= n - d, got p={p}, n={n}, d={d}")
    layout = _Layout(n, d, p)
    Z = basis.Z
    Cm = C.matrix
    scale = max(C.trace / n, 1e-12)
    rngs = [np.random.default_rng([seed, k]) for k in range(restarts)]

    best = None
    values = []
    for k, rng in enumerate(rngs):
        theta0 = _start(rng, layout, scale)
        res = optimize.minimize(
            _fd_value_and_grad, theta0, args=(layout, Z, Cm), jac=True, method="L-BFGS-B",
            options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-10, "maxfun": 50 * maxiter},
        )
        values.append(-float(res.fun))
        if best is None or res.fun < best[0].fun:
            best = (res, k)
    res, k = best
    K = _covariances(layout, res.x[None, :], Z)[0]
    return OracleResult(
        loglik=-float(res.fun),
        K=K,
        converged=bool(res.success),
        restarts=restarts,
        best_restart=k,
        values=tuple(values),
    )


def enumerate_axis_latents(C, basis: CovariateBasis, p: int):
    """All latent choices made of ``p`` columns of ``U2``, with their residual variance.

    Returns a list of ``(X, sigma2(X))``.  When ``C22`` is diagonal the
    minimum over this list is the global minimum of the residual variance.
    """
    C = as_covariance(C)
    n, d = basis.n, basis.d
    r = n - d
    if not 0 <= p <= r:
        raise ShapeError(f"p must lie in [0, {r}], got {p}")
    if p == r:
        raise EnumerationSizeError(
            f"p = n - d = {r} leaves no residual dimension; residual variance undefined"
        )
    count = math.comb(r, p)
    if count > MAX_ENUMERATION:
        raise EnumerationSizeError(
            f"{count} axis-aligned candidates exceed the limit {MAX_ENUMERATION}"
        )
    U2 = basis.U2
    c22_diag = np.einsum("ij,ik,kj->j", U2, C.matrix, U2)
    total = float(c22_diag.sum())
    out = []
    for subset in itertools.combinations(range(r), p):
        idx = list(subset)
        X = U2[:, idx].copy()
        out.append((X, (total - float(np.sum((C.matrix @ X) * X))) / (r - p)))
    return out
