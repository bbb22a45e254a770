"""
Probabilistic PCA as the no-covariate special case
==================================================

With no known covariates the model reduces to probabilistic PCA, whose
maximum-likelihood covariance keeps the top ``p`` eigenpairs of ``C`` and
averages the rest into an isotropic noise term.
"""

import numpy as np

from reml_latent import CovariateBasis, fit_full, fit_ppca

rng = np.random.default_rng(0)

# simulate 8 samples with a decaying spectrum, 200 genes
n, m = 8, 200
Q, _ = np.linalg.qr(rng.normal(size=(n, n)))
Y = Q @ (np.linspace(3, 0.5, n)[:, None] * rng.normal(size=(n, m)))
Y -= Y.mean(axis=1, keepdims=True)
C = Y @ Y.T / m

###############################################################################
# Closed-form fit for two latent factors

ppca = fit_ppca(C, 2)
print("sigma2     ", ppca.sigma2)
print("A          ", np.diag(ppca.A))
print("profile ll ", ppca.profile_loglik())

###############################################################################
# The same through the general solver, and the projector form of K

fit = fit_full(C, CovariateBasis.empty(n), 2)
vals, vecs = np.linalg.eigh(C)
top = vecs[:, -2:]
P1 = top @ top.T
K_ref = P1 @ C @ P1 + fit.sigma2 * (np.eye(n) - P1)
print("|K - ref| / |ref| =", np.linalg.norm(fit.K - K_ref) / np.linalg.norm(K_ref))

###############################################################################
# Known covariates that are themselves top eigenvectors shift the curve:
# d known plus p latent has the same likelihood as d + p latent factors.

Z = vecs[:, -1:]
shifted = [fit_full(C, CovariateBasis.from_covariates(Z), p).loglik for p in range(1, 5)]
plain = [fit_full(C, CovariateBasis.empty(n), p + 1).loglik for p in range(1, 5)]
for p, (a, b) in enumerate(zip(shifted, plain), start=1):
    print(f"p={p}: one known + p latent {a:.10f}   p+1 latent {b:.10f}")
