"""
Known covariates with automatically chosen latent factors
=========================================================

Known sample covariates (batch, sex, ...) enter through ``Z``.  The latent
factors are fitted in the orthogonal complement of ``Z`` and their number is
picked from a target fraction ``rho`` of explained variance.
"""

import numpy as np

from reml_latent import CovariateBasis, FitConfig, fit_auto, sample_covariance
from reml_latent.io import center_samples
from reml_latent.selection import residual_variance_curve

rng = np.random.default_rng(1)
n, m = 60, 500

# two measured covariates and four hidden factors
Z = rng.normal(size=(n, 2))
H = rng.normal(size=(n, 4)) * np.array([2.0, 1.5, 1.0, 0.8])
Y = Z @ rng.normal(size=(2, m)) + H @ rng.normal(size=(4, m)) + rng.normal(size=(n, m))

expr = center_samples(Y)
C = sample_covariance(expr)
basis = CovariateBasis.from_covariates(Z)

###############################################################################
# The selection curve f(p): mean of the remaining reduced eigenvalues

f = residual_variance_curve(np.linalg.eigvalsh(basis.U2.T @ C.matrix @ basis.U2)[::-1])
print("f(0..7):", np.round(f[:8], 3))

for rho in (0.3, 0.6, 0.8):
    fit = fit_auto(C, basis, FitConfig(rho=rho))
    known, latent, resid = fit.variance_decomposition
    print(f"rho={rho}: p={fit.p}  sigma2={fit.sigma2:.3f}  "
          f"known={known:.3f} latent={latent:.3f} residual={resid:.3f}")

###############################################################################
# Latent factors are orthonormal and orthogonal to the known covariates

fit = fit_auto(C, basis, FitConfig(rho=0.8))
X = fit.latent
print("max |X^T Z|     ", np.abs(X.T @ Z).max())
print("max |X^T X - I| ", np.abs(X.T @ X - np.eye(fit.p)).max())

# recovered hidden factors versus the planted ones (canonical correlations)
Hp = H - Z @ np.linalg.lstsq(Z, H, rcond=None)[0]
qa, _ = np.linalg.qr(Hp)
print("canonical correlations:", np.round(np.linalg.svd(qa.T @ X, compute_uv=False), 3))
