"""
Checking the closed form against brute-force optimisation
=========================================================

The oracle maximises the log-likelihood over every parameter numerically,
from many seeded starts.  With no known covariates the two agree to
optimiser precision.  With random known covariates the numerical optimum
can be higher, because the closed form always takes the top eigenvectors
of the reduced covariance as latent subspace.
"""

import numpy as np

from reml_latent import CovariateBasis, fit_full, oracle_maximize, sample_covariance
from reml_latent.io import center_samples

rng = np.random.default_rng(3)
n, m = 6, 100
Y = rng.normal(size=(n, m)) * np.linspace(2.5, 0.8, n)[:, None]
C = sample_covariance(center_samples(Y))

for label, basis in [
    ("no covariates", CovariateBasis.empty(n)),
    ("top principal axis", CovariateBasis.from_covariates(np.linalg.eigh(C.matrix)[1][:, -1:])),
    ("random covariate", CovariateBasis.from_covariates(rng.normal(size=(n, 1)))),
]:
    try:
        fit = fit_full(C, basis, 1)
    except Exception as exc:  # existence conditions may fail for random draws
        print(f"{label:20s} no closed-form fit: {exc}")
        continue
    res = oracle_maximize(C, basis, 1, restarts=16, seed=0)
    print(f"{label:20s} analytic {fit.loglik:.8f}  oracle {res.loglik:.8f}  "
          f"gap {fit.loglik - res.loglik:+.2e}")
