"""
Screening candidate covariates
==============================

Each candidate is scored on its own by the variance ``beta2`` it would
explain.  Candidates are admitted greedily in decreasing ``beta2`` order,
skipping those that are linearly dependent on ones already admitted.
"""

import numpy as np

from reml_latent import compute_pcs, screen_candidates

C = np.diag([4.0, 1.0, 1.0])
e1, e2 = np.eye(3)[:, 0], np.eye(3)[:, 1]
res = screen_candidates(C, np.column_stack([e1, 2 * e1, e2]), theta=0.0,
                        candidate_ids=("e1", "2e1", "e2"))
for rec in res.records:
    print(f"{rec.candidate_id:4s} beta2={rec.beta2:7.3f} admissible={rec.admissible!s:5s} "
          f"retained={rec.retained!s:5s} {rec.reason or ''}")
print("retained:", res.retained)

###############################################################################
# Principal components of a raw covariate table as candidates

rng = np.random.default_rng(2)
raw = rng.normal(size=(30, 12)) @ np.diag(np.linspace(3, 0.2, 12))
pcs = compute_pcs(raw, 3)
print("PC Gram matrix:\n", np.round(pcs.T @ pcs, 12))

Y = rng.normal(size=(30, 300)) + np.outer(pcs[:, 0], rng.normal(size=300)) * 4
Y -= Y.mean(axis=1, keepdims=True)
C = Y @ Y.T / 300
res = screen_candidates(C, pcs, theta=0.01, candidate_ids=("PC1", "PC2", "PC3"))
print("retained with theta=0.01:", res.retained)
