"""
Command-line pipeline
=====================

The ``reml-latent`` command runs the same steps on TSV files: ``fit``
writes parameter matrices, ``K`` and a JSON summary; ``correct`` reads
that directory back and writes a corrected expression matrix.
"""

import json
import tempfile
from pathlib import Path

import numpy as np

from reml_latent.cli import main
from reml_latent.io import write_matrix

rng = np.random.default_rng(5)
n, m = 40, 200
Y = np.outer(rng.normal(size=n), rng.normal(size=m)) + rng.normal(size=(n, m))
Z = rng.normal(size=(n, 2)) + Y[:, :2]
samples = [f"s{i}" for i in range(n)]

work = Path(tempfile.mkdtemp())
write_matrix(work / "expr.tsv", Y.T, [f"g{j}" for j in range(m)], samples, corner="gene")
write_matrix(work / "cov.tsv", Z, samples, ["age", "batch"])

main(["screen", "--expression", str(work / "expr.tsv"), "--covariates", str(work / "cov.tsv"),
      "--theta", "0"])
main(["fit", "--expression", str(work / "expr.tsv"), "--covariates", str(work / "cov.tsv"),
      "--rho", "0.4", "--out", str(work / "fit"), "--report-overlap"])
summary = json.loads((work / "fit" / "summary.json").read_text())
print("summary keys:", sorted(summary))
main(["correct", "--fit", str(work / "fit"), "--expression", str(work / "expr.tsv"),
      "--out", str(work / "corrected.tsv"), "--method", "subtract"])
print(sorted(p.name for p in (work / "fit").iterdir()))
