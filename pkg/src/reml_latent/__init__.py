"""Closed-form restricted maximum likelihood for known and latent variance components."""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    CovarianceParams,
    CovariateBasis,
    ExpressionMatrix,
    FitConfig,
    ModelFit,
    SampleCovariance,
    assemble_K,
    log_likelihood,
    overlap_transform,
    sample_covariance,
)
from .downstream import (  # noqa: E402
    GeneVarianceFit,
    correct_residuals,
    fit_all_gene_variances,
    fit_gene_variances,
    linear_association,
    lod_score,
    remove_confounding,
)
from .io import center_samples, read_fit, read_matrix, write_fit, write_matrix  # noqa: E402
from .oracle import enumerate_axis_latents, oracle_maximize  # noqa: E402
from .screening import ScreeningResult, compute_pcs, screen_candidates  # noqa: E402
from .selection import fit_auto, select_p, target_sigma2  # noqa: E402
from .solver import (  # noqa: E402
    ReducedSpectrum,
    fit_full,
    fit_known_only,
    fit_latent_restricted,
    fit_ppca,
    reduced_spectrum,
    screen_single_covariate,
    unexplained_variance,
)

__all__ = [
    "CovarianceParams",
    "CovariateBasis",
    "ExpressionMatrix",
    "FitConfig",
    "GeneVarianceFit",
    "ModelFit",
    "ReducedSpectrum",
    "SampleCovariance",
    "ScreeningResult",
    "assemble_K",
    "center_samples",
    "compute_pcs",
    "correct_residuals",
    "enumerate_axis_latents",
    "fit_all_gene_variances",
    "fit_auto",
    "fit_full",
    "fit_gene_variances",
    "fit_known_only",
    "fit_latent_restricted",
    "fit_ppca",
    "linear_association",
    "lod_score",
    "log_likelihood",
    "oracle_maximize",
    "overlap_transform",
    "read_fit",
    "read_matrix",
    "reduced_spectrum",
    "remove_confounding",
    "sample_covariance",
    "screen_candidates",
    "screen_single_covariate",
    "select_p",
    "target_sigma2",
    "unexplained_variance",
    "write_fit",
    "write_matrix",
]
