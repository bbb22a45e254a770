"""Exception hierarchy.

Every error carries a short machine-readable ``category`` that the command
line maps onto exit codes.
"""


class RemlLatentError(Exception):
    category = "error"


class ShapeError(RemlLatentError, ValueError):
    category = "shape"


class CenteringRequiredError(RemlLatentError, ValueError):
    category = "centering-required"


class NotPositiveDefiniteError(RemlLatentError, ValueError):
    category = "not-positive-definite"

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ModelConditionError(RemlLatentError):
    """A mathematical precondition of a closed-form solution does not hold."""

    category = "model-condition"


class ExistenceConditionError(ModelConditionError):
    """lambda_min(C11) does not exceed the residual variance.

    ``condition`` is ``"known-only"`` when the residual variance is the
    average of the reduced spectrum (no latent factors) and ``"full"`` when
    it comes from a fit with latent factors.  ``"joint"`` means the weaker
    condition on ``C11`` holds but the covariance compressed onto the known
    and latent factors together still has an eigenvalue below the residual
    variance, so the joint effect covariance would be indefinite.
    """

    category = "existence-condition"

    def __init__(self, message, lambda_min, sigma2, condition):
        super().__init__(message)
        self.lambda_min = lambda_min
        self.sigma2 = sigma2
        self.condition = condition


class DegenerateSpectrumError(ModelConditionError):
    """Eigenvalues beyond the latent cut are all tied with the cut itself."""

    category = "degenerate-spectrum"


class IrreducibleCovariateError(ModelConditionError):
    category = "irreducible-covariates"


class DegenerateCovariateError(RemlLatentError, ValueError):
    category = "degenerate-covariate"


class ConstraintViolationError(RemlLatentError, ValueError):
    category = "constraint-violation"


class RankError(RemlLatentError, ValueError):
    category = "rank"

    def __init__(self, message, achievable=None):
        super().__init__(message)
        self.achievable = achievable


class EnumerationSizeError(RemlLatentError, ValueError):
    category = "enumeration-size"


class ParseError(RemlLatentError, ValueError):
    category = "parse"

    def __init__(self, message, path=None, row=None, column=None):
        super().__init__(message)
        self.path = path
        self.row = row
        self.column = column


class SingularGeneCovarianceError(RemlLatentError, ValueError):
    """Both variance weights of a gene are zero."""

    category = "singular-gene-covariance"

    def __init__(self, message, gene=None):
        super().__init__(message)
        self.gene = gene


class DegeneratePredictorError(RemlLatentError, ValueError):
    category = "degenerate-predictor"
