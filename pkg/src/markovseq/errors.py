"""Exception types raised across the package."""


class MarkovSeqError(Exception):
    """Base class for all errors raised by markovseq."""


class DataError(MarkovSeqError, ValueError):
    """Malformed or inconsistent input data."""


class ModelError(MarkovSeqError, ValueError):
    """Invalid model parameters or mismatched dimensions."""


class EstimationError(MarkovSeqError, RuntimeError):
    """An estimation round could not produce a finite result."""


class SingularHessianError(EstimationError):
    """The Newton step for the cluster-membership coefficients hit a singular Hessian."""

    def __init__(self, message: str = "Estimation of gamma coefficients failed due to singular Hessian."):
        super().__init__(message)


class ThresholdError(MarkovSeqError, ValueError):
    """Graph thresholds violate 0 <= minimum <= cut <= 1."""
