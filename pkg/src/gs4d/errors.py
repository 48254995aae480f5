"""Exception types shared across the engine."""


class Gs4dError(Exception):
    """Base class for all engine errors."""


class ParameterError(Gs4dError, ValueError):
    """Invalid argument value or inconsistent input shapes."""


class FormatError(Gs4dError, ValueError):
    """Malformed file content (PLY / checkpoint / dataset / config)."""


class DegenerateCovarianceError(Gs4dError):
    """Covariance too close to singular for a stable inverse."""


class ContractError(Gs4dError):
    """An API precondition was violated (e.g. stale render context)."""


class NumericalError(Gs4dError):
    """NaN or Inf encountered where a finite value is required."""


class TrainingError(Gs4dError):
    """Unrecoverable training-state failure (e.g. all Gaussians pruned)."""


class PriorUnavailableError(Gs4dError):
    """The diffusion prior could not be reached; the SDS term is skipped."""


class ProtocolError(Gs4dError):
    """The prior server returned a response violating the wire protocol."""
