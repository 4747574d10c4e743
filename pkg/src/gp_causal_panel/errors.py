"""Exception hierarchy for Gaussian-process panel inference."""


class GpCausalError(Exception):
    """Base class for all errors raised by this package."""


class PanelValidationError(GpCausalError, ValueError):
    """Panel data or panel CSV violates its contract."""


class ConfigError(GpCausalError, ValueError):
    """Invalid kernel, prior, likelihood, sampler or run configuration."""


class LikelihoodError(GpCausalError, ValueError):
    """Outcome values fall outside the support of the chosen likelihood."""


class NumericalError(GpCausalError, RuntimeError):
    """Factorisation, positive-definiteness or finiteness failure."""
