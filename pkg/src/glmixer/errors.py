"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError -> 2,
NumericalError -> 3, I/O failures -> 4.
"""


class GlmixerError(Exception):
    """Base class for all glmixer errors."""


class ValidationError(GlmixerError):
    """Bad input data, bad configuration, or a violated invariant."""


class SpecMismatchError(ValidationError):
    """A fit artifact and the supplied data disagree on the model spec."""


class NumericalError(GlmixerError):
    """A numerical routine failed (factorization, quadrature, ...)."""
