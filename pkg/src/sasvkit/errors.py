"""Exception hierarchy shared by all modules.

The CLI maps :class:`InputError` to exit code 1 and :class:`NumericalError`
to exit code 2.
"""


class SasvError(Exception):
    pass


class InputError(SasvError):
    """Malformed, inconsistent or missing input data."""


class ProtocolError(InputError):
    pass


class EmbeddingError(InputError):
    pass


class ScoringError(InputError):
    pass


class MetricError(InputError):
    pass


class NumericalError(SasvError):
    """Non-finite values produced during optimisation."""
