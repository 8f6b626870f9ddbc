"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`ArgoCovError`.
The CLI maps the families below to process exit codes.
"""


class ArgoCovError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(ArgoCovError, ValueError):
    pass


class OutOfDomainError(ArgoCovError, ValueError):
    pass


class InsufficientDataError(ArgoCovError):
    pass


class DegenerateVarianceError(ArgoCovError):
    pass


class DegenerateDesignError(ArgoCovError):
    pass


class NotPositiveDefiniteError(ArgoCovError):
    pass


class FitFailedError(ArgoCovError):
    """Optimizer could not produce a finite objective.

    ``best`` carries whatever best-so-far state was reached (may be None).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class IngestionError(ArgoCovError):
    pass


class ConfigError(ArgoCovError):
    pass


class ModelFileError(ArgoCovError):
    pass
