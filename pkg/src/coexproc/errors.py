"""Exception types shared across the package."""


class CoexError(Exception):
    """Base class for package errors."""


class InvalidInputError(CoexError, ValueError):
    pass


class NotPSDError(CoexError, ValueError):
    pass


class InvalidBeliefsError(CoexError, ValueError):
    """A joint second-order specification is not a valid covariance."""


class DegenerateEnsembleError(CoexError, ValueError):
    """Ensemble members carry no spread to estimate a covariance from."""


class SchemaError(CoexError, ValueError):
    """An input file or config does not match its declared layout."""


class ConditioningWarning(UserWarning):
    """An observation covariance is close to singular."""


class ParseError(SchemaError):
    """A value in an input file could not be read as a finite number."""


class StageError(CoexError):
    """A pipeline stage failed; ``cause`` holds the original exception."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
