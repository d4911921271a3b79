"""Exception types shared across the package.

Every failure mode callers are expected to branch on gets its own class;
anything else propagates as a plain ValueError / OSError.
"""


class StyleAdvError(Exception):
    """Base class for package-specific failures."""


class FormatError(StyleAdvError):
    """Bad magic or malformed header in a binary file."""


class CorruptFileError(StyleAdvError):
    """Header parsed but payload is inconsistent (wrong length, bad counts)."""


class TensorValidationError(StyleAdvError):
    """A tensor violates its domain contract (range, shape, finiteness)."""


class PreconditionError(StyleAdvError):
    """An operation's stated precondition does not hold for the given inputs."""


class BudgetExhaustedError(StyleAdvError):
    """The query budget ran out.

    `spent` counts queries consumed by the failing call before the limit hit
    (0 when the call was refused outright), `requested` what it asked for.
    """

    def __init__(self, message, spent=0, requested=1):
        super().__init__(message)
        self.spent = spent
        self.requested = requested


class QueryTransportError(StyleAdvError):
    """A remote classifier endpoint could not be reached or timed out."""


class ProtocolError(StyleAdvError):
    """A remote classifier answered with a malformed or mismatched message."""


class DivergenceError(StyleAdvError):
    """An optimization produced a non-finite loss; carries the iteration."""

    def __init__(self, message, iteration):
        super().__init__(message)
        self.iteration = iteration


class TrainingError(StyleAdvError):
    """Training failed to reach its accuracy bar within the retry allowance."""


class ConfigError(StyleAdvError):
    """A run configuration is unparseable, incomplete, or out of range."""
