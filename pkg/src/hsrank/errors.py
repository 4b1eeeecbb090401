"""Exception types shared across the package."""


class HsrankError(Exception):
    """Base class for all errors raised by this package."""


class ContractViolation(HsrankError, ValueError):
    """A caller broke an operation's precondition (shapes, domains, modes)."""


class ValidationError(HsrankError, ValueError):
    """A record or dataset violates its invariants (names the offender)."""


class FormatError(HsrankError, ValueError):
    """A file is not a valid LRFD/LRCK artifact (magic, version, structure)."""


class CorruptionError(FormatError):
    """A file is structurally truncated or inconsistent.

    ``offset`` is the byte position at which parsing failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class GradCheckError(HsrankError, RuntimeError):
    """A finite-difference probe hit a non-finite function value."""


class TrainingError(HsrankError, RuntimeError):
    """Training could not proceed (e.g. the group filter left no data)."""


class EvaluationError(HsrankError, RuntimeError):
    """Evaluation could not proceed on the given inputs."""
