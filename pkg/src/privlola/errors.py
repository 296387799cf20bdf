"""Exception hierarchy shared by every stage of the toolchain."""

from __future__ import annotations


class SpecError(Exception):
    """Base class for user-facing specification errors.

    ``line``/``column`` are 1-based and may be ``None`` when the error is not
    tied to a source position (e.g. errors raised on programmatically built
    specifications).
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.message = message
        self.line = line
        self.column = column
        super().__init__(self._format())

    def _format(self) -> str:
        if self.line is None:
            return self.message
        return f"{self.line}:{self.column}: {self.message}"


class SpecSyntaxError(SpecError):
    def __init__(self, message, line=None, column=None, expected=(), token_index=None):
        self.expected = tuple(expected)
        self.token_index = token_index
        if self.expected:
            message = f"{message} (expected {', '.join(self.expected)})"
        super().__init__(message, line, column)


class InvalidOffset(SpecSyntaxError):
    pass


class DuplicateStream(SpecError):
    pass


class UnknownReference(SpecError):
    pass


class MissingRange(SpecError):
    pass


class MissingDefault(SpecError):
    """An output expression may evaluate to no value at one of its firings."""


class NoPublicOutput(SpecError):
    pass


# semantics
class IllegalCycle(SpecError):
    pass


class PacingMismatch(SpecError):
    pass


class WindowInEventBased(SpecError):
    pass


class UnresolvableInference(SpecError):
    pass


# sensitivity / privacy
class UnboundedInfluence(SpecError):
    pass


class PerturbationOutOfRange(SpecError):
    pass


class NoValidBarrier(SpecError):
    pass


class NotTreeRewritable(SpecError):
    pass


class EvaluationError(RuntimeError):
    """Internal contract violation inside the evaluator."""
