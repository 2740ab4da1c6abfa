"""Exception hierarchy shared by the interpreters, checkers and runtime."""

from __future__ import annotations


class RevCSPError(Exception):
    """Base class for every error raised by this package."""


class ParseError(RevCSPError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line is not None else ""
        super().__init__(f"{where}{message}")


class Stuck(RevCSPError):
    """Evaluation reached an ill-typed redex (e.g. applying an integer)."""


class NotEnabled(RevCSPError):
    """A rule's guard does not hold in the given configuration."""


class BadTime(NotEnabled):
    """A timestamp parameter violates the rule's ordering constraint."""


class EmptyStack(NotEnabled):
    """The rule needs a stack frame but the context stack is empty."""


class WrongEndpoint(NotEnabled):
    """A process acted on a channel end it does not own."""


class UnmappableState(RevCSPError):
    """A low-level state has no image under the refinement mapping."""


class RefinementViolation(RevCSPError):
    def __init__(self, message: str, step=None, before=None, after=None, path=None):
        super().__init__(message)
        self.step = step
        self.before = before
        self.after = after
        self.path = path or []


class BoundsTooLarge(RevCSPError):
    """Exploration exceeded the configured state cap."""


class NotQuiescent(RevCSPError):
    """A runtime snapshot was requested while execution units were active."""


class SpawnFailure(RevCSPError):
    pass


class ObligationViolation(RevCSPError):
    """A proof obligation the low-level rules rely on was found false."""
