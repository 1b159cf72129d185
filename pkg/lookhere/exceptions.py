"""
Exception types raised by the LookHere toolkit.
"""


class LookHereError(Exception):
    """Base class for toolkit failures."""


class InvalidArgumentError(LookHereError, ValueError):
    """An argument violates an operation's precondition."""


class InternalError(LookHereError, RuntimeError):
    """A state that the construction invariants should make impossible."""


class CommandError(LookHereError):
    """
    Failure surfaced by a CLI command.

    Carries the process exit code (2 = validation, 3 = runtime) and a
    human readable detail, the way an HTTP error carries status + detail.
    """

    def __init__(self, exit_code: int, detail: str):
        super().__init__(detail)
        self.exit_code = exit_code
        self.detail = detail
