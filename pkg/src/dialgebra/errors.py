"""Kernel error types.

Every failure mode the kernel reports is a subclass of KernelError, so the
CLI can turn any of them into a diagnostic instead of a traceback.
"""

from __future__ import annotations


class KernelError(Exception):
    pass


class IndexMismatch(KernelError):
    """Endpoint or index-set mismatch between composed pieces."""


class NotFinite(KernelError):
    """An exhaustive check was requested on data without a finite enumeration."""


class BudgetExceeded(KernelError):
    """An enumeration or observation budget ran out before an exact answer.

    ``partial`` carries whatever approximant was computed; it is never a
    final answer.
    """

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial


class Undecidable(KernelError):
    """Equality/membership query exhausted its depth without a verdict."""


class StratificationError(KernelError):
    """A signature references itself through its own fixed point."""


class ScopeError(KernelError):
    pass


class PositivityError(KernelError):
    pass


class MutualDestructorError(KernelError):
    pass


class Unsupported(KernelError):
    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class PrerequisiteFailed(KernelError):
    """A principle's side condition failed; carries the failing probe."""

    def __init__(self, message: str, counterexample=None):
        super().__init__(message)
        self.counterexample = counterexample


class SyntaxErrorWithPos(KernelError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col
