"""Error types shared across the library.

Every precondition or margin failure raises a subclass of TilealgError so the
CLI can map them to a uniform exit code.  Verifier *verdicts* (a check that ran
and failed) are reported in result objects instead; they do not raise.
"""

from __future__ import annotations


class TilealgError(Exception):
    """Base class for all library errors."""


class RuleInvalidError(TilealgError):
    """A substitution rule violates its consistency invariants."""

    def __init__(self, prototile: str, reason: str):
        self.prototile = prototile
        self.reason = reason
        super().__init__(f"rule invalid at prototile {prototile!r}: {reason}")


class CoverageError(TilealgError):
    """An inflation level is too small to cover the requested ball."""

    def __init__(self, msg: str, required_level: int | None = None):
        self.required_level = required_level
        super().__init__(msg)


class MarginError(TilealgError):
    """A counting operation would read outside the window's certified radius."""

    def __init__(self, msg: str, required_radius=None):
        self.required_radius = required_radius
        super().__init__(msg)


class OutOfWindowError(MarginError):
    """A puncture lacks the validity margin needed for the operation."""


class InconclusiveError(TilealgError):
    """An empirical search hit its cap without certifying or refuting."""


class PatchNotInHullError(TilealgError):
    """The requested patch class never occurs in the sampled hull."""


class UndefinedRatioError(TilealgError):
    """An invariance ratio was requested over an empty fibre."""


class CompositionError(TilealgError):
    """Arrows with mismatched endpoints cannot be composed."""


class EvenCoveringError(TilealgError):
    """A family fails the even-covering precondition it was declared with."""


class InvarianceError(TilealgError):
    """An approximate-invariance precondition fails; carries the worst fibre."""

    def __init__(self, msg: str, worst_unit=None, ratio=None):
        self.worst_unit = worst_unit
        self.ratio = ratio
        super().__init__(msg)


class LebesgueError(TilealgError):
    """Cover elements do not dominate the tower levels."""


class KappaViolationError(TilealgError):
    """The tile core is too small for the requested kappa."""

    def __init__(self, msg: str, measured=None):
        self.measured = measured
        super().__init__(msg)


class InternalConsistencyError(TilealgError):
    """A structural invariant that should hold by construction was violated."""


class PreconditionError(TilealgError):
    """Generic argument-validation failure."""
