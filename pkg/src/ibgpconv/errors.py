"""Exception hierarchy shared by every subsystem."""

from __future__ import annotations


class IbgpConvError(Exception):
    """Base class for all errors raised by this package."""


class ModelError(IbgpConvError):
    """Invalid topology or iBGP configuration."""


class ContractViolation(IbgpConvError):
    """A function was called with arguments that break its precondition."""


class NonConvergenceError(IbgpConvError):
    """The initial routing state has no fixed point within the iteration bound."""


class RunawayError(IbgpConvError):
    """A router queue grew beyond the configured bound."""


class ScenarioError(IbgpConvError):
    """Scenario file or event specification is inconsistent."""


class SampleInvalidError(IbgpConvError):
    """A sample failed its correctness checks (edges, delayers, capture drops)."""

    def __init__(self, message: str, check=None):
        super().__init__(message)
        self.check = check


class TraceFormatError(IbgpConvError):
    """Malformed trace line or unsupported format version."""

    def __init__(self, message: str, line_no: int | None = None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class IncompleteTraceError(TraceFormatError):
    """The trace has no terminating Summary record."""


class MalformedTraceError(IbgpConvError):
    """Trace content is inconsistent (e.g. duplicate observations)."""


class MappingError(IbgpConvError):
    """A trace references ids that the hardware mapping cannot resolve."""


class InconclusiveConvergenceError(IbgpConvError):
    """The trace ends inside the quiet window after the last BGP update."""
