"""Exception hierarchy shared by every module in the package.

All failure modes surface as typed subclasses of :class:`TraceEdgesError`;
nothing in the library raises bare asserts for malformed input.
"""


class TraceEdgesError(Exception):
    """Base class for all errors raised by trace-edges."""


class IoFailure(TraceEdgesError):
    """An underlying OS read/write failed."""


class FormatError(TraceEdgesError):
    """An on-disk payload is malformed or unreadable."""


class BadMagic(FormatError):
    """File does not start with the expected magic bytes."""


class UnsupportedVersion(FormatError):
    """Container version is not supported by this reader."""


class BadHeader(FormatError):
    """Raster header could not be parsed."""


class TruncatedPayload(FormatError):
    """Payload is shorter than the header declares."""


class NonStochastic(TraceEdgesError):
    """Attention rows deviate from unit sum beyond the repairable tolerance."""


class ShapeMismatch(TraceEdgesError):
    """Declared and actual shapes disagree, in a file or between arrays."""


class IncompatibleWidths(TraceEdgesError):
    """Block widths do not nest: the target width is not a multiple."""


class EmptyInput(TraceEdgesError):
    """An operation that needs at least one element received none."""


class LengthMismatch(TraceEdgesError):
    """Two probability rows have different lengths."""


class WidthMismatch(TraceEdgesError):
    """Two aggregated attention maps have different grid widths."""


class TooFewTimesteps(TraceEdgesError):
    """Step selection needs at least two timesteps."""


class TooSmall(TraceEdgesError):
    """Grid is too small for opposite-neighbour scoring."""


class DownscaleRequested(TraceEdgesError):
    """Upscaling was asked to shrink a raster."""


class DegenerateRow(TraceEdgesError):
    """A similarity row is constant; the softmax family collapses."""


class BadSplit(TraceEdgesError):
    """Two-region fixture split column lies outside the grid."""


class CategoryMismatch(TraceEdgesError):
    """A segment references a category with no known thing/stuff flag."""
