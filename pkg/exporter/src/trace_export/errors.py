class TraceExportError(Exception):
    """Base class for exporter failures."""


class ModelLoadFailure(TraceExportError):
    """The requested backbone could not be constructed or loaded."""


class ResolutionMismatch(TraceExportError):
    """An image or latent does not fit the backbone's native geometry."""
