"""Export diffusion self-attention stacks in the ATNS container format."""

from .backbones import load_backbone
from .errors import ModelLoadFailure, ResolutionMismatch, TraceExportError
from .export import ExportJob, ImageRecord, export
from .hooks import AttentionTap

__version__ = "0.1.0"

__all__ = [
    "AttentionTap",
    "ExportJob",
    "ImageRecord",
    "ModelLoadFailure",
    "ResolutionMismatch",
    "TraceExportError",
    "export",
    "load_backbone",
]
