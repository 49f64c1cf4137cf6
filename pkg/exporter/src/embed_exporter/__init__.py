"""Standalone exporter: corpus files in, embedding store files out.

Reads bag manifests and layout documents from disk, encodes every
referenced image and text with a named local dual encoder, and writes
the binary store files the training pipeline consumes. Talks to the
pipeline only through those file formats.
"""

from embed_exporter.errors import (
    EncoderLoadError,
    ExportError,
    MissingRaster,
)
from embed_exporter.export import ExportJob, run_export

__all__ = ["EncoderLoadError", "ExportError", "ExportJob",
           "MissingRaster", "run_export"]
__version__ = "0.1.0"
