class ExportError(Exception):
    """Base for everything this package raises on purpose."""


class EncoderLoadError(ExportError):
    """The requested encoder name is not available locally."""


class MissingRaster(ExportError):
    """An image referenced by a manifest has no readable pixel file."""


class CorpusError(ExportError):
    """Manifest or layout files are missing, unreadable, or inconsistent."""
