"""Exception types shared across the pipeline.

Every error the CLI can surface has a distinct class so stage failures are
machine-parsable from a single stderr line.
"""


class DocmilError(Exception):
    """Base class for all pipeline errors."""


# layout ingestion

class SchemaError(DocmilError):
    """Input layout JSON violates the documented schema."""


class DuplicateId(DocmilError):
    """An id that must be unique appears twice."""


class EmptyDocument(DocmilError):
    """A layout document contains no pages."""


# configs

class ConfigError(DocmilError):
    """A configuration value violates its invariant."""


# dedup

class RasterLoadError(DocmilError):
    """A raster file could not be loaded as 8-bit grayscale."""


class MissingFeature(DocmilError):
    """Feature prefilter enabled but an image id has no feature vector."""


class PartitionMismatch(DocmilError):
    """Identity groups do not partition the manifest's image ids."""


# embedding store

class FormatError(DocmilError):
    """Embedding store bytes have a wrong magic or version."""


class TruncatedFile(DocmilError):
    """Embedding store bytes end before the declared content."""


class ZeroNormRow(DocmilError):
    """A row with zero L2 norm cannot be normalized."""


# losses / adapters / training

class BagSizeError(DocmilError):
    """A loss that requires single-text bags received a larger bag."""


class DimMismatch(DocmilError):
    """Vector dimension does not match the adapter dimension."""


class MissingEmbedding(DocmilError):
    """A manifest id has no row in the embedding store."""


class EmptySplit(DocmilError):
    """A split selects no training units."""


# splits

class TooFewDocuments(DocmilError):
    """A manufacturer has fewer documents than the fold count."""


# cli

class MissingArtifact(DocmilError):
    """A stage's input artifact has not been produced yet."""
