"""Document-layout corpora to multiple-instance image/text retrieval.

The package covers the whole path from raw layout JSON to retrieval metrics:
ingest, text-box merging, image/text bagging, near-duplicate image grouping,
embedding storage, adapter training with bag-aware contrastive losses, folded
splits, and recall evaluation.
"""

from docmil.errors import DocmilError

__all__ = ["DocmilError"]
__version__ = "0.1.0"
