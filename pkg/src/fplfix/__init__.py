"""Fixed-length fingerprint embeddings: extraction, comparison and evaluation.

Desk-scale toolkit built around classical extractors (Gabor texture bank and
minutiae hot-spot maps) that produce unit-norm fixed-length vectors, compared
by cosine similarity and evaluated with verification / closed-set
identification metrics.
"""

from fplfix.errors import DegenerateInputError, FormatError, ResolutionWarning

__version__ = "0.1.0"

__all__ = ["DegenerateInputError", "FormatError", "ResolutionWarning", "__version__"]
