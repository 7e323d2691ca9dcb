"""Exception taxonomy shared across the package.

Every error raised on a contract violation subclasses PseudoPairError so
callers (and the CLI) can catch one base class. Names mirror the condition,
not the module that raises them.
"""

from __future__ import annotations


class PseudoPairError(Exception):
    """Base class for all package-specific errors."""


class ZeroVectorError(PseudoPairError):
    """Vector norm below the representable floor (1e-12); cannot normalize."""


class KOutOfRangeError(PseudoPairError):
    """Requested top-K with K < 1 or K > available rows."""


class MOutOfRangeError(PseudoPairError):
    """Requested top-M prompts with M < 1 or M > candidate captions."""


class BadMagicError(PseudoPairError):
    """Embedding file does not start with the EMB1 magic."""


class DimMismatchError(PseudoPairError):
    """Declared dimension or id count disagrees with the data."""


class TruncatedFileError(PseudoPairError):
    """Embedding file ends before the declared payload."""


class NonFiniteValueError(PseudoPairError):
    """NaN or Inf encountered where finite floats are required."""


class EmptyCategoryError(PseudoPairError):
    """Vocabulary category has no words left after filtering."""


class MalformedJsonError(PseudoPairError):
    """JSON input could not be parsed or has the wrong shape."""


class MissingCategoryError(PseudoPairError):
    """Template references a category absent from the candidate words."""


class ArityMismatchError(PseudoPairError):
    """Word count does not match the template's category slot count."""


class ProviderFailureError(PseudoPairError):
    """Encoder provider returned an error or violated its contract."""


class IterOutOfRangeError(PseudoPairError):
    """Schedule queried outside [0, total_iters]."""


class ShapeMismatchError(PseudoPairError):
    """Matrix operands have incompatible shapes."""


class NotStochasticError(PseudoPairError):
    """Alignment matrix columns do not sum to one."""


class UnknownImageIdError(PseudoPairError):
    """Pairing references an image id absent from the image set."""


class DegeneratePairingError(PseudoPairError):
    """Pairing admits no text-text pairs of the requested kind."""


class MalformedHashError(PseudoPairError):
    """Content hash is not valid lowercase/uppercase hex of the right width."""
