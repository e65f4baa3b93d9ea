"""Exception hierarchy shared across the package.

Loader and pipeline errors all derive from AttnsegError so the CLI can map
validation failures to exit code 1 and leave genuine I/O errors (OSError)
to exit code 2.
"""


class AttnsegError(Exception):
    """Base class for all validation and pipeline errors."""


class InvalidShapeError(AttnsegError):
    """Tensor shape is empty, mismatched, or otherwise unusable."""


class InvalidValueError(AttnsegError):
    """Tensor payload contains NaN/Inf (corrupt dump, rejected at construction)."""


class MissingFileError(AttnsegError):
    """A file referenced by a bundle manifest does not exist."""


class ManifestSchemaError(AttnsegError):
    """manifest.json is malformed or violates the documented schema."""


class ShapeMismatchError(AttnsegError):
    """A tensor file's byte count disagrees with its manifest shape."""


class NonStochasticRowsError(AttnsegError):
    """An attention map row does not sum to 1 within tolerance."""


class UnknownClassIdError(AttnsegError):
    """A token references a class_id that is not declared."""


class NoContentTokensError(AttnsegError):
    """The token table holds no content tokens, so no class columns exist."""


class InvalidScoresError(AttnsegError):
    """Scores violate a stage precondition (e.g. negative before rescaling)."""


class UnsupportedError(AttnsegError):
    """Requested output cannot be represented (e.g. class index >= 256 in PGM)."""


class InvalidSpecError(AttnsegError):
    """A fixture spec is inconsistent or its planted structure did not survive."""
