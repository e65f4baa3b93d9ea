"""Error hierarchy for the extraction package."""


class AttnxtractError(Exception):
    """Base class for all extraction errors."""


class UnknownProfileError(AttnxtractError):
    """Requested extraction profile is not registered."""


class PromptError(AttnxtractError):
    """Prompt/annotation mismatch: phrase not found, bad class id, overlap."""


class CaptureError(AttnxtractError):
    """Captured activations violate the expected shapes or properties."""


class ImageError(AttnxtractError):
    """Input image cannot be read or has an unusable geometry."""
