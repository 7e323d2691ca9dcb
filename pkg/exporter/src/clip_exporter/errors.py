class ModelLoadFailure(Exception):
    """The requested model backend cannot be constructed."""


class UnreadableImage(Exception):
    """An input image cannot be read or decoded; callers skip and report."""
