"""Shared exception types."""


class FopError(Exception):
    """Base class for errors raised by this package."""


class FormatError(FopError):
    """A binary feature or checkpoint file violates its on-disk format."""


class CorpusError(FopError):
    """A manifest or audio file violates the corpus contract."""
