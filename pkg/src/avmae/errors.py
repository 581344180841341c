"""Exception types shared across the package."""


class AvmaeError(Exception):
    """Base class for all package errors."""


class InvalidInput(AvmaeError):
    """An argument value violates a documented precondition."""


class ShapeError(AvmaeError):
    """Array dimensions are incompatible with the requested operation."""


class ConfigError(AvmaeError):
    """A configuration value or combination is invalid."""


class CheckpointError(AvmaeError):
    """A checkpoint is incompatible with the requested model."""


class CorruptCheckpoint(AvmaeError):
    """A checkpoint's blobs do not match its manifest."""


class ManifestError(AvmaeError):
    """A dataset manifest row is malformed or references missing data."""


class DivergedError(AvmaeError):
    """Training produced non-finite losses for too many consecutive steps."""
