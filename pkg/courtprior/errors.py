"""
Defines the exception hierarchy shared by every part of the package.

Library functions raise these exceptions; the command-line interface turns them
into process exit codes and the HTTP routers turn them into `HTTPException`
responses.
"""


class CourtPriorError(Exception):
    """Base class for all errors raised by this package."""


class InvalidImageError(CourtPriorError):
    """An image has the wrong channel count, is too small, or a rect falls outside it."""


class InvalidParameterError(CourtPriorError):
    """A numeric parameter (threshold, sigma, density, curve...) is out of range."""


class DegenerateGeometryError(CourtPriorError):
    """A hull or polygon has too few distinct points for the requested operation."""


class CocoFormatError(CourtPriorError):
    """A COCO document is malformed or violates the schema."""


class CocoReferenceError(CocoFormatError):
    """An id is duplicated or an annotation references a missing image or category."""

    def __init__(self, message: str, annotation_id: int | None = None):
        super().__init__(message)
        self.annotation_id = annotation_id


class ImageLoadError(CourtPriorError):
    """An image file could not be found or decoded."""


class OutputWriteError(CourtPriorError):
    """An output file or directory could not be written."""


class ConfigError(CourtPriorError):
    """A configuration file is unreadable or contains invalid or unknown keys."""


class DocumentLoadError(CourtPriorError):
    """A JSON document (dataset, manifest, rect table, predictions) could not be read."""
