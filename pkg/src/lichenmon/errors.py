"""Exception hierarchy.

Everything a caller can recover from or report derives from
:class:`LichenmonError`; the CLI maps these to exit code 1.
"""


class LichenmonError(Exception):
    """Base class for domain errors."""


class GeometryError(LichenmonError):
    pass


class DegeneratePolygonError(GeometryError):
    pass


class InvalidGeometryError(GeometryError):
    pass


class CorruptRleError(GeometryError):
    pass


class ShapeMismatchError(GeometryError):
    pass


class ValidationError(LichenmonError):
    pass


class IntegrityError(ValidationError):
    """Dangling or inconsistent references inside a dataset."""

    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)


class ParseError(LichenmonError):
    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class QualityError(LichenmonError):
    pass


class SplitError(LichenmonError):
    pass


class OrderingError(LichenmonError):
    pass


class ParameterError(LichenmonError):
    pass


class PlacementError(LichenmonError):
    pass


class IncompatibleResultsError(LichenmonError):
    def __init__(self, message, fields=()):
        super().__init__(message)
        self.fields = list(fields)


class InvalidCropError(ValidationError):
    pass
