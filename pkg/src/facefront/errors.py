"""Exception hierarchy shared by the library and the command line."""


class FacefrontError(Exception):
    """Base class for all library errors."""


class DegenerateGeometryError(FacefrontError, ValueError):
    """Collinear, coincident or zero-area configurations."""


class DimensionError(FacefrontError, ValueError):
    """Array shapes or lengths that do not agree."""


class DataError(FacefrontError):
    """Malformed or unreadable input data."""


class StageError(FacefrontError):
    """A pipeline stage failed; ``stage`` is the tag used in yield accounting."""

    def __init__(self, stage, message):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
