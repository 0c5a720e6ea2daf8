"""Exception hierarchy shared across the package."""


class DynFeatError(Exception):
    """Base class for all package errors."""


class DegenerateProjection(DynFeatError):
    pass


class InvalidDepth(DynFeatError):
    pass


class ShapeError(DynFeatError):
    pass


class FormatError(DynFeatError):
    """Malformed or unsupported file content.

    ``offset`` is the byte offset at which parsing failed, when known.
    """

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        parts = [message]
        if offset is not None:
            parts.append(f"at byte {offset}")
        if path is not None:
            parts.append(f"in {path}")
        super().__init__(" ".join(parts))


class ConfigError(DynFeatError):
    pass


class TrackingLost(DynFeatError):
    """Too few static features to estimate a pose."""

    def __init__(self, message, n_features=None, frame=None):
        self.n_features = n_features
        self.frame = frame
        super().__init__(message)


class AssociationError(DynFeatError):
    pass


class DegenerateAlignment(DynFeatError):
    pass


class InsufficientLength(DynFeatError):
    pass
