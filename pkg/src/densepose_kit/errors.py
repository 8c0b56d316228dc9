"""Exception types.

``InputError`` subclasses describe bad user input (malformed files, invalid
configuration, arguments outside a function's domain). Everything else that
derives from ``DensePoseKitError`` signals a broken internal invariant.
"""


class DensePoseKitError(Exception):
    pass


class InputError(DensePoseKitError, ValueError):
    pass


class NoLabeledKeypoints(InputError):
    """Raised when a pose has no keypoint with visibility > 0."""


class InvalidLevel(InputError):
    pass


class TooFewKeypoints(InputError):
    pass


class ShapeMismatch(InputError):
    pass


class OutOfRange(InputError):
    pass


class ParseError(InputError):
    pass


class SchemaError(InputError):
    pass


class LengthError(SchemaError):
    """Keypoint array length is not 3K."""


class UnknownImageId(InputError):
    pass


class InvalidConfig(InputError):
    pass


class NoPositives(DensePoseKitError):
    """A training strategy selected an empty positive set.

    ``model`` holds whatever was fitted before the empty stage, if anything.
    """

    def __init__(self, message: str, model=None):
        super().__init__(message)
        self.model = model


class EmptyPositiveSetWarning(UserWarning):
    pass
